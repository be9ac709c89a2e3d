//! Watermark extractor: a convolutional stack over an 8×8 grid.
//!
//! The input image is folded into an `8 × 8 × 768` map by space-to-depth
//! (block = cover patch size), bridged to 48 channels by a learned 1×1
//! convolution, expanded through 64/128/256-filter convolutions with
//! dropout, widened by a channel-wise projection and reduced to one channel
//! by 128/64/32/8/1-filter convolutions.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{shape_err, Result};
use crate::network::impl_network;
use crate::nn::{dropout, Conv2d, ConvCache, DropoutMask, Gelu, Linear, Mode};
use crate::params::{Gradients, ParamBuilder, ParameterStore};
use crate::tensor::{depth_to_space, space_to_depth, ImageTensor, Real};
use crate::watermark::WatermarkBits;

#[derive(Clone, Debug)]
pub struct Extractor<T> {
    cfg: ModelConfig,
    store: ParameterStore<T>,
    bridge: Conv2d,
    expand: Vec<Conv2d>,
    fc: Linear,
    reduce: Vec<Conv2d>,
}

impl_network!(Extractor);

pub struct ExtractorCache<T> {
    bridge: ConvCache<T>,
    expand: Vec<(ConvCache<T>, Array3<T>, DropoutMask<T, ndarray::Ix3>)>,
    fc_in: Array2<T>,
    fc_pre: Array2<T>,
    reduce: Vec<(ConvCache<T>, Array3<T>)>,
}

impl<T: Real> Extractor<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let ex = &cfg.extractor;
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut b = b.scope("extractor");
        let bridge = Conv2d::build(&mut b, "bridge", cfg.cover_token_dim(), ex.input_channels, 1)?;
        let mut cin = ex.input_channels;
        let mut expand = Vec::new();
        for (i, &f) in ex.expand_filters.iter().enumerate() {
            expand.push(Conv2d::build(&mut b, &format!("expand{i}"), cin, f, ex.kernel)?);
            cin = f;
        }
        let fc = Linear::build(&mut b, "fc", cin, ex.fc_units)?;
        cin = ex.fc_units;
        let mut reduce = Vec::new();
        for (i, &f) in ex.reduce_filters.iter().enumerate() {
            reduce.push(Conv2d::build(&mut b, &format!("reduce{i}"), cin, f, ex.kernel)?);
            cin = f;
        }
        Ok(Self {
            cfg: cfg.clone(),
            store,
            bridge,
            expand,
            fc,
            reduce,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Real-valued `wm_size × wm_size` grid before thresholding.
    pub fn forward<R: Rng>(
        &self,
        x: &ImageTensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<T>, ExtractorCache<T>)> {
        let want = (self.cfg.image_size, self.cfg.image_size, self.cfg.image_channels);
        if x.shape() != want {
            return Err(shape_err!("extractor input must be {want:?}, got {:?}", x.shape()));
        }
        let st = &self.store;
        let folded = space_to_depth(x, self.cfg.patch_cover)?;
        let (mut h, bridge) = self.bridge.forward(st, folded.data())?;

        let mut expand = Vec::with_capacity(self.expand.len());
        for layer in &self.expand {
            let (pre, c) = layer.forward(st, &h)?;
            let act = Gelu::forward(&pre);
            let (out, mask) = dropout(&act, self.cfg.dropout_rate, mode, rng)?;
            expand.push((c, pre, mask));
            h = out;
        }

        let (g, _, ch) = h.dim();
        let fc_in = h.into_shape_with_order((g * g, ch)).map_err(|e| shape_err!("{e}"))?;
        let fc_pre = self.fc.forward(st, &fc_in)?;
        let mut h = Gelu::forward(&fc_pre)
            .into_shape_with_order((g, g, self.fc.out_dim))
            .map_err(|e| shape_err!("{e}"))?;

        let mut reduce = Vec::with_capacity(self.reduce.len());
        let last = self.reduce.len() - 1;
        for (i, layer) in self.reduce.iter().enumerate() {
            let (pre, c) = layer.forward(st, &h)?;
            h = if i < last { Gelu::forward(&pre) } else { pre.clone() };
            reduce.push((c, pre));
        }
        let grid = depth_to_space(&ImageTensor::new(h)?, self.cfg.patch_wm)?;
        let side = self.cfg.wm_size;
        let logits = grid
            .into_data()
            .into_shape_with_order((side, side))
            .map_err(|e| shape_err!("{e}"))?;
        Ok((
            logits,
            ExtractorCache {
                bridge,
                expand,
                fc_in,
                fc_pre,
                reduce,
            },
        ))
    }

    pub fn extract_logits<R: Rng>(&self, x: &ImageTensor<T>, mode: Mode, rng: &mut R) -> Result<Array2<T>> {
        Ok(self.forward(x, mode, rng)?.0)
    }

    /// Eval-mode extraction thresholded at 0.5.
    pub fn extract_bits(&self, x: &ImageTensor<T>) -> Result<WatermarkBits> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        WatermarkBits::from_logits(&self.extract_logits(x, Mode::Eval, &mut rng)?)
    }

    /// Returns the gradient with respect to the input image.
    pub fn backward(&self, cache: &ExtractorCache<T>, d_logits: &Array2<T>, grads: &mut Gradients<T>) -> Array3<T> {
        let st = &self.store;
        let side = self.cfg.wm_size;
        let d_grid = ImageTensor::new(d_logits.clone().into_shape_with_order((side, side, 1)).expect("logit grad"))
            .expect("logit grad");
        let mut d = space_to_depth(&d_grid, self.cfg.patch_wm).expect("logit grad").into_data();

        let last = self.reduce.len() - 1;
        for (i, (layer, (c, pre))) in self.reduce.iter().zip(&cache.reduce).enumerate().rev() {
            if i < last {
                d = Gelu::backward(pre, &d);
            }
            d = layer.backward(st, c, &d, grads);
        }

        let (g, _, ch) = d.dim();
        let d2 = d.into_shape_with_order((g * g, ch)).expect("fc grad");
        let d2 = Gelu::backward(&cache.fc_pre, &d2);
        let d_fc_in = self.fc.backward(st, &cache.fc_in, &d2, grads);
        let mut d = d_fc_in
            .into_shape_with_order((g, g, self.fc.in_dim))
            .expect("fc grad");

        for (layer, (c, pre, mask)) in self.expand.iter().zip(&cache.expand).rev() {
            d = mask.backward(d);
            d = Gelu::backward(pre, &d);
            d = layer.backward(st, c, &d, grads);
        }
        let d = self.bridge.backward(st, &cache.bridge, &d, grads);
        depth_to_space(&ImageTensor::new(d).expect("bridge grad"), self.cfg.patch_cover)
            .expect("bridge grad")
            .into_data()
    }
}
