//! Watermark embedding networks.
//!
//! [`Embedder`] fuses the cover and the watermark with two cross-attention
//! layers: cover tokens attend over watermark tokens and watermark tokens
//! attend over cover tokens. Each attention output is added back to its own
//! branch, the two branches are concatenated token by token and a
//! channel-wise projection maps every token back to a cover patch.
//!
//! [`ConvEmbedder`] is the convolutional comparison model: the watermark is
//! upsampled, stacked onto the cover channels and run through a short
//! same-padded convolution stack.

use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{shape_err, Result};
use crate::network::{impl_network, Network};
use crate::nn::{AttentionCache, Conv2d, ConvCache, Gelu, Linear, MultiHeadAttention};
use crate::params::{Gradients, ParamBuilder, ParamId, ParameterStore};
use crate::tensor::{patchify, tokens_to_image, ImageTensor, PatchGrid, Real};
use crate::watermark::WatermarkBits;

/// How gradients pass through the output clamp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampGrad {
    /// Derivative of the clamp itself: zero where the clamp is active.
    Exact,
    /// Pass the gradient through unchanged.
    #[default]
    StraightThrough,
}

fn clamp_backward<T: Real>(pre: &Array3<T>, d: &Array3<T>, mode: ClampGrad) -> Array3<T> {
    match mode {
        ClampGrad::StraightThrough => d.clone(),
        ClampGrad::Exact => {
            let mut out = d.clone();
            out.zip_mut_with(pre, |g, &p| {
                if p < T::zero() || p > T::one() {
                    *g = T::zero();
                }
            });
            out
        }
    }
}

/// Common surface of the two embedders so the training loop can swap them.
pub trait WatermarkEmbedder<T: Real>: Network<T> {
    type Cache;

    fn config(&self) -> &ModelConfig;

    fn forward(&self, cover: &ImageTensor<T>, wm: &WatermarkBits) -> Result<(ImageTensor<T>, Self::Cache)>;

    /// `d_marked` is the gradient with respect to the clamped output.
    fn backward(&self, cache: &Self::Cache, d_marked: &Array3<T>, clamp: ClampGrad, grads: &mut Gradients<T>);

    fn embed(&self, cover: &ImageTensor<T>, wm: &WatermarkBits) -> Result<ImageTensor<T>> {
        Ok(self.forward(cover, wm)?.0)
    }
}

fn check_inputs<T: Real>(cfg: &ModelConfig, cover: &ImageTensor<T>, wm: &WatermarkBits) -> Result<()> {
    let want = (cfg.image_size, cfg.image_size, cfg.image_channels);
    if cover.shape() != want {
        return Err(shape_err!("cover must be {want:?}, got {:?}", cover.shape()));
    }
    if wm.side() != cfg.wm_size {
        return Err(shape_err!(
            "watermark must be {0}x{0}, got {1}x{1}",
            cfg.wm_size,
            wm.side()
        ));
    }
    Ok(())
}

/// Cross-attention embedder parameters and layer layout.
#[derive(Clone, Debug)]
pub struct Embedder<T> {
    cfg: ModelConfig,
    store: ParameterStore<T>,
    pos_cover: ParamId,
    wm_proj: Linear,
    pos_wm: ParamId,
    attn_cover: MultiHeadAttention,
    attn_wm: MultiHeadAttention,
    fuse: Linear,
}

impl_network!(Embedder);

pub struct EmbedderCache<T> {
    wm_tokens: Array2<T>,
    attn_cover: AttentionCache<T>,
    attn_wm: AttentionCache<T>,
    fused_in: Array2<T>,
    pre_clamp: Array3<T>,
}

impl<T: Real> Embedder<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.tokens();
        let dc = cfg.cover_token_dim();
        let dw = cfg.wm_embed_dim;
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut b = b.scope("embedder");
        let pos_cover = b.normal("pos_cover", &[n, dc], 0.02)?;
        let wm_proj = Linear::build(&mut b, "wm_proj", cfg.wm_token_dim(), dw)?;
        let pos_wm = b.normal("pos_wm", &[n, dw], 0.02)?;
        let attn_cover = MultiHeadAttention::build(&mut b, "attn_cover", dc, dw, cfg.attn_dim, dc, cfg.heads)?;
        let attn_wm = MultiHeadAttention::build(&mut b, "attn_wm", dw, dc, cfg.attn_dim, dw, cfg.heads)?;
        let fuse = Linear::build(&mut b, "fuse", dc + dw, dc)?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            pos_cover,
            wm_proj,
            pos_wm,
            attn_cover,
            attn_wm,
            fuse,
        })
    }

    fn cover_grid(&self) -> PatchGrid {
        PatchGrid {
            rows: self.cfg.grid_side(),
            cols: self.cfg.grid_side(),
            patch: self.cfg.patch_cover,
            channels: self.cfg.image_channels,
        }
    }

    /// Width of the per-token concatenation fed to the fusing projection.
    pub fn fused_width(&self) -> usize {
        self.fuse.in_dim
    }
}

impl<T: Real> WatermarkEmbedder<T> for Embedder<T> {
    type Cache = EmbedderCache<T>;

    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn forward(&self, cover: &ImageTensor<T>, wm: &WatermarkBits) -> Result<(ImageTensor<T>, EmbedderCache<T>)> {
        check_inputs(&self.cfg, cover, wm)?;
        let st = &self.store;
        let cover_tokens = patchify(cover, self.cfg.patch_cover)?.into_data();
        let wm_tokens = patchify(&wm.to_image::<T>(), self.cfg.patch_wm)?.into_data();

        let e_cover = cover_tokens + &st.matrix(self.pos_cover);
        let e_wm = self.wm_proj.forward(st, &wm_tokens)? + &st.matrix(self.pos_wm);

        let (a_cover, attn_cover) = self.attn_cover.forward(st, &e_cover, &e_wm)?;
        let (a_wm, attn_wm) = self.attn_wm.forward(st, &e_wm, &e_cover)?;

        let f_cover = e_cover + &a_cover;
        let f_wm = e_wm + &a_wm;
        let fused_in = concatenate(Axis(1), &[f_cover.view(), f_wm.view()]).map_err(|e| shape_err!("{e}"))?;
        let out = self.fuse.forward(st, &fused_in)?;
        let pre_clamp = tokens_to_image(&out, self.cover_grid())?.into_data();
        let marked = ImageTensor::new(pre_clamp.clone())?.clamped();
        Ok((
            marked,
            EmbedderCache {
                wm_tokens,
                attn_cover,
                attn_wm,
                fused_in,
                pre_clamp,
            },
        ))
    }

    fn backward(&self, cache: &EmbedderCache<T>, d_marked: &Array3<T>, clamp: ClampGrad, grads: &mut Gradients<T>) {
        let st = &self.store;
        let d_pre = clamp_backward(&cache.pre_clamp, d_marked, clamp);
        let d_out = patchify(&ImageTensor::new(d_pre).expect("gradient shape"), self.cfg.patch_cover)
            .expect("gradient patchify")
            .into_data();
        let d_fused = self.fuse.backward(st, &cache.fused_in, &d_out, grads);
        let dc = self.cfg.cover_token_dim();
        let mut d_cover = d_fused.slice(s![.., ..dc]).to_owned();
        let mut d_wm = d_fused.slice(s![.., dc..]).to_owned();

        let (dq, dkv) = self.attn_cover.backward(st, &cache.attn_cover, &d_cover, grads);
        let (dq2, dkv2) = self.attn_wm.backward(st, &cache.attn_wm, &d_wm, grads);
        d_cover += &dq;
        d_cover += &dkv2;
        d_wm += &dkv;
        d_wm += &dq2;

        *grads.get_mut(self.pos_cover) += &d_cover.view().into_dyn();
        *grads.get_mut(self.pos_wm) += &d_wm.view().into_dyn();
        self.wm_proj.backward(st, &cache.wm_tokens, &d_wm, grads);
    }
}

/// Convolutional comparison embedder.
#[derive(Clone, Debug)]
pub struct ConvEmbedder<T> {
    cfg: ModelConfig,
    store: ParameterStore<T>,
    layers: Vec<Conv2d>,
}

impl_network!(ConvEmbedder);

pub struct ConvEmbedderCache<T> {
    convs: Vec<ConvCache<T>>,
    pre_acts: Vec<Array3<T>>,
    pre_clamp: Array3<T>,
}

/// Nearest-neighbour upsampling of the watermark to the cover size.
pub fn upsample_watermark<T: Real>(wm: &WatermarkBits, size: usize) -> ImageTensor<T> {
    let side = wm.side();
    ImageTensor::from_fn(size, size, 1, |(y, x, _)| {
        if wm.get(y * side / size, x * side / size) {
            T::one()
        } else {
            T::zero()
        }
    })
}

impl<T: Real> ConvEmbedder<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut b = b.scope("conv_embedder");
        let k = cfg.conv_baseline.kernel;
        let mut layers = Vec::new();
        let mut cin = cfg.image_channels + 1;
        for (i, &f) in cfg.conv_baseline.hidden_filters.iter().enumerate() {
            layers.push(Conv2d::build(&mut b, &format!("conv{i}"), cin, f, k)?);
            cin = f;
        }
        let last = layers.len();
        layers.push(Conv2d::build(&mut b, &format!("conv{last}"), cin, cfg.image_channels, k)?);
        Ok(Self {
            cfg: cfg.clone(),
            store,
            layers,
        })
    }
}

impl<T: Real> WatermarkEmbedder<T> for ConvEmbedder<T> {
    type Cache = ConvEmbedderCache<T>;

    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn forward(&self, cover: &ImageTensor<T>, wm: &WatermarkBits) -> Result<(ImageTensor<T>, ConvEmbedderCache<T>)> {
        check_inputs(&self.cfg, cover, wm)?;
        let up = upsample_watermark::<T>(wm, self.cfg.image_size);
        let mut x = concatenate(Axis(2), &[cover.data().view(), up.data().view()]).map_err(|e| shape_err!("{e}"))?;
        let mut convs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, c) = layer.forward(&self.store, &x)?;
            convs.push(c);
            if i < last {
                x = Gelu::forward(&y);
                pre_acts.push(y);
            } else {
                x = y;
            }
        }
        let marked = ImageTensor::new(x.clone())?.clamped();
        Ok((
            marked,
            ConvEmbedderCache {
                convs,
                pre_acts,
                pre_clamp: x,
            },
        ))
    }

    fn backward(&self, cache: &ConvEmbedderCache<T>, d_marked: &Array3<T>, clamp: ClampGrad, grads: &mut Gradients<T>) {
        let mut d = clamp_backward(&cache.pre_clamp, d_marked, clamp);
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                d = Gelu::backward(&cache.pre_acts[i], &d);
            }
            d = self.layers[i].backward(&self.store, &cache.convs[i], &d, grads);
        }
    }
}

/// Per-channel absolute difference between cover and marked image,
/// normalized by its maximum. Identical inputs give an all-zero map.
pub fn embedding_residual<T: Real>(cover: &ImageTensor<T>, marked: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    if cover.shape() != marked.shape() {
        return Err(shape_err!(
            "residual of {:?} and {:?}",
            cover.shape(),
            marked.shape()
        ));
    }
    let mut diff = (cover.data() - marked.data()).mapv(|v| v.abs());
    let max = diff.iter().fold(T::zero(), |m, &v| m.max(v));
    if max > T::zero() {
        diff.mapv_inplace(|v| v / max);
    }
    ImageTensor::new(diff)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cover<T: Real>(cfg: &ModelConfig) -> ImageTensor<T> {
        ImageTensor::from_fn(cfg.image_size, cfg.image_size, cfg.image_channels, |(y, x, c)| {
            T::lit(((y * 3 + x * 5 + c * 7) % 29) as f64 / 29.0)
        })
    }

    fn wm(cfg: &ModelConfig) -> WatermarkBits {
        WatermarkBits::new(cfg.wm_size, (0..cfg.wm_bits()).map(|i| i % 3 == 0).collect()).unwrap()
    }

    #[test]
    fn full_shapes() {
        let cfg = ModelConfig::full();
        let e = Embedder::<f32>::new(&cfg, 1).unwrap();
        assert_eq!(e.fused_width(), 784);
        let m = e.embed(&cover(&cfg), &wm(&cfg)).unwrap();
        assert_eq!(m.shape(), (128, 128, 3));
        assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn deterministic() {
        let cfg = ModelConfig::desk();
        let e1 = Embedder::<f32>::new(&cfg, 5).unwrap();
        let e2 = Embedder::<f32>::new(&cfg, 5).unwrap();
        assert_eq!(e1.embed(&cover(&cfg), &wm(&cfg)).unwrap(), e2.embed(&cover(&cfg), &wm(&cfg)).unwrap());
        let c1 = ConvEmbedder::<f32>::new(&cfg, 5).unwrap();
        let c2 = ConvEmbedder::<f32>::new(&cfg, 5).unwrap();
        let m1 = c1.embed(&cover(&cfg), &wm(&cfg)).unwrap();
        assert_eq!(m1.shape(), (128, 128, 3));
        assert_eq!(m1, c2.embed(&cover(&cfg), &wm(&cfg)).unwrap());
    }

    #[test]
    fn wrong_shapes_rejected() {
        let cfg = ModelConfig::tiny();
        let e = Embedder::<f64>::new(&cfg, 1).unwrap();
        let bad = ImageTensor::<f64>::zeros(16, 16, 3);
        assert!(e.embed(&bad, &wm(&cfg)).is_err());
        assert!(e.embed(&cover(&cfg), &WatermarkBits::filled(3, true)).is_err());
    }

    #[test]
    fn residual_semantics() {
        let a = ImageTensor::<f64>::filled(4, 4, 3, 0.5);
        let r = embedding_residual(&a, &a).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
        let mut b = a.clone();
        b.data_mut()[[2, 1, 0]] = 0.75;
        let r = embedding_residual(&a, &b).unwrap();
        assert_eq!(r.shape(), a.shape());
        assert_eq!(r.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(r.get(2, 1, 0), 1.0);
        assert!(embedding_residual(&a, &ImageTensor::zeros(4, 4, 1)).is_err());
    }

    #[test]
    fn upsample_is_nearest() {
        let w = WatermarkBits::new(2, vec![true, false, false, true]).unwrap();
        let u = upsample_watermark::<f32>(&w, 4);
        assert_eq!(u.get(0, 0, 0), 1.0);
        assert_eq!(u.get(1, 3, 0), 0.0);
        assert_eq!(u.get(3, 3, 0), 1.0);
    }
}
