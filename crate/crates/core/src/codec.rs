//! Encoder into the invariant domain and the decoder that projects it back
//! to image shape for the extractor.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{shape_err, Result};
use crate::network::impl_network;
use crate::nn::{BlockCache, Linear, TransformerBlock};
use crate::params::{Gradients, ParamBuilder, ParamId, ParameterStore};
use crate::tensor::{patchify, tokens_to_image, ImageTensor, PatchGrid, Real, TokenSequence};

/// Encoder output: one token per cover patch, `attn_dim` channels each.
pub type InvariantDomain<T = f32> = TokenSequence<T>;

#[derive(Clone, Debug)]
pub struct Encoder<T> {
    cfg: ModelConfig,
    store: ParameterStore<T>,
    proj: Linear,
    pos: ParamId,
    blocks: Vec<TransformerBlock>,
}

impl_network!(Encoder);

pub struct EncoderCache<T> {
    patches: Array2<T>,
    blocks: Vec<BlockCache<T>>,
}

impl<T: Real> Encoder<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut b = b.scope("encoder");
        let proj = Linear::build(&mut b, "proj", cfg.cover_token_dim(), cfg.attn_dim)?;
        let pos = b.normal("pos", &[cfg.tokens(), cfg.attn_dim], 0.02)?;
        let blocks = (0..cfg.tf_blocks)
            .map(|i| TransformerBlock::build(&mut b, &format!("block{i}"), cfg.attn_dim, cfg.heads))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            proj,
            pos,
            blocks,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn forward(&self, marked: &ImageTensor<T>) -> Result<(Array2<T>, EncoderCache<T>)> {
        let want = (self.cfg.image_size, self.cfg.image_size, self.cfg.image_channels);
        if marked.shape() != want {
            return Err(shape_err!("encoder input must be {want:?}, got {:?}", marked.shape()));
        }
        let patches = patchify(marked, self.cfg.patch_cover)?.into_data();
        let mut x = self.proj.forward(&self.store, &patches)? + &self.store.matrix(self.pos);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (y, c) = blk.forward(&self.store, &x)?;
            caches.push(c);
            x = y;
        }
        Ok((x, EncoderCache { patches, blocks: caches }))
    }

    pub fn encode(&self, marked: &ImageTensor<T>) -> Result<InvariantDomain<T>> {
        Ok(TokenSequence::new(self.forward(marked)?.0))
    }

    /// Accumulates parameter gradients; the input gradient is not needed
    /// upstream because the embedder is frozen whenever the encoder trains.
    pub fn backward(&self, cache: &EncoderCache<T>, d_id: &Array2<T>, grads: &mut Gradients<T>) {
        let mut d = d_id.clone();
        for (blk, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            d = blk.backward(&self.store, c, &d, grads);
        }
        *grads.get_mut(self.pos) += &d.view().into_dyn();
        self.proj.backward(&self.store, &cache.patches, &d, grads);
    }
}

#[derive(Clone, Debug)]
pub struct Decoder<T> {
    cfg: ModelConfig,
    store: ParameterStore<T>,
    blocks: Vec<TransformerBlock>,
    proj: Linear,
}

impl_network!(Decoder);

pub struct DecoderCache<T> {
    blocks: Vec<BlockCache<T>>,
    last: Array2<T>,
}

impl<T: Real> Decoder<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut b = b.scope("decoder");
        let blocks = (0..cfg.tf_blocks)
            .map(|i| TransformerBlock::build(&mut b, &format!("block{i}"), cfg.attn_dim, cfg.heads))
            .collect::<Result<Vec<_>>>()?;
        let proj = Linear::build(&mut b, "proj", cfg.attn_dim, cfg.cover_token_dim())?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            blocks,
            proj,
        })
    }

    fn grid(&self) -> PatchGrid {
        PatchGrid {
            rows: self.cfg.grid_side(),
            cols: self.cfg.grid_side(),
            patch: self.cfg.patch_cover,
            channels: self.cfg.image_channels,
        }
    }

    /// Output is left unclamped.
    pub fn forward(&self, id: &Array2<T>) -> Result<(ImageTensor<T>, DecoderCache<T>)> {
        if id.dim() != (self.cfg.tokens(), self.cfg.attn_dim) {
            return Err(shape_err!(
                "decoder input must be {}x{}, got {:?}",
                self.cfg.tokens(),
                self.cfg.attn_dim,
                id.dim()
            ));
        }
        let mut x = id.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (y, c) = blk.forward(&self.store, &x)?;
            caches.push(c);
            x = y;
        }
        let out = self.proj.forward(&self.store, &x)?;
        let img = tokens_to_image(&out, self.grid())?;
        Ok((img, DecoderCache { blocks: caches, last: x }))
    }

    pub fn decode(&self, id: &InvariantDomain<T>) -> Result<ImageTensor<T>> {
        Ok(self.forward(id.data())?.0)
    }

    /// Returns the gradient with respect to the invariant domain.
    pub fn backward(&self, cache: &DecoderCache<T>, d_img: &Array3<T>, grads: &mut Gradients<T>) -> Array2<T> {
        let d_out = patchify(&ImageTensor::new(d_img.clone()).expect("gradient shape"), self.cfg.patch_cover)
            .expect("gradient patchify")
            .into_data();
        let mut d = self.proj.backward(&self.store, &cache.last, &d_out, grads);
        for (blk, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            d = blk.backward(&self.store, c, &d, grads);
        }
        d
    }
}
