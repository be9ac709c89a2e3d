use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, EmbedderKind, Stage};
use crate::codec::{Decoder, Encoder};
use crate::config::ModelConfig;
use crate::embedder::{ConvEmbedder, Embedder, WatermarkEmbedder};
use crate::error::{Error, Result};
use crate::extractor::Extractor;
use crate::network::Network;
use crate::nn::Mode;
use crate::tensor::ImageTensor;
use crate::watermark::WatermarkBits;

/// Either embedder architecture, for code paths that only run forward.
#[derive(Clone, Debug)]
pub enum AnyEmbedder {
    Cross(Embedder<f32>),
    Conv(ConvEmbedder<f32>),
}

impl AnyEmbedder {
    pub fn new(kind: EmbedderKind, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match kind {
            EmbedderKind::CrossAttention => AnyEmbedder::Cross(Embedder::new(cfg, seed)?),
            EmbedderKind::Conv => AnyEmbedder::Conv(ConvEmbedder::new(cfg, seed)?),
        })
    }

    pub fn kind(&self) -> EmbedderKind {
        match self {
            AnyEmbedder::Cross(_) => EmbedderKind::CrossAttention,
            AnyEmbedder::Conv(_) => EmbedderKind::Conv,
        }
    }

    pub fn embed(&self, cover: &ImageTensor<f32>, wm: &WatermarkBits) -> Result<ImageTensor<f32>> {
        match self {
            AnyEmbedder::Cross(e) => e.embed(cover, wm),
            AnyEmbedder::Conv(e) => e.embed(cover, wm),
        }
    }

    pub fn fingerprint(&self) -> String {
        match self {
            AnyEmbedder::Cross(e) => e.store().fingerprint(),
            AnyEmbedder::Conv(e) => e.store().fingerprint(),
        }
    }

    pub fn add_to(&self, ck: &mut Checkpoint) -> Result<()> {
        match self {
            AnyEmbedder::Cross(e) => ck.add_network(e),
            AnyEmbedder::Conv(e) => ck.add_network(e),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut emb = AnyEmbedder::new(ck.embedder_kind, &ck.config, 0)?;
        match &mut emb {
            AnyEmbedder::Cross(e) => ck.load_network("embedder", e)?,
            AnyEmbedder::Conv(e) => ck.load_network("conv_embedder", e)?,
        }
        Ok(emb)
    }
}

/// Networks restored from a checkpoint, ready for inference.
///
/// Stage-1 pipelines extract directly from the marked image; stage-3
/// pipelines go through the encoder, decoder and extractor.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: ModelConfig,
    pub stage: Stage,
    pub embedder: AnyEmbedder,
    pub encoder: Option<Encoder<f32>>,
    pub decoder: Option<Decoder<f32>>,
    pub extractor: Option<Extractor<f32>>,
}

impl Pipeline {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = &ck.config;
        let embedder = AnyEmbedder::from_checkpoint(ck)?;
        let encoder = if ck.has_network("encoder") {
            let mut e = Encoder::new(cfg, 0)?;
            ck.load_network("encoder", &mut e)?;
            Some(e)
        } else {
            None
        };
        let decoder = if ck.has_network("decoder") {
            let mut d = Decoder::new(cfg, 0)?;
            ck.load_network("decoder", &mut d)?;
            Some(d)
        } else {
            None
        };
        let extractor = if ck.has_network("extractor") {
            let mut x = Extractor::new(cfg, 0)?;
            ck.load_network("extractor", &mut x)?;
            Some(x)
        } else {
            None
        };
        Ok(Self {
            config: cfg.clone(),
            stage: ck.stage,
            embedder,
            encoder,
            decoder,
            extractor,
        })
    }

    pub fn embed(&self, cover: &ImageTensor<f32>, wm: &WatermarkBits) -> Result<ImageTensor<f32>> {
        self.embedder.embed(cover, wm)
    }

    /// Whether extraction goes through the invariant domain.
    pub fn uses_invariant_domain(&self) -> bool {
        self.encoder.is_some() && self.decoder.is_some()
    }

    /// Real-valued extraction grid.
    pub fn extract_logits(&self, img: &ImageTensor<f32>) -> Result<ndarray::Array2<f32>> {
        let ex = self.extractor.as_ref().ok_or_else(|| {
            Error::MissingPrerequisite(format!("{} checkpoint has no extractor", self.stage))
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match (&self.encoder, &self.decoder) {
            (Some(enc), Some(dec)) => {
                let (id, _) = enc.forward(img)?;
                let (recon, _) = dec.forward(&id)?;
                ex.extract_logits(&recon, Mode::Eval, &mut rng)
            }
            _ => ex.extract_logits(img, Mode::Eval, &mut rng),
        }
    }

    pub fn extract(&self, img: &ImageTensor<f32>) -> Result<WatermarkBits> {
        WatermarkBits::from_logits(&self.extract_logits(img)?)
    }
}
