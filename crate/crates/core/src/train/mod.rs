//! Three-stage training, evaluation and the two ablation protocols.
//!
//! 1. The embedder and extractor are trained together on clean marked
//!    images.
//! 2. The extractor is dropped, the embedder frozen, and an encoder learns
//!    the invariant domain from triplets (anchor, augmented anchor, other
//!    image of the batch).
//! 3. The encoder is fine-tuned together with a fresh decoder and extractor
//!    that read the watermark back out of the invariant domain.

mod ablation;
mod eval;
mod pipeline;
mod stages;
mod triplet;

use serde::{Deserialize, Serialize};

pub use ablation::{ablate_embedders, compare_embedders, ablate_invariant_domain, EmbedderAblation, InvariantAblation, ResidualStats};
pub use eval::{evaluate, evaluate_pipeline, sweep_noises};
pub use pipeline::{AnyEmbedder, Pipeline};
pub use stages::{run_all, stage1_pretrain, stage1_pretrain_kind, stage2_train_encoder, stage3_finetune, StageOutcome};
pub use triplet::{make_triplet, TripletBatch};

use crate::augment::CompoundAugmentConfig;
use crate::checkpoint::Stage;
use crate::embedder::ClampGrad;
use crate::error::{Error, Result};
use crate::objectives::TrainingLossConfig;
use crate::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub stage3_steps: usize,
    pub adam: AdamConfig,
    pub loss: TrainingLossConfig,
    /// Stage-1 weight of the cover/marked fidelity term.
    pub embed_weight: f64,
    /// Stage-1 weight of the watermark extraction term.
    pub extract_weight: f64,
    pub clamp_grad: ClampGrad,
    pub augment: CompoundAugmentConfig,
    /// Record the loss every this many steps (the last step is always kept).
    pub log_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 32,
            stage1_steps: 5000,
            stage2_steps: 2000,
            stage3_steps: 3000,
            adam: AdamConfig::default(),
            loss: TrainingLossConfig::default(),
            embed_weight: 1.0,
            extract_weight: 1.0,
            clamp_grad: ClampGrad::StraightThrough,
            augment: CompoundAugmentConfig::default(),
            log_every: 50,
        }
    }
}

impl TrainingConfig {
    /// Settings used for single-core runs on a handful of images.
    pub fn desk() -> Self {
        Self {
            batch_size: 8,
            stage1_steps: 2000,
            stage2_steps: 300,
            stage3_steps: 2000,
            embed_weight: 3.0,
            adam: AdamConfig {
                learning_rate: 1e-3,
                decay: 0.97,
                decay_interval: 100,
                ..AdamConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.loss.validate()?;
        self.augment.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.embed_weight >= 0.0 && self.extract_weight >= 0.0) {
            return Err(Error::Config("stage-1 loss weights must be non-negative".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self, stage: Stage) -> usize {
        match stage {
            Stage::Init => 0,
            Stage::Stage1 => self.stage1_steps,
            Stage::Stage2 => self.stage2_steps,
            Stage::Stage3 => self.stage3_steps,
        }
    }
}

/// Independent sub-seed for a named purpose.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    // splitmix64 over the purpose bytes
    let mut z = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in purpose.bytes() {
        z = z.wrapping_add(b as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z ^= z >> 31;
    }
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub stage: Stage,
    pub step: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn last_loss(&self) -> Option<f64> {
        self.entries.last().map(|e| e.loss)
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.entries.first().map(|e| e.loss)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }
}
