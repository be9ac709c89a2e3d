use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::evaluate_pipeline;
use super::pipeline::Pipeline;
use super::stages::stage1_pretrain_kind;
use super::{derive_seed, TrainingConfig};
use crate::augment::{compound_augment, CompoundAugmentConfig};
use crate::checkpoint::{Checkpoint, EmbedderKind, Stage};
use crate::config::ModelConfig;
use crate::data::assign_watermarks;
use crate::error::{Error, Result};
use crate::objectives::{psnr, BitTally, MetricReport, NoiseRow};
use crate::tensor::ImageTensor;

/// Extraction with and without the invariant domain on the same inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantAblation {
    /// Stage-1 extractor applied directly to the marked image.
    pub direct: MetricReport,
    /// Encoder, decoder and stage-3 extractor.
    pub invariant: MetricReport,
}

impl InvariantAblation {
    /// BRR gain of the invariant-domain path on augmented inputs.
    pub fn augmented_gain(&self) -> f64 {
        let pick = |r: &MetricReport| r.row("compound", None).map(|x| x.brr_percent).unwrap_or(f64::NAN);
        pick(&self.invariant) - pick(&self.direct)
    }
}

/// Compare stage-1 and stage-3 extraction on clean and compound-augmented
/// marked images. Both paths see exactly the same images.
pub fn ablate_invariant_domain(
    stage1: &Checkpoint,
    stage3: &Checkpoint,
    images: &[ImageTensor<f32>],
    aug: &CompoundAugmentConfig,
    seed: u64,
) -> Result<InvariantAblation> {
    if stage1.stage != Stage::Stage1 || stage3.stage != Stage::Stage3 {
        return Err(Error::MissingPrerequisite(format!(
            "need stage1 and stage3 checkpoints, got {} and {}",
            stage1.stage, stage3.stage
        )));
    }
    stage3.require(Stage::Stage3, &stage1.config)?;
    aug.validate()?;
    if images.is_empty() {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    let direct = Pipeline::from_checkpoint(stage1)?;
    let invariant = Pipeline::from_checkpoint(stage3)?;
    if direct.embedder.fingerprint() != invariant.embedder.fingerprint() {
        return Err(Error::Checkpoint("stage-1 and stage-3 checkpoints use different embedders".into()));
    }
    let wms = assign_watermarks(images, stage1.config.wm_size, derive_seed(seed, "eval-watermarks"));
    let marked = images
        .iter()
        .zip(&wms)
        .map(|(c, w)| direct.embed(c, w))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ablation-augment"));
    let augmented = marked
        .iter()
        .map(|m| compound_augment(m, aug, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let report = |p: &Pipeline| -> Result<MetricReport> {
        let mut rows = Vec::new();
        for (name, set) in [("none", &marked), ("compound", &augmented)] {
            let mut tally = BitTally::default();
            let mut total_psnr = 0.0;
            for ((img, cover), wm) in set.iter().zip(images).zip(&wms) {
                tally.add(wm, &p.extract(img)?)?;
                total_psnr += psnr(cover, img)?;
            }
            rows.push(NoiseRow {
                noise: name.to_string(),
                level: None,
                brr_percent: tally.percent(),
                psnr_db: total_psnr / images.len() as f64,
                bits_matched: tally.matched,
                bits_total: tally.total,
            });
        }
        Ok(MetricReport {
            images: images.len(),
            psnr_db: rows[0].psnr_db,
            brr_percent: rows[0].brr_percent,
            rows,
        })
    };
    Ok(InvariantAblation {
        direct: report(&direct)?,
        invariant: report(&invariant)?,
    })
}

/// Magnitude of the cover/marked difference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean_abs: f64,
    pub max_abs: f64,
}

impl ResidualStats {
    pub fn between(cover: &ImageTensor<f32>, marked: &ImageTensor<f32>) -> Self {
        let diffs: Vec<f64> = cover
            .data()
            .iter()
            .zip(marked.data().iter())
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .collect();
        Self {
            mean_abs: diffs.iter().sum::<f64>() / diffs.len() as f64,
            max_abs: diffs.iter().fold(0.0, |m, &d| m.max(d)),
        }
    }

    fn average(all: &[Self]) -> Self {
        let n = all.len() as f64;
        Self {
            mean_abs: all.iter().map(|s| s.mean_abs).sum::<f64>() / n,
            max_abs: all.iter().map(|s| s.max_abs).fold(0.0, f64::max),
        }
    }
}

/// Cross-attention and convolutional embedders trained with the same
/// budget and evaluated on held-out images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderAblation {
    pub cross: MetricReport,
    pub conv: MetricReport,
    pub cross_residual: ResidualStats,
    pub conv_residual: ResidualStats,
    /// Per-image held-out PSNR, cross then conv.
    pub cross_psnr: Vec<f64>,
    pub conv_psnr: Vec<f64>,
}

impl EmbedderAblation {
    pub fn psnr_gain(&self) -> f64 {
        self.cross.psnr_db - self.conv.psnr_db
    }
}

/// Train stage 1 once per embedder with identical settings and compare
/// them on `held_out`.
pub fn ablate_embedders(
    model: &ModelConfig,
    cfg: &TrainingConfig,
    train: &[ImageTensor<f32>],
    held_out: &[ImageTensor<f32>],
) -> Result<EmbedderAblation> {
    let cross = stage1_pretrain_kind(EmbedderKind::CrossAttention, model, cfg, train)?.checkpoint;
    let conv = stage1_pretrain_kind(EmbedderKind::Conv, model, cfg, train)?.checkpoint;
    compare_embedders(&cross, &conv, held_out, cfg.seed)
}

/// Held-out comparison of two trained stage-1 checkpoints.
pub fn compare_embedders(
    cross: &Checkpoint,
    conv: &Checkpoint,
    held_out: &[ImageTensor<f32>],
    seed: u64,
) -> Result<EmbedderAblation> {
    let wms = assign_watermarks(held_out, cross.config.wm_size, derive_seed(seed, "eval-watermarks"));
    let arm = |ck: &Checkpoint| -> Result<(MetricReport, ResidualStats, Vec<f64>)> {
        let p = Pipeline::from_checkpoint(ck)?;
        let report = evaluate_pipeline(&p, held_out, &wms, &[], seed)?;
        let mut stats = Vec::new();
        let mut psnrs = Vec::new();
        for (c, w) in held_out.iter().zip(&wms) {
            let m = p.embed(c, w)?;
            stats.push(ResidualStats::between(c, &m));
            psnrs.push(psnr(c, &m)?);
        }
        Ok((report, ResidualStats::average(&stats), psnrs))
    };
    let (cross_report, cross_residual, cross_psnr) = arm(cross)?;
    let (conv_report, conv_residual, conv_psnr) = arm(conv)?;
    Ok(EmbedderAblation {
        cross: cross_report,
        conv: conv_report,
        cross_residual,
        conv_residual,
        cross_psnr,
        conv_psnr,
    })
}
