use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::derive_seed;
use super::pipeline::Pipeline;
use crate::augment::{apply_noise, NoiseKind, NoiseSpec};
use crate::checkpoint::{Checkpoint, Stage};
use crate::config::ModelConfig;
use crate::data::assign_watermarks;
use crate::error::{shape_err, Error, Result};
use crate::objectives::{psnr, BitTally, MetricReport, NoiseRow};
use crate::tensor::ImageTensor;
use crate::watermark::WatermarkBits;

/// Every sweep level of one attack, mildest first.
pub fn sweep_noises(kind: NoiseKind) -> Vec<NoiseSpec> {
    kind.sweep_levels()
        .into_iter()
        .map(|l| NoiseSpec { kind, level: l })
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Evaluate a checkpoint on `images`, with watermarks drawn from the same
/// set. The checkpoint must be at least stage 1 and match `model`.
pub fn evaluate(
    ck: &Checkpoint,
    model: &ModelConfig,
    images: &[ImageTensor<f32>],
    noises: &[NoiseSpec],
    seed: u64,
) -> Result<MetricReport> {
    ck.require(Stage::Stage1, model)?;
    let pipeline = Pipeline::from_checkpoint(ck)?;
    let wms = assign_watermarks(images, model.wm_size, derive_seed(seed, "eval-watermarks"));
    evaluate_pipeline(&pipeline, images, &wms, noises, seed)
}

/// Embed each image with its watermark, attack it with every noise and
/// extract. The first row is always the clean path.
pub fn evaluate_pipeline(
    pipeline: &Pipeline,
    images: &[ImageTensor<f32>],
    watermarks: &[WatermarkBits],
    noises: &[NoiseSpec],
    seed: u64,
) -> Result<MetricReport> {
    if images.is_empty() {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    if images.len() != watermarks.len() {
        return Err(shape_err!("{} images but {} watermarks", images.len(), watermarks.len()));
    }
    let marked = images
        .iter()
        .zip(watermarks)
        .map(|(c, w)| pipeline.embed(c, w))
        .collect::<Result<Vec<_>>>()?;

    let row = |noise: &str, level: Option<f64>, attacked: &[ImageTensor<f32>]| -> Result<NoiseRow> {
        let mut tally = BitTally::default();
        let mut psnrs = Vec::with_capacity(attacked.len());
        for ((img, cover), wm) in attacked.iter().zip(images).zip(watermarks) {
            tally.add(wm, &pipeline.extract(img)?)?;
            psnrs.push(psnr(cover, img)?);
        }
        Ok(NoiseRow {
            noise: noise.to_string(),
            level,
            brr_percent: tally.percent(),
            psnr_db: mean(&psnrs),
            bits_matched: tally.matched,
            bits_total: tally.total,
        })
    };

    let clean = row("none", None, &marked)?;
    let mut rows = vec![clean.clone()];
    for (r, spec) in noises.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "eval-noise"));
        rng.set_stream(r as u64);
        let attacked = marked
            .iter()
            .map(|m| apply_noise(m, spec, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row(spec.kind.name(), Some(spec.level), &attacked)?);
    }
    Ok(MetricReport {
        images: images.len(),
        psnr_db: clean.psnr_db,
        brr_percent: clean.brr_percent,
        rows,
    })
}
