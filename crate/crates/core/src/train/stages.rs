use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eval::evaluate_pipeline;
use super::pipeline::{AnyEmbedder, Pipeline};
use super::triplet::make_triplet;
use super::{derive_seed, LogEntry, TrainingConfig, TrainingLog};
use crate::checkpoint::{Checkpoint, EmbedderKind, RngState, Stage};
use crate::codec::{Decoder, Encoder};
use crate::config::ModelConfig;
use crate::data::{assign_watermarks, generate_watermark, other_index};
use crate::embedder::WatermarkEmbedder;
use crate::error::{Error, Result};
use crate::extractor::Extractor;
use crate::network::Network;
use crate::nn::Mode;
use crate::objectives::{
    embedder_loss, embedder_loss_grad, extractor_pretrain_loss, extractor_pretrain_loss_grad, triplet_loss_with_grad,
};
use crate::optim::Adam;
use crate::params::Gradients;
use crate::tensor::ImageTensor;
use crate::watermark::WatermarkBits;

/// A finished stage: its checkpoint and loss curve.
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
}

/// Cycles through shuffled epochs of fixed-size batches.
struct BatchSampler {
    order: Vec<usize>,
    batch: usize,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize, batch: usize) -> Self {
        let batch = batch.min(n);
        Self {
            order: (0..n).collect(),
            batch,
            pos: n,
        }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

/// Watermark for each batch element, generated from another image of the
/// same batch.
fn batch_watermarks<R: Rng>(batch: &[usize], pool: &[WatermarkBits], rng: &mut R) -> Vec<WatermarkBits> {
    (0..batch.len())
        .map(|k| pool[batch[other_index(k, batch.len(), rng)]].clone())
        .collect()
}

fn check_step(step: usize, loss: f64, grads: &[&Gradients<f32>]) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: format!("loss became {loss}"),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            step,
            detail: "non-finite gradient".into(),
        });
    }
    Ok(())
}

fn check_images(cfg: &ModelConfig, images: &[ImageTensor<f32>], min: usize) -> Result<()> {
    if images.len() < min {
        return Err(Error::Dataset(format!("need at least {min} training images, got {}", images.len())));
    }
    let want = (cfg.image_size, cfg.image_size, cfg.image_channels);
    if let Some(bad) = images.iter().find(|i| i.shape() != want) {
        return Err(Error::Dataset(format!("training image is {:?}, expected {want:?}", bad.shape())));
    }
    Ok(())
}

fn record(log: &mut TrainingLog, cfg: &TrainingConfig, stage: Stage, step: usize, steps: usize, loss: f64, lr: f64) {
    if step % cfg.log_every == 0 || step + 1 == steps {
        log::info!("{stage} step {step}/{steps} loss {loss:.6}");
        log.entries.push(LogEntry {
            stage,
            step,
            loss,
            learning_rate: lr,
        });
    }
}

fn stage_rng(cfg: &TrainingConfig, stage: Stage) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &stage.to_string()))
}

/// Clean-path train-set metrics recorded in every checkpoint.
fn record_train_metrics(ck: &mut Checkpoint, images: &[ImageTensor<f32>], cfg: &TrainingConfig) -> Result<()> {
    let pipeline = Pipeline::from_checkpoint(ck)?;
    if pipeline.extractor.is_none() {
        return Ok(());
    }
    let wms = assign_watermarks(images, ck.config.wm_size, derive_seed(cfg.seed, "eval-watermarks"));
    let report = evaluate_pipeline(&pipeline, images, &wms, &[], cfg.seed)?;
    ck.set_metric("train_psnr_db", report.psnr_db);
    ck.set_metric("train_brr_percent", report.brr_percent);
    Ok(())
}

fn train_stage1<E: WatermarkEmbedder<f32>>(
    embedder: &mut E,
    extractor: &mut Extractor<f32>,
    images: &[ImageTensor<f32>],
    cfg: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingLog> {
    let side = embedder.config().wm_size;
    let pool: Vec<WatermarkBits> = images.iter().map(|i| generate_watermark(i, side)).collect();
    let mut opt_e = Adam::new(cfg.adam, embedder.store())?;
    let mut opt_x = Adam::new(cfg.adam, extractor.store())?;
    let mut sampler = BatchSampler::new(images.len(), cfg.batch_size);
    let (we, wx) = (cfg.embed_weight as f32, cfg.extract_weight as f32);
    let mut log = TrainingLog::default();
    let steps = cfg.stage1_steps;

    for step in 0..steps {
        let batch = sampler.next(rng);
        let wms = batch_watermarks(&batch, &pool, rng);
        let mut ge = Gradients::zeros_like(embedder.store());
        let mut gx = Gradients::zeros_like(extractor.store());
        let mut total = 0.0f64;
        for (k, &i) in batch.iter().enumerate() {
            let cover = &images[i];
            let target = wms[k].to_targets::<f32>();
            let (marked, ecache) = embedder.forward(cover, &wms[k])?;
            let (logits, xcache) = extractor.forward(&marked, Mode::Train, rng)?;
            let l_emb = embedder_loss(cover, &marked)?;
            let l_ext = extractor_pretrain_loss(&target, &logits)?;
            total += (we * l_emb + wx * l_ext) as f64;

            let d_logits = extractor_pretrain_loss_grad(&target, &logits)? * wx;
            let mut d_marked = extractor.backward(&xcache, &d_logits, &mut gx);
            d_marked.scaled_add(we, &embedder_loss_grad(cover, &marked)?);
            embedder.backward(&ecache, &d_marked, cfg.clamp_grad, &mut ge);
        }
        let inv = 1.0 / batch.len() as f32;
        ge.scale(inv);
        gx.scale(inv);
        let loss = total / batch.len() as f64;
        check_step(step, loss, &[&ge, &gx])?;
        record(&mut log, cfg, Stage::Stage1, step, steps, loss, opt_e.current_rate());
        opt_e.step(embedder.store_mut(), &ge);
        opt_x.step(extractor.store_mut(), &gx);
    }
    Ok(log)
}

/// Stage 1 with the cross-attention embedder.
pub fn stage1_pretrain(model: &ModelConfig, cfg: &TrainingConfig, images: &[ImageTensor<f32>]) -> Result<StageOutcome> {
    stage1_pretrain_kind(EmbedderKind::CrossAttention, model, cfg, images)
}

/// Joint embedder/extractor pretraining on clean marked images.
pub fn stage1_pretrain_kind(
    kind: EmbedderKind,
    model: &ModelConfig,
    cfg: &TrainingConfig,
    images: &[ImageTensor<f32>],
) -> Result<StageOutcome> {
    model.validate()?;
    cfg.validate()?;
    check_images(model, images, 1)?;
    let mut rng = stage_rng(cfg, Stage::Stage1);
    let mut embedder = AnyEmbedder::new(kind, model, derive_seed(cfg.seed, "embedder"))?;
    let mut extractor = Extractor::new(model, derive_seed(cfg.seed, "stage1-extractor"))?;
    let log = match &mut embedder {
        AnyEmbedder::Cross(e) => train_stage1(e, &mut extractor, images, cfg, &mut rng)?,
        AnyEmbedder::Conv(e) => train_stage1(e, &mut extractor, images, cfg, &mut rng)?,
    };
    let mut ck = Checkpoint::new(model.clone(), Stage::Stage1, kind);
    embedder.add_to(&mut ck)?;
    ck.add_network(&extractor)?;
    ck.rng = Some(RngState::capture(&rng));
    if let Some(l) = log.last_loss() {
        ck.set_metric("final_loss", l);
    }
    record_train_metrics(&mut ck, images, cfg)?;
    Ok(StageOutcome { checkpoint: ck, log })
}

fn require_previous(ck: &Checkpoint, previous: Stage, next: Stage) -> Result<()> {
    if ck.stage != previous {
        return Err(Error::MissingPrerequisite(format!(
            "{next} needs a {previous} checkpoint, got {}",
            ck.stage
        )));
    }
    ck.config.validate()
}

fn train_stage2<E: WatermarkEmbedder<f32>>(
    embedder: &mut E,
    encoder: &mut Encoder<f32>,
    images: &[ImageTensor<f32>],
    cfg: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingLog> {
    embedder.freeze();
    let before = embedder.store().fingerprint();
    let side = embedder.config().wm_size;
    let pool: Vec<WatermarkBits> = images.iter().map(|i| generate_watermark(i, side)).collect();
    let mut opt = Adam::new(cfg.adam, encoder.store())?;
    let mut sampler = BatchSampler::new(images.len(), cfg.batch_size);
    let margin = cfg.loss.margin as f32;
    let mut log = TrainingLog::default();
    let steps = cfg.stage2_steps;

    for step in 0..steps {
        let batch = sampler.next(rng);
        let wms = batch_watermarks(&batch, &pool, rng);
        let covers: Vec<_> = batch.iter().map(|&i| images[i].clone()).collect();
        let tb = make_triplet(&covers, &wms, &*embedder, &cfg.augment, rng)?;
        let b = tb.len();
        let mut fa = Vec::with_capacity(b);
        let mut fp = Vec::with_capacity(b);
        for k in 0..b {
            fa.push(encoder.forward(&tb.marked_a[k])?);
            fp.push(encoder.forward(&tb.marked_p[k])?);
        }
        let mut da: Vec<Array2<f32>> = fa.iter().map(|(id, _)| Array2::zeros(id.raw_dim())).collect();
        let mut dp = da.clone();
        let mut total = 0.0f64;
        for k in 0..b {
            let n = tb.negative_index(k);
            let t = triplet_loss_with_grad(fa[k].0.view(), fp[k].0.view(), fa[n].0.view(), margin)?;
            total += t.loss as f64;
            da[k] += &t.d_anchor;
            dp[k] += &t.d_positive;
            da[n] += &t.d_negative;
        }
        let mut g = Gradients::zeros_like(encoder.store());
        for k in 0..b {
            encoder.backward(&fa[k].1, &da[k], &mut g);
            encoder.backward(&fp[k].1, &dp[k], &mut g);
        }
        g.scale(1.0 / b as f32);
        let loss = total / b as f64;
        check_step(step, loss, &[&g])?;
        record(&mut log, cfg, Stage::Stage2, step, steps, loss, opt.current_rate());
        opt.step(encoder.store_mut(), &g);
    }
    if embedder.store().fingerprint() != before {
        return Err(Error::Numeric("frozen embedder changed during encoder training".into()));
    }
    Ok(log)
}

/// Invariant-domain learning: drop the extractor, freeze the embedder and
/// train a fresh encoder on the triplet loss.
pub fn stage2_train_encoder(cfg: &TrainingConfig, stage1: &Checkpoint, images: &[ImageTensor<f32>]) -> Result<StageOutcome> {
    require_previous(stage1, Stage::Stage1, Stage::Stage2)?;
    cfg.validate()?;
    let model = &stage1.config;
    check_images(model, images, 2)?;
    let mut rng = stage_rng(cfg, Stage::Stage2);
    let mut embedder = AnyEmbedder::from_checkpoint(stage1)?;
    let mut encoder = Encoder::new(model, derive_seed(cfg.seed, "encoder"))?;
    let log = match &mut embedder {
        AnyEmbedder::Cross(e) => train_stage2(e, &mut encoder, images, cfg, &mut rng)?,
        AnyEmbedder::Conv(e) => train_stage2(e, &mut encoder, images, cfg, &mut rng)?,
    };
    let mut ck = Checkpoint::new(model.clone(), Stage::Stage2, stage1.embedder_kind);
    embedder.add_to(&mut ck)?;
    ck.add_network(&encoder)?;
    ck.rng = Some(RngState::capture(&rng));
    if let (Some(first), Some(last)) = (log.first_loss(), log.last_loss()) {
        ck.set_metric("initial_triplet_loss", first);
        ck.set_metric("final_loss", last);
    }
    Ok(StageOutcome { checkpoint: ck, log })
}

struct Stage3Nets<'a> {
    encoder: &'a mut Encoder<f32>,
    decoder: &'a mut Decoder<f32>,
    extractor: &'a mut Extractor<f32>,
}

fn train_stage3<E: WatermarkEmbedder<f32>>(
    embedder: &mut E,
    nets: Stage3Nets<'_>,
    images: &[ImageTensor<f32>],
    cfg: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingLog> {
    let Stage3Nets {
        encoder,
        decoder,
        extractor,
    } = nets;
    embedder.freeze();
    encoder.unfreeze();
    let before = embedder.store().fingerprint();
    let side = embedder.config().wm_size;
    let pool: Vec<WatermarkBits> = images.iter().map(|i| generate_watermark(i, side)).collect();
    let mut opt_enc = Adam::new(cfg.adam, encoder.store())?;
    let mut opt_dec = Adam::new(cfg.adam, decoder.store())?;
    let mut opt_ext = Adam::new(cfg.adam, extractor.store())?;
    let mut sampler = BatchSampler::new(images.len(), cfg.batch_size);
    let margin = cfg.loss.margin as f32;
    let lambda = cfg.loss.triplet_weight as f32;
    let mut log = TrainingLog::default();
    let steps = cfg.stage3_steps;

    for step in 0..steps {
        let batch = sampler.next(rng);
        let wms = batch_watermarks(&batch, &pool, rng);
        let covers: Vec<_> = batch.iter().map(|&i| images[i].clone()).collect();
        let tb = make_triplet(&covers, &wms, &*embedder, &cfg.augment, rng)?;
        let b = tb.len();

        // Index 0..b are anchors, b..2b positives; negatives reuse anchors.
        let inputs: Vec<&ImageTensor<f32>> = tb.marked_a.iter().chain(&tb.marked_p).collect();
        let mut enc_out = Vec::with_capacity(2 * b);
        let mut dec_out = Vec::with_capacity(2 * b);
        let mut ext_out = Vec::with_capacity(2 * b);
        for img in &inputs {
            let (id, ec) = encoder.forward(img)?;
            let (recon, dc) = decoder.forward(&id)?;
            let (logits, xc) = extractor.forward(&recon, Mode::Train, rng)?;
            enc_out.push((id, ec));
            dec_out.push(dc);
            ext_out.push((logits, xc));
        }
        let targets: Vec<Array2<f32>> = tb.watermarks.iter().map(|w| w.to_targets()).collect();
        let mut d_logits: Vec<Array2<f32>> = ext_out.iter().map(|(l, _)| Array2::zeros(l.raw_dim())).collect();
        let mut d_id: Vec<Array2<f32>> = enc_out.iter().map(|(id, _)| Array2::zeros(id.raw_dim())).collect();
        let mut total = 0.0f64;
        for k in 0..b {
            let n = tb.negative_index(k);
            // (slot, target) for the anchor, positive and negative terms
            for (slot, target) in [(k, &targets[k]), (b + k, &targets[k]), (n, &targets[n])] {
                let logits = &ext_out[slot].0;
                total += extractor_pretrain_loss(target, logits)? as f64;
                d_logits[slot] += &extractor_pretrain_loss_grad(target, logits)?;
            }
            if lambda > 0.0 {
                let t = triplet_loss_with_grad(enc_out[k].0.view(), enc_out[b + k].0.view(), enc_out[n].0.view(), margin)?;
                total += (lambda * t.loss) as f64;
                d_id[k].scaled_add(lambda, &t.d_anchor);
                d_id[b + k].scaled_add(lambda, &t.d_positive);
                d_id[n].scaled_add(lambda, &t.d_negative);
            }
        }
        let mut g_enc = Gradients::zeros_like(encoder.store());
        let mut g_dec = Gradients::zeros_like(decoder.store());
        let mut g_ext = Gradients::zeros_like(extractor.store());
        for slot in 0..2 * b {
            let d_img = extractor.backward(&ext_out[slot].1, &d_logits[slot], &mut g_ext);
            let d = decoder.backward(&dec_out[slot], &d_img, &mut g_dec) + &d_id[slot];
            encoder.backward(&enc_out[slot].1, &d, &mut g_enc);
        }
        let inv = 1.0 / b as f32;
        g_enc.scale(inv);
        g_dec.scale(inv);
        g_ext.scale(inv);
        let loss = total / b as f64;
        check_step(step, loss, &[&g_enc, &g_dec, &g_ext])?;
        record(&mut log, cfg, Stage::Stage3, step, steps, loss, opt_enc.current_rate());
        opt_enc.step(encoder.store_mut(), &g_enc);
        opt_dec.step(decoder.store_mut(), &g_dec);
        opt_ext.step(extractor.store_mut(), &g_ext);
    }
    if embedder.store().fingerprint() != before {
        return Err(Error::Numeric("frozen embedder changed during fine-tuning".into()));
    }
    Ok(log)
}

/// Fine-tune the encoder together with a fresh decoder and extractor.
pub fn stage3_finetune(cfg: &TrainingConfig, stage2: &Checkpoint, images: &[ImageTensor<f32>]) -> Result<StageOutcome> {
    require_previous(stage2, Stage::Stage2, Stage::Stage3)?;
    cfg.validate()?;
    let model = &stage2.config;
    check_images(model, images, 2)?;
    let mut rng = stage_rng(cfg, Stage::Stage3);
    let mut embedder = AnyEmbedder::from_checkpoint(stage2)?;
    let mut encoder = Encoder::new(model, 0)?;
    stage2.load_network("encoder", &mut encoder)?;
    let mut decoder = Decoder::new(model, derive_seed(cfg.seed, "decoder"))?;
    let mut extractor = Extractor::new(model, derive_seed(cfg.seed, "stage3-extractor"))?;
    let nets = Stage3Nets {
        encoder: &mut encoder,
        decoder: &mut decoder,
        extractor: &mut extractor,
    };
    let log = match &mut embedder {
        AnyEmbedder::Cross(e) => train_stage3(e, nets, images, cfg, &mut rng)?,
        AnyEmbedder::Conv(e) => train_stage3(e, nets, images, cfg, &mut rng)?,
    };
    let mut ck = Checkpoint::new(model.clone(), Stage::Stage3, stage2.embedder_kind);
    embedder.add_to(&mut ck)?;
    ck.add_network(&encoder)?;
    ck.add_network(&decoder)?;
    ck.add_network(&extractor)?;
    ck.rng = Some(RngState::capture(&rng));
    if let Some(l) = log.last_loss() {
        ck.set_metric("final_loss", l);
    }
    record_train_metrics(&mut ck, images, cfg)?;
    Ok(StageOutcome { checkpoint: ck, log })
}

/// All three stages in order.
pub fn run_all(model: &ModelConfig, cfg: &TrainingConfig, images: &[ImageTensor<f32>]) -> Result<[StageOutcome; 3]> {
    let s1 = stage1_pretrain(model, cfg, images)?;
    let s2 = stage2_train_encoder(cfg, &s1.checkpoint, images)?;
    let s3 = stage3_finetune(cfg, &s2.checkpoint, images)?;
    Ok([s1, s2, s3])
}
