//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails. Built without the libtest harness
//! so the lines are never captured.
//!
//! Training uses the desk profile (`ModelConfig::desk`, `TrainingConfig::desk`)
//! on eight synthetic 128×128 images.

mod common;

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robustmark::augment::{apply_noise, compound_augment, CompoundAugmentConfig, NoiseDraw, NoiseKind, NoiseSpec};
use robustmark::checkpoint::{Checkpoint, EmbedderKind, Stage};
use robustmark::data::{assign_watermarks, toy_images};
use robustmark::embedder::{Embedder, WatermarkEmbedder};
use robustmark::nn::{attention_weights, dropout, Mode, MultiHeadAttention};
use robustmark::objectives::{brr, mse, psnr, triplet_loss, MetricReport};
use robustmark::params::{ParamBuilder, ParameterStore};
use robustmark::run_config::RunConfig;
use robustmark::train::{
    ablate_invariant_domain, compare_embedders, evaluate, run_all, stage1_pretrain_kind, stage2_train_encoder,
    stage3_finetune, sweep_noises, TrainingConfig,
};
use robustmark::{patchify, unpatchify, Error, ImageTensor, ModelConfig, TokenSequence, WatermarkBits};

use common::{brr_oracle, mse_oracle, psnr_oracle, random_vec, triplet_oracle};

const TRAIN_SEED: u64 = 1;
const HELD_OUT_SEED: u64 = 2;
const IMAGES: usize = 8;
const SIZE: usize = 128;

const PROPERTY_BUDGET: Duration = Duration::from_secs(120);
const GRADIENT_BUDGET: Duration = Duration::from_secs(300);
const STAGE1_BUDGET: Duration = Duration::from_secs(30 * 60);
const ABLATION_BUDGET: Duration = Duration::from_secs(60 * 60);
const MAX_STAGE1_STEPS: usize = 5000;
const MIN_TRAIN_BRR: f64 = 99.0;
const MIN_TRAIN_PSNR: f64 = 30.0;
const MIN_ABLATION_GAIN: f64 = 10.0;
const SWEEP_SLACK: f64 = 2.0;
const PSNR_TOL_DB: f64 = 1e-9;
const LOSS_REL_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-6;

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u8, name: &'static str, pass: bool, detail: String) -> Outcome {
    let o = Outcome { id, name, pass, detail };
    println!(
        "ACCEPTANCE #{} {}: {} ({})",
        o.id,
        o.name,
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o
}

fn image(h: usize, w: usize, c: usize, seed: u64) -> ImageTensor<f32> {
    let v = random_vec(h * w * c, 0.5, seed);
    ImageTensor::new(ndarray::Array3::from_shape_vec((h, w, c), v.iter().map(|&x| (x + 0.5) as f32).collect()).unwrap())
        .unwrap()
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

/// Deterministic sweep over the core properties.
fn property_suite() -> Result<usize, String> {
    let mut checks = 0;
    for seed in 0..24u64 {
        // patchify / unpatchify
        for (h, w, c, p) in [(128, 128, 3, 16), (8, 8, 1, 1), (12, 6, 2, 3)] {
            let img = image(h, w, c, seed);
            let toks = patchify(&img, p).map_err(|e| e.to_string())?;
            check(unpatchify(&toks).map_err(|e| e.to_string())? == img, || format!("round-trip {h}x{w}x{c}/{p}"))?;
            checks += 1;
        }

        // attention rows
        let mut store = ParameterStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = MultiHeadAttention::build(&mut ParamBuilder::new(&mut store, &mut rng), "a", 6, 5, 8, 6, 2).unwrap();
        let q = Array2::from_shape_vec((7, 6), random_vec(42, 3.0, seed)).unwrap();
        let kv = Array2::from_shape_vec((4, 5), random_vec(20, 3.0, seed + 1)).unwrap();
        for head in attention_weights(&TokenSequence::new(q), &TokenSequence::new(kv), &store, &layer).unwrap() {
            for row in head.rows() {
                check((row.sum() - 1.0).abs() <= ROW_SUM_TOL, || format!("attention row sums to {}", row.sum()))?;
                checks += 1;
            }
        }

        // metric and loss oracles
        let a = random_vec(257, 1.0, seed);
        let b = random_vec(257, 1.0, seed + 100);
        let n = random_vec(257, 1.0, seed + 200);
        let got = mse(Array1::from(a.clone()).view(), Array1::from(b.clone()).view()).unwrap();
        let want = mse_oracle(&a, &b);
        check((got - want).abs() <= LOSS_REL_TOL * want, || format!("mse {got} vs {want}"))?;
        let got = triplet_loss(Array1::from(a.clone()).view(), Array1::from(b.clone()).view(), Array1::from(n.clone()).view(), 0.5).unwrap();
        let want = triplet_oracle(&a, &b, &n, 0.5);
        check((got - want).abs() <= LOSS_REL_TOL * want.max(f64::MIN_POSITIVE), || format!("triplet {got} vs {want}"))?;
        let x = image(32, 32, 3, seed);
        let y = image(32, 32, 3, seed + 1);
        let got = psnr(&x, &y).unwrap();
        let want = psnr_oracle(&x.data().iter().copied().collect::<Vec<_>>(), &y.data().iter().copied().collect::<Vec<_>>());
        check((got - want).abs() <= PSNR_TOL_DB, || format!("psnr {got} vs {want}"))?;
        let wa = WatermarkBits::new(8, random_vec(64, 1.0, seed).iter().map(|&v| v > 0.0).collect()).unwrap();
        let wb = WatermarkBits::new(8, random_vec(64, 1.0, seed + 9).iter().map(|&v| v > 0.0).collect()).unwrap();
        check(brr(&wa, &wb).unwrap() == brr_oracle(wa.bits(), wb.bits()), || "brr".into())?;
        checks += 4;

        // identity levels
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (kind, level) in [
            (NoiseKind::Brightness, 1.0),
            (NoiseKind::Contrast, 1.0),
            (NoiseKind::Saturation, 1.0),
            (NoiseKind::Hue, 0.0),
            (NoiseKind::GaussianBlur, 0.0),
            (NoiseKind::Crop, 0.0),
            (NoiseKind::Cutout, 0.0),
            (NoiseKind::SaltPepper, 0.0),
            (NoiseKind::GaussianNoise, 0.0),
        ] {
            let out = apply_noise(&x, &NoiseSpec::new(kind, level).unwrap(), &mut rng).unwrap();
            check(out == x, || format!("{kind} at {level} is not the identity"))?;
            checks += 1;
        }

        // seed determinism of every stochastic operation
        for kind in NoiseKind::ALL {
            for spec in sweep_noises(kind) {
                let run = || apply_noise(&x, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                check(run() == run(), || format!("{kind} is not seed-deterministic"))?;
                checks += 1;
            }
        }
        let aug = CompoundAugmentConfig::default();
        let run = || compound_augment(&x, &aug, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        check(run() == run(), || "compound augmentation".into())?;
        let d = Array2::from_shape_vec((5, 5), random_vec(25, 1.0, seed)).unwrap();
        let run = || dropout(&d, 0.2, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().0;
        check(run() == run(), || "dropout".into())?;
        check(toy_images(2, 32, seed) == toy_images(2, 32, seed), || "toy images".into())?;
        let imgs = toy_images(3, 32, seed);
        check(assign_watermarks(&imgs, 8, seed) == assign_watermarks(&imgs, 8, seed), || "watermark assignment".into())?;
        let tiny = ModelConfig::tiny();
        let cover = image(32, 32, 3, seed);
        let wm = WatermarkBits::new(2, vec![true, false, true, true]).unwrap();
        let e1 = Embedder::<f32>::new(&tiny, seed).unwrap().embed(&cover, &wm).unwrap();
        let e2 = Embedder::<f32>::new(&tiny, seed).unwrap().embed(&cover, &wm).unwrap();
        check(e1 == e2, || "embedder initialization".into())?;
        checks += 5;
    }
    Ok(checks)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let result = property_suite();
    let elapsed = t.elapsed();
    match result {
        Ok(n) => verdict(
            1,
            "property suite",
            elapsed <= PROPERTY_BUDGET,
            format!("{n} checks, {:.1}s <= {}s", elapsed.as_secs_f64(), PROPERTY_BUDGET.as_secs()),
        ),
        Err(e) => verdict(1, "property suite", false, e),
    }
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut checked = 0;
    for (name, run) in common::grad_suite::all() {
        let r = run();
        checked += r.checked;
        worst = worst.max(r.worst);
        max_abs = max_abs.max(r.max_abs_diff);
        if !r.passes() {
            failures.push(format!("{name}: {:e} at {}", r.worst, r.worst_at));
        }
    }
    let elapsed = t.elapsed();
    let pass = failures.is_empty() && elapsed <= GRADIENT_BUDGET;
    let mut detail = format!(
        "{checked} derivatives, worst rel err {worst:.2e} <= {:.0e}, max |analytic - numeric| {max_abs:.1e}, {:.1}s <= {}s",
        common::GRAD_REL_TOL,
        elapsed.as_secs_f64(),
        GRADIENT_BUDGET.as_secs()
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    verdict(2, "gradient checks", pass, detail)
}

/// A fresh checkpoint encoded and decoded again must produce the same bytes.
fn roundtrip_is_exact(ck: &Checkpoint) -> Result<bool, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("ck.ckpt");
    ck.save(&path).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let same = back.to_bytes().map_err(|e| e.to_string())? == ck.to_bytes().map_err(|e| e.to_string())?;
    Ok(same && back.fingerprint() == ck.fingerprint())
}

/// The monotonicity check of the sweep; returns the worst upward step.
fn worst_upward_step(report: &MetricReport) -> (f64, String) {
    let mut worst = f64::NEG_INFINITY;
    let mut at = String::new();
    for kind in NoiseKind::ALL {
        let brrs: Vec<f64> = sweep_noises(kind)
            .iter()
            .map(|s| report.row(kind.name(), Some(s.level)).expect("row per level").brr_percent)
            .collect();
        for w in brrs.windows(2) {
            if w[1] - w[0] > worst {
                worst = w[1] - w[0];
                at = format!("{kind} {:.1}->{:.1}", w[0], w[1]);
            }
        }
    }
    (worst, at)
}

fn validate_report_files(report: &MetricReport) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let json_path = dir.path().join("sweep.json");
    let csv_path = dir.path().join("sweep.csv");
    std::fs::write(&json_path, report.to_json().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    std::fs::write(&csv_path, report.to_csv().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

    let text = std::fs::read_to_string(&json_path).map_err(|e| e.to_string())?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    for key in ["images", "psnr_db", "brr_percent", "rows"] {
        check(value.get(key).is_some(), || format!("json is missing `{key}`"))?;
    }
    for row in value["rows"].as_array().ok_or("rows is not an array")? {
        for key in ["noise", "level", "brr_percent", "psnr_db", "bits_matched", "bits_total"] {
            check(row.get(key).is_some(), || format!("row is missing `{key}`"))?;
        }
    }
    let back = MetricReport::from_json(&text).map_err(|e| e.to_string())?;
    check(back.rows.len() == report.rows.len(), || "json row count".into())?;

    let mut rdr = csv::Reader::from_path(&csv_path).map_err(|e| e.to_string())?;
    let header: Vec<String> = rdr.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    check(
        header == ["noise", "level", "brr_percent", "psnr_db", "bits_matched", "bits_total"],
        || format!("csv header {header:?}"),
    )?;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        check(rec.len() == 6, || "csv row width".into())?;
        check(rec[0].parse::<NoiseKind>().is_ok() || &rec[0] == "none", || format!("noise `{}`", &rec[0]))?;
        check(rec[1].is_empty() || rec[1].parse::<f64>().is_ok(), || "csv level".into())?;
        let b: f64 = rec[2].parse().map_err(|_| "csv brr".to_string())?;
        check((0.0..=100.0).contains(&b), || "csv brr range".into())?;
        check(rec[3] == *"inf" || rec[3].parse::<f64>().is_ok(), || "csv psnr".into())?;
        rec[4].parse::<u64>().map_err(|_| "csv bits_matched".to_string())?;
        rec[5].parse::<u64>().map_err(|_| "csv bits_total".to_string())?;
        rows += 1;
    }
    check(rows == report.rows.len(), || format!("csv has {rows} rows"))?;
    Ok(())
}

fn determinism_and_persistence() -> Result<String, String> {
    let model = ModelConfig::desk();
    let cfg = TrainingConfig {
        stage1_steps: 12,
        stage2_steps: 6,
        stage3_steps: 6,
        ..TrainingConfig::desk()
    };
    let images = toy_images(4, SIZE, 7);
    let a = run_all(&model, &cfg, &images).map_err(|e| e.to_string())?;
    let b = run_all(&model, &cfg, &images).map_err(|e| e.to_string())?;
    let bytes_a = a[2].checkpoint.to_bytes().map_err(|e| e.to_string())?;
    let bytes_b = b[2].checkpoint.to_bytes().map_err(|e| e.to_string())?;
    check(bytes_a == bytes_b, || "stage-3 checkpoints of identical runs differ".into())?;
    for out in &a {
        check(roundtrip_is_exact(&out.checkpoint)?, || {
            format!("{} checkpoint round-trip is not exact", out.checkpoint.stage)
        })?;
    }

    let mut leaky = CompoundAugmentConfig::default();
    leaky.noises.push(NoiseDraw {
        kind: NoiseKind::Jpeg,
        probability: 0.5,
        min_level: 50.0,
        max_level: 90.0,
    });
    let rejected = |r: Result<(), Error>| matches!(&r, Err(Error::Config(m)) if m.contains("test-role"));
    check(rejected(leaky.validate()), || "augmentation config accepted jpeg".into())?;
    let train = TrainingConfig {
        augment: leaky.clone(),
        ..TrainingConfig::desk()
    };
    check(rejected(train.validate()), || "training config accepted jpeg".into())?;
    let run = RunConfig {
        training: train,
        ..RunConfig::desk()
    };
    let parsed = RunConfig::from_toml(&run.to_toml().map_err(|e| e.to_string())?).map(|_| ());
    check(rejected(parsed), || "run config accepted jpeg".into())?;
    for kind in NoiseKind::TEST {
        let mut cfg = CompoundAugmentConfig::default();
        cfg.noises[0].kind = kind;
        cfg.noises[0].min_level = kind.sweep_levels()[0];
        cfg.noises[0].max_level = kind.sweep_levels()[0];
        check(rejected(cfg.validate()), || format!("{kind} accepted in training"))?;
    }
    Ok(format!("{} byte stage-3 checkpoints identical, round-trips exact, test-role noises rejected", bytes_a.len()))
}

fn main() {
    let mut outcomes = vec![criterion_1(), criterion_2()];

    let model = ModelConfig::desk();
    let cfg = TrainingConfig::desk();
    let train = toy_images(IMAGES, SIZE, TRAIN_SEED);
    let held_out = toy_images(IMAGES, SIZE, HELD_OUT_SEED);

    // 3: stage-1 overfit
    let t = Instant::now();
    let s1 = stage1_pretrain_kind(EmbedderKind::CrossAttention, &model, &cfg, &train).expect("stage 1");
    let stage1_time = t.elapsed();
    let ck1 = s1.checkpoint;
    let r1 = evaluate(&ck1, &model, &train, &[], cfg.seed).expect("evaluate stage 1");
    outcomes.push(verdict(
        3,
        "stage-1 desk overfit",
        cfg.stage1_steps <= MAX_STAGE1_STEPS
            && r1.brr_percent >= MIN_TRAIN_BRR
            && r1.psnr_db >= MIN_TRAIN_PSNR
            && stage1_time <= STAGE1_BUDGET,
        format!(
            "{} steps, BRR {:.2}% >= {MIN_TRAIN_BRR}%, PSNR {:.2} dB >= {MIN_TRAIN_PSNR} dB, {:.0}s <= {}s",
            cfg.stage1_steps,
            r1.brr_percent,
            r1.psnr_db,
            stage1_time.as_secs_f64(),
            STAGE1_BUDGET.as_secs()
        ),
    ));

    // 4: invariant-domain ablation
    let t = Instant::now();
    let s2 = stage2_train_encoder(&cfg, &ck1, &train).expect("stage 2");
    let s3 = stage3_finetune(&cfg, &s2.checkpoint, &train).expect("stage 3");
    let ablation = ablate_invariant_domain(&ck1, &s3.checkpoint, &train, &cfg.augment, cfg.seed).expect("ablation");
    let ablation_time = t.elapsed();
    let compound = |r: &MetricReport| r.row("compound", None).map(|x| x.brr_percent).unwrap_or(f64::NAN);
    let gain = ablation.augmented_gain();
    outcomes.push(verdict(
        4,
        "invariant-domain ablation",
        gain >= MIN_ABLATION_GAIN && ablation_time <= ABLATION_BUDGET,
        format!(
            "augmented BRR {:.2}% (invariant) vs {:.2}% (direct), gain {gain:.2} >= {MIN_ABLATION_GAIN} points; \
             clean {:.2}% vs {:.2}%; {:.0}s <= {}s",
            compound(&ablation.invariant),
            compound(&ablation.direct),
            ablation.invariant.brr_percent,
            ablation.direct.brr_percent,
            ablation_time.as_secs_f64(),
            ABLATION_BUDGET.as_secs()
        ),
    ));

    // 5: cross-attention vs convolutional embedder, same budget
    let conv = stage1_pretrain_kind(EmbedderKind::Conv, &model, &cfg, &train).expect("conv stage 1");
    let cmp = compare_embedders(&ck1, &conv.checkpoint, &held_out, cfg.seed).expect("embedder comparison");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (cross_psnr, conv_psnr) = (mean(&cmp.cross_psnr), mean(&cmp.conv_psnr));
    outcomes.push(verdict(
        5,
        "cross-attention vs conv embedder",
        cmp.cross_psnr.len() >= 8 && cross_psnr > conv_psnr,
        format!(
            "held-out mean PSNR {cross_psnr:.2} dB (cross) > {conv_psnr:.2} dB (conv) over {} images; BRR {:.2}% vs {:.2}%",
            cmp.cross_psnr.len(),
            cmp.cross.brr_percent,
            cmp.conv.brr_percent
        ),
    ));

    // 6: noise sweep
    let noises: Vec<NoiseSpec> = NoiseKind::ALL.iter().flat_map(|&k| sweep_noises(k)).collect();
    let sweep = evaluate(&s3.checkpoint, &model, &train, &noises, cfg.seed).expect("sweep");
    let (worst, at) = worst_upward_step(&sweep);
    let schema = validate_report_files(&sweep);
    outcomes.push(verdict(
        6,
        "noise-tolerance sweep",
        worst <= SWEEP_SLACK && schema.is_ok() && sweep.rows.len() == noises.len() + 1,
        format!(
            "{} rows, largest upward BRR step {worst:.2} <= {SWEEP_SLACK} ({at}); schema {}",
            sweep.rows.len(),
            match &schema {
                Ok(()) => "valid".to_string(),
                Err(e) => format!("invalid: {e}"),
            }
        ),
    ));
    for r in &sweep.rows {
        println!(
            "  sweep {:<15} {:>6} brr {:>6.2}% psnr {:>6.2} dB",
            r.noise,
            r.level.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
            r.brr_percent,
            r.psnr_db
        );
    }

    // 7: determinism and persistence
    let det = determinism_and_persistence();
    let persisted = roundtrip_is_exact(&s3.checkpoint).unwrap_or(false);
    outcomes.push(verdict(
        7,
        "determinism and persistence",
        det.is_ok() && persisted && s3.checkpoint.stage == Stage::Stage3,
        match det {
            Ok(s) => format!("{s}; trained stage-3 round-trip exact: {persisted}"),
            Err(e) => e,
        },
    ));

    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("#{} {}", o.id, o.name))
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", outcomes.len());
    } else {
        eprintln!("acceptance: failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
