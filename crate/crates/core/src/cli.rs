//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration or input encoding
//! error, 3 missing prerequisite or unusable checkpoint, 4 numeric
//! divergence, 5 I/O or dataset failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::augment::{NoiseKind, NoiseSpec};
use crate::checkpoint::{Checkpoint, Stage};
use crate::data::{generate_watermark, ingest_images, load_image, save_png};
use crate::error::{Error, Result};
use crate::imageops::resize_bilinear;
use crate::objectives::{brr, psnr, MetricReport};
use crate::run_config::{default_output_dir, RunConfig};
use crate::train::{
    ablate_embedders, ablate_invariant_domain, evaluate, stage1_pretrain_kind, stage2_train_encoder, stage3_finetune,
    sweep_noises, Pipeline, StageOutcome,
};
use crate::watermark::WatermarkBits;

#[derive(Debug, Parser)]
#[command(name = "robustmark", version, about = "Robust image watermarking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one or all training stages.
    Train(TrainArgs),
    /// Embed a watermark into a cover image.
    Embed(EmbedArgs),
    /// Recover a watermark from an image.
    Extract(ExtractArgs),
    /// Measure PSNR and bit recovery under attacks.
    Evaluate(EvaluateArgs),
    /// Run one of the ablation studies.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration (defaults are used for missing keys).
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub stage: StageArg,
    /// Checkpoint of the previous stage (default: the one in the output directory).
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub cover: PathBuf,
    /// 16 hex digits (row-major, most significant bit first) or an image path.
    #[arg(long)]
    pub wm: String,
    /// Output image; PNG keeps it lossless.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub image: PathBuf,
    /// Expected watermark as hex; prints the bit recovery rate.
    #[arg(long)]
    pub expected: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Image folder (default: the dataset of the run configuration).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Run configuration supplying dataset and seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `none`, a comma-separated list like `jpeg:50,blur:2.0`,
    /// `sweep:<noise>` or `sweep` for every attack.
    #[arg(long, default_value = "none")]
    pub noises: String,
    /// Report path; a `.csv` twin is written next to the JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluate on the training split instead of the test split.
    #[arg(long)]
    pub train_split: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblationMode {
    CrossVsConv,
    IdVsNoid,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub mode: AblationMode,
    pub config: Option<PathBuf>,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Domain(_) | Error::Shape(_) => 2,
        Error::MissingPrerequisite(_) | Error::Checkpoint(_) => 3,
        Error::Divergence { .. } | Error::Numeric(_) => 4,
        Error::Io { .. } | Error::Image(_) | Error::Dataset(_) | Error::Serde(_) => 5,
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn ckpt_name(stage: Stage) -> String {
    format!("{stage}.ckpt")
}

fn default_ckpt(path: Option<PathBuf>) -> PathBuf {
    path.unwrap_or_else(|| default_output_dir().join(ckpt_name(Stage::Stage3)))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingPrerequisite(format!("checkpoint {} not found", path.display())));
    }
    Checkpoint::load(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_stage(cfg: &RunConfig, out: &StageOutcome) -> Result<()> {
    let dir = &cfg.output.dir;
    let stage = out.checkpoint.stage;
    out.checkpoint.save(&dir.join(ckpt_name(stage)))?;
    write_text(&dir.join(format!("{stage}_log.json")), &out.log.to_json()?)?;
    let metrics: Vec<String> = out
        .checkpoint
        .metrics
        .iter()
        .map(|m| format!("{}={:.4}", m.name, m.value))
        .collect();
    println!("{stage}: {}", metrics.join(" "));
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let dir = cfg.output.dir.clone();
    cfg.save_effective(&dir)?;
    let previous = |stage: Stage| -> Result<Checkpoint> {
        let path = a.resume.clone().unwrap_or_else(|| dir.join(ckpt_name(stage)));
        let ck = load_checkpoint(&path)?;
        if ck.config != cfg.model {
            return Err(Error::Checkpoint(format!(
                "{} was trained with a different model configuration",
                path.display()
            )));
        }
        Ok(ck)
    };
    let stages: &[u8] = match a.stage {
        StageArg::One => &[1],
        StageArg::Two => &[2],
        StageArg::Three => &[3],
        StageArg::All => &[1, 2, 3],
    };
    // Check prerequisites before loading any images.
    match stages[0] {
        2 => drop(previous(Stage::Stage1)?),
        3 => drop(previous(Stage::Stage2)?),
        _ => {}
    }
    let data = ingest_images(&cfg.dataset)?;
    let mut last: Option<Checkpoint> = None;
    for &s in stages {
        let out = match s {
            1 => stage1_pretrain_kind(cfg.embedder, &cfg.model, &cfg.training, &data.train)?,
            2 => {
                let prev = match last.take() {
                    Some(c) => c,
                    None => previous(Stage::Stage1)?,
                };
                stage2_train_encoder(&cfg.training, &prev, &data.train)?
            }
            _ => {
                let prev = match last.take() {
                    Some(c) => c,
                    None => previous(Stage::Stage2)?,
                };
                stage3_finetune(&cfg.training, &prev, &data.train)?
            }
        };
        save_stage(&cfg, &out)?;
        last = Some(out.checkpoint);
    }
    Ok(())
}

fn parse_watermark(spec: &str, side: usize) -> Result<WatermarkBits> {
    let looks_hex = spec.len() == (side * side).div_ceil(4) && spec.chars().all(|c| c.is_ascii_hexdigit());
    if looks_hex {
        return WatermarkBits::from_hex(side, spec);
    }
    let path = Path::new(spec);
    if path.exists() {
        return Ok(generate_watermark(&load_image(path)?, side));
    }
    Err(Error::Config(format!(
        "`{spec}` is neither {} hex digits nor an image file",
        (side * side).div_ceil(4)
    )))
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let ck = load_checkpoint(&default_ckpt(a.ckpt))?;
    let side = ck.config.wm_size;
    let wm = parse_watermark(&a.wm, side)?;
    let pipeline = Pipeline::from_checkpoint(&ck)?;
    let cover = resize_bilinear(&load_image(&a.cover)?, ck.config.image_size, ck.config.image_size);
    let marked = pipeline.embed(&cover, &wm)?;
    save_png(&marked, &a.out)?;
    println!("watermark {}", wm.to_hex());
    println!("psnr_db {:.4}", psnr(&cover, &marked)?);
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let ck = load_checkpoint(&default_ckpt(a.ckpt))?;
    let side = ck.config.wm_size;
    let expected = a.expected.as_deref().map(|h| WatermarkBits::from_hex(side, h)).transpose()?;
    let pipeline = Pipeline::from_checkpoint(&ck)?;
    let img = resize_bilinear(&load_image(&a.image)?, ck.config.image_size, ck.config.image_size);
    let bits = pipeline.extract(&img)?;
    println!("{}", bits.to_hex());
    if let Some(e) = expected {
        println!("brr_percent {:.4}", brr(&e, &bits)?);
    }
    Ok(())
}

/// Parse the `--noises` argument.
pub fn parse_noise_list(text: &str) -> Result<Vec<NoiseSpec>> {
    let text = text.trim();
    if text.is_empty() || text == "none" {
        return Ok(Vec::new());
    }
    if text == "sweep" {
        return Ok(NoiseKind::ALL.iter().flat_map(|&k| sweep_noises(k)).collect());
    }
    if let Some(name) = text.strip_prefix("sweep:") {
        return Ok(sweep_noises(name.parse()?));
    }
    text.split(',').map(|s| s.trim().parse()).collect()
}

fn print_report(report: &MetricReport) {
    println!("{:<16} {:>8} {:>10} {:>10}", "noise", "level", "brr_%", "psnr_db");
    for r in &report.rows {
        let level = r.level.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
        println!("{:<16} {:>8} {:>10.2} {:>10.2}", r.noise, level, r.brr_percent, r.psnr_db);
    }
}

fn write_report(report: &MetricReport, out: &Path) -> Result<()> {
    write_text(&out.with_extension("json"), &report.to_json()?)?;
    write_text(&out.with_extension("csv"), &report.to_csv()?)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let noises = parse_noise_list(&a.noises)?;
    let mut cfg = load_config(a.config.as_deref())?;
    let ck = load_checkpoint(&default_ckpt(a.ckpt))?;
    cfg.model = ck.config.clone();
    if let Some(dir) = a.dataset {
        cfg.dataset.dir = Some(dir);
    }
    cfg.dataset.image_size = cfg.model.image_size;
    let data = ingest_images(&cfg.dataset)?;
    let images = if a.train_split || data.test.is_empty() {
        &data.train
    } else {
        &data.test
    };
    let report = evaluate(&ck, &cfg.model, images, &noises, cfg.training.seed)?;
    print_report(&report);
    if let Some(out) = a.out {
        write_report(&report, &out)?;
        if let Some(dir) = out.parent() {
            cfg.save_effective(if dir.as_os_str().is_empty() { Path::new(".") } else { dir })?;
        }
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let dir = cfg.output.dir.join(match a.mode {
        AblationMode::CrossVsConv => "ablation_cross_vs_conv",
        AblationMode::IdVsNoid => "ablation_id_vs_noid",
    });
    cfg.save_effective(&dir)?;
    let data = ingest_images(&cfg.dataset)?;
    match a.mode {
        AblationMode::CrossVsConv => {
            let held_out = if data.test.is_empty() { &data.train } else { &data.test };
            let r = ablate_embedders(&cfg.model, &cfg.training, &data.train, held_out)?;
            println!("arm     psnr_db  brr_%  residual_mean  residual_max");
            for (name, rep, res) in [("cross", &r.cross, r.cross_residual), ("conv", &r.conv, r.conv_residual)] {
                println!(
                    "{name:<7} {:>7.2} {:>6.2} {:>14.5} {:>13.5}",
                    rep.psnr_db, rep.brr_percent, res.mean_abs, res.max_abs
                );
            }
            println!("psnr_gain_db {:.4}", r.psnr_gain());
            write_text(
                &dir.join("report.json"),
                &serde_json::to_string_pretty(&r).map_err(|e| Error::Serde(e.to_string()))?,
            )?;
        }
        AblationMode::IdVsNoid => {
            let s1 = stage1_pretrain_kind(cfg.embedder, &cfg.model, &cfg.training, &data.train)?;
            let s2 = stage2_train_encoder(&cfg.training, &s1.checkpoint, &data.train)?;
            let s3 = stage3_finetune(&cfg.training, &s2.checkpoint, &data.train)?;
            let r = ablate_invariant_domain(
                &s1.checkpoint,
                &s3.checkpoint,
                &data.train,
                &cfg.training.augment,
                cfg.training.seed,
            )?;
            println!("path       clean_brr_%  augmented_brr_%");
            for (name, rep) in [("direct", &r.direct), ("invariant", &r.invariant)] {
                let aug = rep.row("compound", None).map(|x| x.brr_percent).unwrap_or(f64::NAN);
                println!("{name:<10} {:>11.2} {:>16.2}", rep.brr_percent, aug);
            }
            println!("augmented_gain_points {:.4}", r.augmented_gain());
            write_text(
                &dir.join("report.json"),
                &serde_json::to_string_pretty(&r).map_err(|e| Error::Serde(e.to_string()))?,
            )?;
        }
    }
    Ok(())
}
