//! Cross-attention vs convolutional embedder on held-out images, and
//! extraction with vs without the invariant domain under augmentation.
//!
//! The default tiny model runs in seconds but is too small for the
//! invariant domain to pay off; `--desk` uses 128x128 covers and takes
//! about half an hour on one core.
//!
//! cargo run --release --example ablations -- [--desk]

use robustmark::data::toy_images;
use robustmark::train::{ablate_embedders, ablate_invariant_domain};
use robustmark::train::{run_all, TrainingConfig};
use robustmark::ModelConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (model, cfg) = if std::env::args().any(|a| a == "--desk") {
        (ModelConfig::desk(), TrainingConfig::desk())
    } else {
        let cfg = TrainingConfig {
            stage1_steps: 600,
            stage2_steps: 100,
            stage3_steps: 400,
            ..TrainingConfig::desk()
        };
        (ModelConfig::tiny(), cfg)
    };
    let train = toy_images(8, model.image_size, 1);
    let held_out = toy_images(8, model.image_size, 2);

    let e = ablate_embedders(&model, &cfg, &train, &held_out)?;
    println!("embedder     psnr_db  brr%   residual mean/max");
    println!(
        "cross        {:7.2}  {:5.1}  {:.4}/{:.4}",
        e.cross.psnr_db, e.cross.brr_percent, e.cross_residual.mean_abs, e.cross_residual.max_abs
    );
    println!(
        "conv         {:7.2}  {:5.1}  {:.4}/{:.4}",
        e.conv.psnr_db, e.conv.brr_percent, e.conv_residual.mean_abs, e.conv_residual.max_abs
    );
    println!("psnr gain of cross attention: {:+.2} dB\n", e.psnr_gain());

    let [s1, _, s3] = run_all(&model, &cfg, &train)?;
    let a = ablate_invariant_domain(&s1.checkpoint, &s3.checkpoint, &train, &cfg.augment, cfg.seed)?;
    for (name, r) in [("direct", &a.direct), ("invariant", &a.invariant)] {
        for row in &r.rows {
            println!("{name:<10} {:<9} brr {:5.1}%", row.noise, row.brr_percent);
        }
    }
    println!("augmented brr gain: {:+.1} points", a.augmented_gain());
    Ok(())
}
