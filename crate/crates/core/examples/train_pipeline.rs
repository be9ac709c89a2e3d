//! All three training stages on synthetic images, followed by a JPEG sweep
//! of the final model. Checkpoints go to the given directory.
//!
//! cargo run --release --example train_pipeline -- [out_dir] [--desk]

use robustmark::checkpoint::Stage;
use robustmark::data::toy_images;
use robustmark::train::{evaluate, run_all, sweep_noises, TrainingConfig};
use robustmark::{ModelConfig, NoiseKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let desk = args.iter().any(|a| a == "--desk");
    let out = std::path::PathBuf::from(args.iter().find(|a| !a.starts_with("--")).map_or("runs/example", |s| s));
    std::fs::create_dir_all(&out)?;

    // The desk model needs tens of minutes on one core; tiny takes seconds.
    let (model, cfg, size) = if desk {
        (ModelConfig::desk(), TrainingConfig::desk(), 128)
    } else {
        let cfg = TrainingConfig {
            stage1_steps: 600,
            stage2_steps: 100,
            stage3_steps: 400,
            ..TrainingConfig::desk()
        };
        (ModelConfig::tiny(), cfg, 32)
    };
    let images = toy_images(8, size, 1);

    let stages = run_all(&model, &cfg, &images)?;
    for (outcome, stage) in stages.iter().zip([Stage::Stage1, Stage::Stage2, Stage::Stage3]) {
        let ck = &outcome.checkpoint;
        let path = out.join(format!("stage{}.ckpt", stage.number()));
        ck.save(&path)?;
        print!(
            "{stage}: loss {:.4} -> {:.4}",
            outcome.log.first_loss().unwrap_or(f64::NAN),
            outcome.log.last_loss().unwrap_or(f64::NAN)
        );
        if let (Some(p), Some(b)) = (ck.metric("train_psnr_db"), ck.metric("train_brr_percent")) {
            print!(", train psnr {p:.2} dB, brr {b:.1}%");
        }
        println!("  [{}]", path.display());
    }

    let report = evaluate(&stages[2].checkpoint, &model, &images, &sweep_noises(NoiseKind::Jpeg), cfg.seed)?;
    println!("\n{}", report.to_csv()?);
    Ok(())
}
