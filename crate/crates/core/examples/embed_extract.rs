//! Embed a watermark into a PNG and read it back, optionally after an
//! attack. Uses a saved checkpoint when one is given. Otherwise it trains a
//! desk-size stage-1 model (a few minutes on one core) and caches it in the
//! temp directory.
//!
//! cargo run --release --example embed_extract -- [checkpoint] [noise:level]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robustmark::checkpoint::Checkpoint;
use robustmark::data::{generate_watermark, load_image, save_png, toy_images};
use robustmark::objectives::{brr, psnr};
use robustmark::train::{stage1_pretrain, Pipeline, TrainingConfig};
use robustmark::{apply_noise, ModelConfig, NoiseSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("robustmark_embed_extract");
    std::fs::create_dir_all(&dir)?;
    let mut args = std::env::args().skip(1);
    let ck = match args.next() {
        Some(path) => Checkpoint::load(path.as_ref())?,
        None => {
            let cached = dir.join("stage1.ckpt");
            if !cached.exists() {
                println!("training a desk stage-1 model into {}", cached.display());
                let model = ModelConfig::desk();
                let train = toy_images(8, model.image_size, 1);
                stage1_pretrain(&model, &TrainingConfig::desk(), &train)?.checkpoint.save(&cached)?;
            }
            Checkpoint::load(&cached)?
        }
    };
    let attack = args.next().map(|s| s.parse::<NoiseSpec>()).transpose()?;
    println!("{} checkpoint, {:?} embedder", ck.stage, ck.embedder_kind);

    let pipeline = Pipeline::from_checkpoint(&ck)?;
    let cover = toy_images(1, ck.config.image_size, 99).remove(0);
    let wm = generate_watermark(&cover, ck.config.wm_size);

    let marked_path = dir.join("marked.png");
    save_png(&pipeline.embed(&cover, &wm)?, &marked_path)?;

    // Read back through 8-bit PNG like any real consumer would.
    let mut marked = load_image(&marked_path)?;
    println!("psnr(cover, marked) = {:.2} dB  [{}]", psnr(&cover, &marked)?, marked_path.display());
    if let Some(spec) = attack {
        marked = apply_noise(&marked, &spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        println!("after {spec}: psnr vs cover {:.2} dB", psnr(&cover, &marked)?);
    }

    let found = pipeline.extract(&marked)?;
    println!("embedded  {}", wm.to_hex());
    println!("extracted {}", found.to_hex());
    println!("bit recovery {:.1}%", brr(&wm, &found)?);
    Ok(())
}
