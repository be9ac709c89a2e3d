//! Every image attack at each of its sweep levels, plus a few draws of the
//! probabilistic training augmentation. Writes PNGs when given a directory.
//!
//! cargo run --example attacks -- [out_dir]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robustmark::data::{save_png, toy_images};
use robustmark::objectives::psnr;
use robustmark::{apply_noise, compound_augment, CompoundAugmentConfig, NoiseKind, NoiseSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir)?;
    }
    let img = toy_images(1, 128, 11).remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    println!("{:<15} {:<6} {:>7} {:>9}", "noise", "role", "level", "psnr_db");
    for kind in NoiseKind::ALL {
        for level in kind.sweep_levels() {
            let spec = NoiseSpec::new(kind, level)?;
            let attacked = apply_noise(&img, &spec, &mut rng)?;
            println!(
                "{:<15} {:<6} {:>7} {:>9.2}",
                kind.name(),
                format!("{:?}", kind.role()).to_lowercase(),
                level,
                psnr(&img, &attacked)?
            );
            if let Some(dir) = &out {
                save_png(&attacked, &dir.join(format!("{}_{level}.png", kind.name())))?;
            }
        }
    }

    let aug = CompoundAugmentConfig::default();
    println!("\ncompound training augmentation ({} candidate noises):", aug.noises.len());
    for draw in 0..4 {
        let attacked = compound_augment(&img, &aug, &mut rng)?;
        println!("  draw {draw}: psnr {:.2} dB", psnr(&img, &attacked)?);
    }

    // Test-role attacks never appear in training configs.
    let mut leaky = aug.clone();
    leaky.noises[0].kind = NoiseKind::Jpeg;
    println!("with jpeg added: {}", leaky.validate().unwrap_err());
    Ok(())
}
