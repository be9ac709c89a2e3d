//! Patch tokenisation of a cover image and the watermark bit grid, and one
//! untrained cross-attention layer from cover tokens to watermark tokens.
//!
//! cargo run --example patches_and_watermarks

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robustmark::data::{generate_watermark, toy_images};
use robustmark::nn::{attention_weights, multi_head_attention, MultiHeadAttention};
use robustmark::params::{ParamBuilder, ParameterStore};
use robustmark::{patchify, unpatchify, ModelConfig, WatermarkBits};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::desk();
    let cover = toy_images(1, cfg.image_size, 0).remove(0);

    let tokens = patchify(&cover, cfg.patch_cover)?;
    let (n, d) = tokens.data().dim();
    println!(
        "{}x{} cover -> {n} tokens of width {d} (patch {})",
        cfg.image_size, cfg.image_size, cfg.patch_cover
    );
    let back = unpatchify(&tokens)?;
    assert_eq!(back.data(), cover.data());
    println!("unpatchify restores the cover bit for bit");

    // Watermarks are derived from image content so every cover has its own.
    let wm = generate_watermark(&cover, cfg.wm_size);
    println!("{} bit watermark: {}", wm.len(), wm.to_hex());
    for r in 0..wm.side() {
        let row: String = (0..wm.side()).map(|c| if wm.get(r, c) { '#' } else { '.' }).collect();
        println!("  {row}");
    }

    let parsed = WatermarkBits::from_hex(wm.side(), &wm.to_hex())?;
    assert_eq!(parsed, wm);
    let wm_tokens = patchify(&wm.to_image::<f32>(), cfg.patch_wm)?;
    println!(
        "watermark as an image tokenises to {} tokens of width {}",
        wm_tokens.data().nrows(),
        wm_tokens.data().ncols()
    );

    let mut store = ParameterStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = MultiHeadAttention::build(
        &mut ParamBuilder::new(&mut store, &mut rng),
        "cross",
        tokens.dim(),
        wm_tokens.dim(),
        cfg.attn_dim,
        cfg.attn_dim,
        cfg.heads,
    )?;
    let fused = multi_head_attention(&tokens, &wm_tokens, &store, &layer)?;
    println!("cover attends to watermark: output {:?}", fused.data().dim());
    let probs = attention_weights(&tokens, &wm_tokens, &store, &layer)?;
    for (h, p) in probs.iter().enumerate() {
        let worst = p.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0f32, f32::max);
        println!("  head {h}: {:?} weights, max |row sum - 1| = {worst:.1e}", p.dim());
    }
    Ok(())
}
