//! Dataset ingestion, synthetic toy images and watermark generation.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{luma, resize_bilinear};
use crate::tensor::ImageTensor;
use crate::watermark::WatermarkBits;

/// Where images come from and how they are split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// Folder of PNG/JPEG files. When absent, synthetic toy images are used.
    pub dir: Option<PathBuf>,
    pub train_size: usize,
    pub test_size: usize,
    pub image_size: usize,
    pub shuffle_seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            dir: None,
            train_size: 8,
            test_size: 8,
            image_size: 128,
            shuffle_seed: 0,
        }
    }
}

/// Disjoint train and test splits.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<ImageTensor<f32>>,
    pub test: Vec<ImageTensor<f32>>,
    /// Files that could not be decoded.
    pub skipped: usize,
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Decode one file to a unit-range 3-channel tensor. Grayscale inputs are
/// replicated across channels and alpha is dropped.
pub fn load_image(path: &Path) -> Result<ImageTensor<f32>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    ImageTensor::from_u8(h as usize, w as usize, 3, img.as_raw())
}

pub fn load_resized(path: &Path, size: usize) -> Result<ImageTensor<f32>> {
    Ok(resize_bilinear(&load_image(path)?, size, size))
}

/// Write an image as 8-bit PNG.
pub fn save_png(img: &ImageTensor<f32>, path: &Path) -> Result<()> {
    let (h, w, c) = img.shape();
    let color = match c {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        other => return Err(Error::Config(format!("cannot write {other}-channel image"))),
    };
    image::save_buffer_with_format(path, &img.to_u8(), w as u32, h as u32, color, image::ImageFormat::Png)?;
    Ok(())
}

/// Read every decodable image in `spec.dir`, in a seed-determined order.
/// Undecodable files are skipped and counted; an empty result is an error.
pub fn ingest_images(spec: &DatasetSpec) -> Result<Dataset> {
    let Some(dir) = &spec.dir else {
        return Ok(toy_dataset(spec));
    };
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    files.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.shuffle_seed));

    let wanted = spec.train_size + spec.test_size;
    let mut images = Vec::new();
    let mut skipped = 0;
    for f in &files {
        if images.len() == wanted {
            break;
        }
        match load_resized(f, spec.image_size) {
            Ok(img) => images.push(img),
            Err(e) => {
                log::warn!("skipping {}: {e}", f.display());
                skipped += 1;
            }
        }
    }
    if images.is_empty() {
        return Err(Error::Dataset(format!("no decodable images in {}", dir.display())));
    }
    if skipped > 0 {
        log::warn!("{skipped} undecodable file(s) skipped");
    }
    let test = images.split_off(spec.train_size.min(images.len()));
    Ok(Dataset {
        train: images,
        test,
        skipped,
    })
}

/// Smooth synthetic scene: a few low-frequency colour waves and soft
/// discs, with mean luminance near one half.
pub fn toy_image<R: Rng>(size: usize, rng: &mut R) -> ImageTensor<f32> {
    struct Wave {
        fy: f64,
        fx: f64,
        phase: f64,
        amp: [f64; 3],
    }
    struct Disc {
        cy: f64,
        cx: f64,
        r: f64,
        color: [f64; 3],
    }
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
    let waves: Vec<Wave> = (0..3)
        .map(|_| Wave {
            fy: rng.random_range(-2.5..2.5),
            fx: rng.random_range(-2.5..2.5),
            phase: rng.random_range(0.0..2.0 * PI),
            amp: std::array::from_fn(|_| rng.random_range(-0.15..0.15)),
        })
        .collect();
    let discs: Vec<Disc> = (0..2)
        .map(|_| Disc {
            cy: rng.random_range(0.15..0.85),
            cx: rng.random_range(0.15..0.85),
            r: rng.random_range(0.08..0.25),
            color: std::array::from_fn(|_| rng.random_range(-0.25..0.25)),
        })
        .collect();
    let n = size as f64;
    ImageTensor::from_fn(size, size, 3, |(y, x, c)| {
        let (u, v) = ((y as f64 + 0.5) / n, (x as f64 + 0.5) / n);
        let mut val = base[c];
        for w in &waves {
            val += w.amp[c] * (2.0 * PI * (w.fy * u + w.fx * v) + w.phase).sin();
        }
        for d in &discs {
            let dist = ((u - d.cy).powi(2) + (v - d.cx).powi(2)).sqrt();
            let edge = 1.0 / (1.0 + ((dist - d.r) / 0.02).exp());
            val += d.color[c] * edge;
        }
        val.clamp(0.0, 1.0) as f32
    })
}

pub fn toy_images(count: usize, size: usize, seed: u64) -> Vec<ImageTensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| toy_image(size, &mut rng)).collect()
}

/// Synthetic dataset with the split sizes of `spec`.
pub fn toy_dataset(spec: &DatasetSpec) -> Dataset {
    let mut all = toy_images(spec.train_size + spec.test_size, spec.image_size, spec.shuffle_seed);
    let test = all.split_off(spec.train_size);
    Dataset {
        train: all,
        test,
        skipped: 0,
    }
}

/// Binarize an image into a watermark: bilinear resize to `side × side`,
/// 8-bit luma, bit set iff the value is at least 128.
pub fn generate_watermark(img: &ImageTensor<f32>, side: usize) -> WatermarkBits {
    let small = resize_bilinear(img, side, side);
    let bits = (0..side * side)
        .map(|i| {
            let (y, x) = (i / side, i % side);
            let v = if small.channels() >= 3 {
                luma(small.get(y, x, 0) as f64, small.get(y, x, 1) as f64, small.get(y, x, 2) as f64)
            } else {
                small.get(y, x, 0) as f64
            };
            (v.clamp(0.0, 1.0) * 255.0).round() >= 128.0
        })
        .collect();
    WatermarkBits::new(side, bits).expect("side*side bits")
}

/// Index of a random image in `0..n` other than `i` (or `i` itself when it
/// is the only one).
pub fn other_index<R: Rng>(i: usize, n: usize, rng: &mut R) -> usize {
    if n < 2 {
        return i;
    }
    let j = rng.random_range(0..n - 1);
    if j >= i {
        j + 1
    } else {
        j
    }
}

/// Watermark for every image, each generated from a random other image of
/// the same set.
pub fn assign_watermarks(images: &[ImageTensor<f32>], side: usize, seed: u64) -> Vec<WatermarkBits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..images.len())
        .map(|i| generate_watermark(&images[other_index(i, images.len(), &mut rng)], side))
        .collect()
}
