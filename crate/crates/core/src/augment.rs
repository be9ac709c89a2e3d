//! Training noises and test-time attacks.
//!
//! Noises are split into two disjoint roles. Training noises (horizontal
//! flip, Gaussian blur, solarization, brightness, contrast, hue, saturation)
//! are the only ones the compound augmentation may draw from; test noises
//! (crop, cutout, JPEG, histogram equalization, salt-and-pepper, Gaussian
//! noise) are reserved for evaluation.

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use image::{ColorType, ImageDecoder};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{hsv_to_rgb, luma, resize_bilinear, rgb_to_hsv, rgb_to_ycbcr, ycbcr_to_rgb};
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Hflip,
    GaussianBlur,
    Solarize,
    Crop,
    Cutout,
    Jpeg,
    Brightness,
    Contrast,
    Hue,
    Saturation,
    HistEq,
    SaltPepper,
    GaussianNoise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRole {
    Train,
    Test,
}

impl NoiseKind {
    /// Every noise, in the canonical table order.
    pub const ALL: [NoiseKind; 13] = [
        NoiseKind::Hflip,
        NoiseKind::GaussianBlur,
        NoiseKind::Solarize,
        NoiseKind::Crop,
        NoiseKind::Cutout,
        NoiseKind::Jpeg,
        NoiseKind::Brightness,
        NoiseKind::Contrast,
        NoiseKind::Hue,
        NoiseKind::Saturation,
        NoiseKind::HistEq,
        NoiseKind::SaltPepper,
        NoiseKind::GaussianNoise,
    ];

    /// Training noises in the order compound augmentation applies them.
    pub const TRAIN: [NoiseKind; 7] = [
        NoiseKind::Hflip,
        NoiseKind::GaussianBlur,
        NoiseKind::Solarize,
        NoiseKind::Brightness,
        NoiseKind::Contrast,
        NoiseKind::Hue,
        NoiseKind::Saturation,
    ];

    pub const TEST: [NoiseKind; 6] = [
        NoiseKind::Crop,
        NoiseKind::Cutout,
        NoiseKind::Jpeg,
        NoiseKind::HistEq,
        NoiseKind::SaltPepper,
        NoiseKind::GaussianNoise,
    ];

    pub fn role(self) -> NoiseRole {
        if Self::TRAIN.contains(&self) {
            NoiseRole::Train
        } else {
            NoiseRole::Test
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Hflip => "hflip",
            NoiseKind::GaussianBlur => "blur",
            NoiseKind::Solarize => "solarize",
            NoiseKind::Crop => "crop",
            NoiseKind::Cutout => "cutout",
            NoiseKind::Jpeg => "jpeg",
            NoiseKind::Brightness => "brightness",
            NoiseKind::Contrast => "contrast",
            NoiseKind::Hue => "hue",
            NoiseKind::Saturation => "saturation",
            NoiseKind::HistEq => "hist_eq",
            NoiseKind::SaltPepper => "salt_pepper",
            NoiseKind::GaussianNoise => "gaussian_noise",
        }
    }

    /// Whether the noise has no strength parameter.
    pub fn is_parameterless(self) -> bool {
        matches!(self, NoiseKind::Hflip | NoiseKind::HistEq)
    }

    /// Level applied when a parameterless noise is named without one.
    pub fn default_level(self) -> f64 {
        1.0
    }

    pub fn check_level(self, level: f64) -> Result<()> {
        let ok = level.is_finite()
            && match self {
                NoiseKind::Hflip => level == 0.0 || level == 1.0,
                NoiseKind::HistEq => true,
                NoiseKind::GaussianBlur | NoiseKind::GaussianNoise => level >= 0.0,
                NoiseKind::Brightness | NoiseKind::Contrast | NoiseKind::Saturation => level >= 0.0,
                NoiseKind::Solarize | NoiseKind::Cutout | NoiseKind::SaltPepper => (0.0..=1.0).contains(&level),
                NoiseKind::Crop => (0.0..1.0).contains(&level),
                NoiseKind::Hue => (-1.0..=1.0).contains(&level),
                NoiseKind::Jpeg => (1.0..=100.0).contains(&level) && level.fract() == 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("level {level} is outside the domain of `{}`", self.name())))
        }
    }

    /// Escalating attack levels, mildest first.
    pub fn sweep_levels(self) -> Vec<f64> {
        match self {
            NoiseKind::Jpeg => vec![90.0, 50.0, 10.0],
            NoiseKind::Cutout => vec![0.1, 0.2, 0.4],
            NoiseKind::SaltPepper => vec![0.01, 0.05, 0.1],
            NoiseKind::GaussianBlur => vec![0.5, 1.0, 2.0],
            NoiseKind::GaussianNoise => vec![0.02, 0.06, 0.1],
            NoiseKind::Hue => vec![0.1, 0.2, 0.25],
            NoiseKind::Brightness | NoiseKind::Contrast => vec![1.25, 1.5, 2.0],
            NoiseKind::Saturation => vec![0.75, 0.5, 0.25],
            NoiseKind::Solarize => vec![0.75, 0.5, 0.25],
            NoiseKind::Crop => vec![0.1, 0.2, 0.3],
            NoiseKind::Hflip | NoiseKind::HistEq => vec![1.0],
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.trim().to_ascii_lowercase().as_str() {
            "hflip" | "horizontal_flip" => NoiseKind::Hflip,
            "blur" | "gaussian_blur" => NoiseKind::GaussianBlur,
            "solarize" | "solarization" => NoiseKind::Solarize,
            "crop" => NoiseKind::Crop,
            "cutout" => NoiseKind::Cutout,
            "jpeg" => NoiseKind::Jpeg,
            "brightness" => NoiseKind::Brightness,
            "contrast" => NoiseKind::Contrast,
            "hue" => NoiseKind::Hue,
            "saturation" => NoiseKind::Saturation,
            "hist_eq" | "histogram_equalization" | "he" => NoiseKind::HistEq,
            "salt_pepper" | "sp" | "s&p" => NoiseKind::SaltPepper,
            "gaussian_noise" | "gn" => NoiseKind::GaussianNoise,
            other => return Err(Error::Config(format!("unknown noise `{other}`"))),
        };
        Ok(kind)
    }
}

/// Escalating levels for a named attack.
pub fn attack_sweep_levels(name: &str) -> Result<Vec<f64>> {
    Ok(name.parse::<NoiseKind>()?.sweep_levels())
}

/// A noise at a fixed level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: f64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, level: f64) -> Result<Self> {
        kind.check_level(level)?;
        Ok(Self { kind, level })
    }

    pub fn role(&self) -> NoiseRole {
        self.kind.role()
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.level)
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    /// `name:level`, or just `name` for parameterless noises.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((name, level)) => {
                let kind: NoiseKind = name.parse()?;
                let level: f64 = level
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad level `{level}` for `{name}`")))?;
                NoiseSpec::new(kind, level)
            }
            None => {
                let kind: NoiseKind = s.parse()?;
                if !kind.is_parameterless() {
                    return Err(Error::Config(format!("noise `{kind}` needs a level (`{kind}:<level>`)")));
                }
                NoiseSpec::new(kind, kind.default_level())
            }
        }
    }
}

fn map_pixels(img: &ImageTensor<f32>, f: impl Fn(f64, f64, f64) -> (f64, f64, f64)) -> ImageTensor<f32> {
    let (h, w, c) = img.shape();
    let mut out = img.clone();
    if c < 3 {
        return out;
    }
    let d = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = f(d[[y, x, 0]] as f64, d[[y, x, 1]] as f64, d[[y, x, 2]] as f64);
            d[[y, x, 0]] = r as f32;
            d[[y, x, 1]] = g as f32;
            d[[y, x, 2]] = b as f32;
        }
    }
    out
}

/// `factor·x + (1 − factor)·reference`, exact for `factor == 1`.
fn blend(x: f32, reference: f32, factor: f32) -> f32 {
    factor * x + (1.0 - factor) * reference
}

fn gaussian_blur(img: &ImageTensor<f32>, sigma: f64) -> ImageTensor<f32> {
    if sigma == 0.0 {
        return img.clone();
    }
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w, c) = img.shape();
    let src = img.data().mapv(|v| v as f64);
    let mut tmp = ndarray::Array3::<f64>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, i) in kernel.iter().zip(-radius..=radius) {
                    let sx = (x as isize + i).clamp(0, w as isize - 1) as usize;
                    acc += k * src[[y, sx, ch]];
                }
                tmp[[y, x, ch]] = acc;
            }
        }
    }
    ImageTensor::from_fn(h, w, c, |(y, x, ch)| {
        let mut acc = 0.0;
        for (k, i) in kernel.iter().zip(-radius..=radius) {
            let sy = (y as isize + i).clamp(0, h as isize - 1) as usize;
            acc += k * tmp[[sy, x, ch]];
        }
        acc as f32
    })
}

fn jpeg_roundtrip(img: &ImageTensor<f32>, quality: u8) -> Result<ImageTensor<f32>> {
    let (h, w, c) = img.shape();
    let (bytes, color) = match c {
        1 => (img.to_u8(), ColorType::L8),
        3 => (img.to_u8(), ColorType::Rgb8),
        other => return Err(Error::Config(format!("jpeg needs 1 or 3 channels, got {other}"))),
    };
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(&bytes, w as u32, h as u32, color.into())
        .map_err(Error::Image)?;
    let decoder = image::codecs::jpeg::JpegDecoder::new(Cursor::new(buf)).map_err(Error::Image)?;
    let mut out = vec![0u8; decoder.total_bytes() as usize];
    decoder.read_image(&mut out).map_err(Error::Image)?;
    ImageTensor::from_u8(h, w, c, &out)
}

fn equalize_histogram(img: &ImageTensor<f32>) -> ImageTensor<f32> {
    let (h, w, c) = img.shape();
    let lum: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            if c >= 3 {
                luma(img.get(y, x, 0) as f64, img.get(y, x, 1) as f64, img.get(y, x, 2) as f64)
            } else {
                img.get(y, x, 0) as f64
            }
        })
        .collect();
    let bins: Vec<usize> = lum.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as usize).collect();
    let mut hist = [0usize; 256];
    for &b in &bins {
        hist[b] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (i, &n) in hist.iter().enumerate() {
        acc += n;
        cdf[i] = acc;
    }
    let total = h * w;
    let cdf_min = cdf.iter().copied().find(|&v| v > 0).unwrap_or(0);
    let lut: Vec<f64> = cdf
        .iter()
        .map(|&v| {
            if total == cdf_min {
                v as f64 / total as f64
            } else {
                ((v.saturating_sub(cdf_min)) as f64 / (total - cdf_min) as f64 * 255.0).round() / 255.0
            }
        })
        .collect();
    let mut out = img.clone();
    let d = out.data_mut();
    for i in 0..total {
        let (y, x) = (i / w, i % w);
        let new_y = lut[bins[i]];
        if c >= 3 {
            let (_, cb, cr) = rgb_to_ycbcr(d[[y, x, 0]] as f64, d[[y, x, 1]] as f64, d[[y, x, 2]] as f64);
            let (r, g, b) = ycbcr_to_rgb(new_y, cb, cr);
            d[[y, x, 0]] = r as f32;
            d[[y, x, 1]] = g as f32;
            d[[y, x, 2]] = b as f32;
        } else {
            d[[y, x, 0]] = new_y as f32;
        }
    }
    out
}

/// Apply one noise. The result is always clamped to `[0, 1]`.
pub fn apply_noise<R: Rng>(img: &ImageTensor<f32>, spec: &NoiseSpec, rng: &mut R) -> Result<ImageTensor<f32>> {
    spec.kind.check_level(spec.level)?;
    let level = spec.level;
    let (h, w, c) = img.shape();
    let out = match spec.kind {
        NoiseKind::Hflip => {
            if level == 0.0 {
                img.clone()
            } else {
                ImageTensor::from_fn(h, w, c, |(y, x, ch)| img.get(y, w - 1 - x, ch))
            }
        }
        NoiseKind::GaussianBlur => gaussian_blur(img, level),
        NoiseKind::Solarize => {
            let t = level as f32;
            let mut o = img.clone();
            o.data_mut().mapv_inplace(|v| if v >= t { 1.0 - v } else { v });
            o
        }
        NoiseKind::Brightness => {
            let f = level as f32;
            let mut o = img.clone();
            o.data_mut().mapv_inplace(|v| blend(v, 0.0, f));
            o
        }
        NoiseKind::Contrast => {
            let f = level as f32;
            let mean = if c >= 3 {
                (0..h * w)
                    .map(|i| luma(img.get(i / w, i % w, 0) as f64, img.get(i / w, i % w, 1) as f64, img.get(i / w, i % w, 2) as f64))
                    .sum::<f64>()
                    / (h * w) as f64
            } else {
                img.data().iter().map(|&v| v as f64).sum::<f64>() / img.data().len() as f64
            } as f32;
            let mut o = img.clone();
            o.data_mut().mapv_inplace(|v| blend(v, mean, f));
            o
        }
        NoiseKind::Saturation => {
            let f = level as f32;
            if c < 3 {
                img.clone()
            } else {
                let mut o = img.clone();
                let d = o.data_mut();
                for y in 0..h {
                    for x in 0..w {
                        let g = luma(d[[y, x, 0]] as f64, d[[y, x, 1]] as f64, d[[y, x, 2]] as f64) as f32;
                        for ch in 0..3 {
                            d[[y, x, ch]] = blend(d[[y, x, ch]], g, f);
                        }
                    }
                }
                o
            }
        }
        NoiseKind::Hue => {
            if level.rem_euclid(1.0) == 0.0 {
                img.clone()
            } else {
                map_pixels(img, |r, g, b| {
                    let (hh, s, v) = rgb_to_hsv(r, g, b);
                    hsv_to_rgb(hh + level, s, v)
                })
            }
        }
        NoiseKind::Crop => {
            if level == 0.0 {
                img.clone()
            } else {
                let ch_ = ((h as f64) * (1.0 - level)).round().max(1.0) as usize;
                let cw_ = ((w as f64) * (1.0 - level)).round().max(1.0) as usize;
                let (oy, ox) = ((h - ch_) / 2, (w - cw_) / 2);
                let cropped = ImageTensor::from_fn(ch_, cw_, c, |(y, x, k)| img.get(oy + y, ox + x, k));
                resize_bilinear(&cropped, h, w)
            }
        }
        NoiseKind::Cutout => {
            let side = ((level.sqrt()) * h.min(w) as f64).round() as usize;
            if side == 0 {
                img.clone()
            } else {
                let oy = rng.random_range(0..=h - side);
                let ox = rng.random_range(0..=w - side);
                let mut o = img.clone();
                o.data_mut()
                    .slice_mut(ndarray::s![oy..oy + side, ox..ox + side, ..])
                    .fill(0.0);
                o
            }
        }
        NoiseKind::Jpeg => jpeg_roundtrip(img, level as u8)?,
        NoiseKind::HistEq => equalize_histogram(img),
        NoiseKind::SaltPepper => {
            if level == 0.0 {
                img.clone()
            } else {
                let half = level / 2.0;
                let mut o = img.clone();
                o.data_mut().mapv_inplace(|v| {
                    let u: f64 = rng.random();
                    if u < half {
                        0.0
                    } else if u < level {
                        1.0
                    } else {
                        v
                    }
                });
                o
            }
        }
        NoiseKind::GaussianNoise => {
            if level == 0.0 {
                img.clone()
            } else {
                let dist = Normal::new(0.0, level).map_err(|e| Error::Config(e.to_string()))?;
                let mut o = img.clone();
                o.data_mut().mapv_inplace(|v| v + dist.sample(rng) as f32);
                o
            }
        }
    };
    Ok(out.clamped())
}

/// Inclusion probability and level range of one training noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseDraw {
    pub kind: NoiseKind,
    pub probability: f64,
    pub min_level: f64,
    pub max_level: f64,
}

/// Probabilistic composition of training noises.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompoundAugmentConfig {
    pub noises: Vec<NoiseDraw>,
}

impl Default for CompoundAugmentConfig {
    fn default() -> Self {
        let draw = |kind, lo, hi| NoiseDraw {
            kind,
            probability: 0.5,
            min_level: lo,
            max_level: hi,
        };
        Self {
            noises: vec![
                draw(NoiseKind::Hflip, 1.0, 1.0),
                draw(NoiseKind::GaussianBlur, 0.1, 2.0),
                draw(NoiseKind::Solarize, 0.25, 0.75),
                draw(NoiseKind::Brightness, 0.5, 2.0),
                draw(NoiseKind::Contrast, 0.5, 2.0),
                draw(NoiseKind::Hue, -0.25, 0.25),
                draw(NoiseKind::Saturation, 0.5, 2.0),
            ],
        }
    }
}

impl CompoundAugmentConfig {
    /// Same noises with every inclusion probability set to `p`.
    pub fn with_probability(mut self, p: f64) -> Self {
        for n in &mut self.noises {
            n.probability = p;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for n in &self.noises {
            if n.kind.role() != NoiseRole::Train {
                return Err(Error::Config(format!(
                    "`{}` is a test-role noise and cannot be used for training augmentation",
                    n.kind
                )));
            }
            if !seen.insert(n.kind) {
                return Err(Error::Config(format!("`{}` listed twice", n.kind)));
            }
            if !(0.0..=1.0).contains(&n.probability) {
                return Err(Error::Config(format!("probability {} for `{}`", n.probability, n.kind)));
            }
            if n.min_level > n.max_level {
                return Err(Error::Config(format!("empty level range for `{}`", n.kind)));
            }
            n.kind.check_level(n.min_level)?;
            n.kind.check_level(n.max_level)?;
        }
        Ok(())
    }
}

/// Apply the configured training noises in the fixed training order, each
/// with its inclusion probability and a uniformly drawn level. Returns the
/// noises actually applied.
pub fn compound_augment_traced<R: Rng>(
    img: &ImageTensor<f32>,
    cfg: &CompoundAugmentConfig,
    rng: &mut R,
) -> Result<(ImageTensor<f32>, Vec<NoiseSpec>)> {
    cfg.validate()?;
    let mut out = img.clone();
    let mut applied = Vec::new();
    for kind in NoiseKind::TRAIN {
        let Some(draw) = cfg.noises.iter().find(|d| d.kind == kind) else {
            continue;
        };
        // Both draws are always consumed so the stream does not depend on
        // which noises fire.
        let include = rng.random::<f64>() < draw.probability;
        let u: f64 = rng.random();
        if !include {
            continue;
        }
        let level = if kind.is_parameterless() {
            kind.default_level()
        } else {
            draw.min_level + u * (draw.max_level - draw.min_level)
        };
        let spec = NoiseSpec::new(kind, level)?;
        out = apply_noise(&out, &spec, rng)?;
        applied.push(spec);
    }
    Ok((out, applied))
}

pub fn compound_augment<R: Rng>(img: &ImageTensor<f32>, cfg: &CompoundAugmentConfig, rng: &mut R) -> Result<ImageTensor<f32>> {
    Ok(compound_augment_traced(img, cfg, rng)?.0)
}
