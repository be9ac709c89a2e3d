//! Training losses and evaluation metrics.
//!
//! Each loss comes with the gradient(s) the training loop needs. All
//! distances are plain means of squared differences over every element.

use ndarray::{Array, Array2, ArrayView, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{ImageTensor, Real};
use crate::watermark::WatermarkBits;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingLossConfig {
    /// Triplet margin.
    pub margin: f64,
    /// Weight of the triplet term during fine-tuning (0 disables it).
    pub triplet_weight: f64,
}

impl Default for TrainingLossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            triplet_weight: 0.0,
        }
    }
}

impl TrainingLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !(self.triplet_weight >= 0.0) {
            return Err(Error::Config(format!(
                "margin and triplet weight must be non-negative, got {} and {}",
                self.margin, self.triplet_weight
            )));
        }
        Ok(())
    }
}

fn check_same(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(shape_err!("shape mismatch {a:?} vs {b:?}"));
    }
    Ok(())
}

/// Mean squared difference.
pub fn mse<T: Real, D: Dimension>(a: ArrayView<'_, T, D>, b: ArrayView<'_, T, D>) -> Result<T> {
    check_same(a.shape(), b.shape())?;
    if a.is_empty() {
        return Err(shape_err!("mse of empty arrays"));
    }
    let n = T::lit(a.len() as f64);
    let s = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>();
    Ok(s / n)
}

/// Gradient of `mse(a, b)` with respect to `a`: `2(a − b)/n`.
pub fn mse_grad<T: Real, D: Dimension>(a: ArrayView<'_, T, D>, b: ArrayView<'_, T, D>) -> Result<Array<T, D>> {
    check_same(a.shape(), b.shape())?;
    let k = T::lit(2.0 / a.len() as f64);
    let mut g = a.to_owned();
    g.zip_mut_with(&b, |x, &y| *x = (*x - y) * k);
    Ok(g)
}

/// Embedding fidelity loss `mse(C, M)`.
pub fn embedder_loss<T: Real>(cover: &ImageTensor<T>, marked: &ImageTensor<T>) -> Result<T> {
    mse(cover.data().view(), marked.data().view())
}

/// Gradient of [`embedder_loss`] with respect to the marked image.
pub fn embedder_loss_grad<T: Real>(cover: &ImageTensor<T>, marked: &ImageTensor<T>) -> Result<ndarray::Array3<T>> {
    mse_grad(marked.data().view(), cover.data().view())
}

/// Extraction loss `mse(W, W')` over the watermark grid.
pub fn extractor_pretrain_loss<T: Real>(target: &Array2<T>, extracted: &Array2<T>) -> Result<T> {
    mse(target.view(), extracted.view())
}

/// Gradient of [`extractor_pretrain_loss`] with respect to the extraction.
pub fn extractor_pretrain_loss_grad<T: Real>(target: &Array2<T>, extracted: &Array2<T>) -> Result<Array2<T>> {
    mse_grad(extracted.view(), target.view())
}

/// Value and input gradients of the triplet loss.
pub struct TripletEval<T, D: Dimension> {
    pub loss: T,
    pub d_anchor: Array<T, D>,
    pub d_positive: Array<T, D>,
    pub d_negative: Array<T, D>,
}

/// `max(0, mse(a, p) − mse(a, n) + margin)`.
pub fn triplet_loss<T: Real, D: Dimension>(
    anchor: ArrayView<'_, T, D>,
    positive: ArrayView<'_, T, D>,
    negative: ArrayView<'_, T, D>,
    margin: T,
) -> Result<T> {
    if margin < T::zero() {
        return Err(Error::Config(format!("triplet margin {margin} is negative")));
    }
    let ap = mse(anchor.view(), positive.view())?;
    let an = mse(anchor, negative)?;
    Ok((ap - an + margin).max(T::zero()))
}

/// [`triplet_loss`] together with its gradient. Where the hinge is inactive
/// all gradients are zero.
pub fn triplet_loss_with_grad<T: Real, D: Dimension>(
    anchor: ArrayView<'_, T, D>,
    positive: ArrayView<'_, T, D>,
    negative: ArrayView<'_, T, D>,
    margin: T,
) -> Result<TripletEval<T, D>> {
    let loss = triplet_loss(anchor.view(), positive.view(), negative.view(), margin)?;
    let zeros = || Array::zeros(anchor.raw_dim());
    if loss <= T::zero() {
        return Ok(TripletEval {
            loss,
            d_anchor: zeros(),
            d_positive: zeros(),
            d_negative: zeros(),
        });
    }
    let g_ap = mse_grad(anchor.view(), positive.view())?;
    let g_an = mse_grad(anchor.view(), negative.view())?;
    Ok(TripletEval {
        loss,
        d_anchor: &g_ap - &g_an,
        d_positive: -g_ap,
        d_negative: g_an,
    })
}

/// Sum of the three pairwise extraction losses of a triplet.
pub fn extractor_final_loss<T: Real>(targets: [&Array2<T>; 3], extracted: [&Array2<T>; 3]) -> Result<T> {
    let mut total = T::zero();
    for (t, e) in targets.iter().zip(extracted.iter()) {
        total += mse(t.view(), e.view())?;
    }
    Ok(total)
}

/// Peak signal-to-noise ratio in dB, computed on 8-bit quantized images
/// (`round(255·x)`) with peak 255. Identical quantized images give
/// `f64::INFINITY`.
pub fn psnr<T: Real>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err!("psnr of {:?} and {:?}", a.shape(), b.shape()));
    }
    let qa = a.to_u8();
    let qb = b.to_u8();
    let sse: u64 = qa
        .iter()
        .zip(&qb)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(psnr_from_mse(sse as f64 / qa.len() as f64))
}

/// PSNR for a given 8-bit mean squared error.
pub fn psnr_from_mse(mse8: f64) -> f64 {
    if mse8 == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse8).log10()
    }
}

/// Number of equal cells between two watermarks of the same size.
pub fn matching_bits(a: &WatermarkBits, b: &WatermarkBits) -> Result<usize> {
    if a.side() != b.side() {
        return Err(shape_err!("watermark sizes {} and {} differ", a.side(), b.side()));
    }
    Ok(a.bits().iter().zip(b.bits()).filter(|(x, y)| x == y).count())
}

/// Bit recovery rate in percent.
pub fn brr(a: &WatermarkBits, b: &WatermarkBits) -> Result<f64> {
    Ok(100.0 * matching_bits(a, b)? as f64 / a.len() as f64)
}

/// Bit recovery rate of two real grids that must contain only 0 and 1.
pub fn brr_grid<T: Real>(a: &Array2<T>, b: &Array2<T>) -> Result<f64> {
    brr(&WatermarkBits::from_binary_grid(a)?, &WatermarkBits::from_binary_grid(b)?)
}

/// Bit counts pooled across a dataset; the percentage is taken over the
/// pooled totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitTally {
    pub matched: u64,
    pub total: u64,
}

impl BitTally {
    pub fn add(&mut self, a: &WatermarkBits, b: &WatermarkBits) -> Result<()> {
        self.matched += matching_bits(a, b)? as u64;
        self.total += a.len() as u64;
        Ok(())
    }

    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.matched as f64 / self.total as f64
        }
    }
}

pub(crate) mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad psnr `{t}`"))),
        }
    }
}

/// One row of an evaluation: a single attack at a single level, or the
/// clean path (`noise == "none"`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRow {
    pub noise: String,
    pub level: Option<f64>,
    pub brr_percent: f64,
    /// Mean PSNR between cover and the (attacked) marked image.
    #[serde(with = "inf_as_string")]
    pub psnr_db: f64,
    pub bits_matched: u64,
    pub bits_total: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub images: usize,
    /// Mean cover/marked PSNR over the dataset.
    #[serde(with = "inf_as_string")]
    pub psnr_db: f64,
    /// Clean-path bit recovery rate over pooled bits.
    pub brr_percent: f64,
    pub rows: Vec<NoiseRow>,
}

impl MetricReport {
    pub fn row(&self, noise: &str, level: Option<f64>) -> Option<&NoiseRow> {
        self.rows.iter().find(|r| r.noise == noise && r.level == level)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }

    /// CSV with header `noise,level,brr_percent,psnr_db,bits_matched,bits_total`;
    /// the clean row has an empty level.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["noise", "level", "brr_percent", "psnr_db", "bits_matched", "bits_total"])
            .map_err(|e| Error::Serde(e.to_string()))?;
        for r in &self.rows {
            let level = r.level.map(|l| l.to_string()).unwrap_or_default();
            let psnr = if r.psnr_db.is_infinite() {
                "inf".to_string()
            } else {
                format!("{:.4}", r.psnr_db)
            };
            w.write_record([
                r.noise.clone(),
                level,
                format!("{:.4}", r.brr_percent),
                psnr,
                r.bits_matched.to_string(),
                r.bits_total.to_string(),
            ])
            .map_err(|e| Error::Serde(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }
}
