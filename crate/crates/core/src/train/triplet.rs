use rand::Rng;

use crate::augment::{compound_augment, CompoundAugmentConfig};
use crate::embedder::WatermarkEmbedder;
use crate::error::{shape_err, Error, Result};
use crate::tensor::ImageTensor;
use crate::watermark::WatermarkBits;

/// Marked images for one batch of triplets.
///
/// Element `k` has anchor `marked_a[k]` (cover `k` with watermark `k`), its
/// augmented copy `marked_p[k]` as positive, and the anchor of element
/// `k + 1` (cyclically) as negative.
#[derive(Clone, Debug)]
pub struct TripletBatch {
    pub covers: Vec<ImageTensor<f32>>,
    pub watermarks: Vec<WatermarkBits>,
    pub marked_a: Vec<ImageTensor<f32>>,
    pub marked_p: Vec<ImageTensor<f32>>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.covers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covers.is_empty()
    }

    /// Batch position of the negative for element `k`.
    pub fn negative_index(&self, k: usize) -> usize {
        (k + 1) % self.len()
    }

    pub fn marked_n(&self, k: usize) -> &ImageTensor<f32> {
        &self.marked_a[self.negative_index(k)]
    }

    /// Watermarks `(W_a, W_p, W_n)` of element `k`.
    pub fn targets(&self, k: usize) -> [&WatermarkBits; 3] {
        let wa = &self.watermarks[k];
        [wa, wa, &self.watermarks[self.negative_index(k)]]
    }
}

/// Embed every cover with its watermark, augment each marked image into a
/// positive, and pair each anchor with the next element as negative.
pub fn make_triplet<E: WatermarkEmbedder<f32>, R: Rng>(
    covers: &[ImageTensor<f32>],
    watermarks: &[WatermarkBits],
    embedder: &E,
    aug: &CompoundAugmentConfig,
    rng: &mut R,
) -> Result<TripletBatch> {
    if covers.len() < 2 {
        return Err(Error::Config(format!(
            "triplets need a batch of at least 2 images, got {}",
            covers.len()
        )));
    }
    if covers.len() != watermarks.len() {
        return Err(shape_err!("{} covers but {} watermarks", covers.len(), watermarks.len()));
    }
    aug.validate()?;
    let marked_a = covers
        .iter()
        .zip(watermarks)
        .map(|(c, w)| embedder.embed(c, w))
        .collect::<Result<Vec<_>>>()?;
    let marked_p = marked_a
        .iter()
        .map(|m| compound_augment(m, aug, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(TripletBatch {
        covers: covers.to_vec(),
        watermarks: watermarks.to_vec(),
        marked_a,
        marked_p,
    })
}
