//! Network geometry shared by the embedder, codec and extractor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths of the extractor's convolutional stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    /// Channels after the learned 1×1 bridge from the space-to-depth map.
    pub input_channels: usize,
    pub expand_filters: Vec<usize>,
    pub fc_units: usize,
    /// The last entry must equal `patch_wm²` (1 for the default geometry).
    pub reduce_filters: Vec<usize>,
    pub kernel: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            input_channels: 48,
            expand_filters: vec![64, 128, 256],
            fc_units: 512,
            reduce_filters: vec![128, 64, 32, 8, 1],
            kernel: 3,
        }
    }
}

/// Hidden widths of the convolutional comparison embedder; a final layer
/// maps back to the image channel count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvBaselineConfig {
    pub hidden_filters: Vec<usize>,
    pub kernel: usize,
}

impl Default for ConvBaselineConfig {
    fn default() -> Self {
        Self {
            hidden_filters: vec![64, 64],
            kernel: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub image_channels: usize,
    pub wm_size: usize,
    pub patch_cover: usize,
    pub patch_wm: usize,
    /// Width of attention layers and of the encoder/decoder token stream.
    pub attn_dim: usize,
    pub heads: usize,
    pub tf_blocks: usize,
    pub dropout_rate: f64,
    /// Width the 1-channel watermark tokens are projected to before
    /// positional embedding.
    pub wm_embed_dim: usize,
    pub extractor: ExtractorConfig,
    pub conv_baseline: ConvBaselineConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// Full-size architecture.
    pub fn full() -> Self {
        Self {
            image_size: 128,
            image_channels: 3,
            wm_size: 8,
            patch_cover: 16,
            patch_wm: 1,
            attn_dim: 512,
            heads: 2,
            tf_blocks: 4,
            dropout_rate: 0.20,
            wm_embed_dim: 16,
            extractor: ExtractorConfig::default(),
            conv_baseline: ConvBaselineConfig::default(),
        }
    }

    /// Same image geometry and topology with narrower hidden layers, sized
    /// for single-core CPU training runs.
    pub fn desk() -> Self {
        Self {
            attn_dim: 64,
            tf_blocks: 2,
            extractor: ExtractorConfig {
                input_channels: 48,
                expand_filters: vec![32, 64, 64],
                fc_units: 128,
                reduce_filters: vec![64, 32, 16, 8, 1],
                kernel: 3,
            },
            conv_baseline: ConvBaselineConfig {
                hidden_filters: vec![16, 16],
                kernel: 3,
            },
            ..Self::full()
        }
    }

    /// 32×32 covers with 2×2 watermarks, for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 32,
            image_channels: 3,
            wm_size: 2,
            patch_cover: 16,
            patch_wm: 1,
            attn_dim: 8,
            heads: 2,
            tf_blocks: 1,
            dropout_rate: 0.2,
            wm_embed_dim: 4,
            extractor: ExtractorConfig {
                input_channels: 6,
                expand_filters: vec![4, 5],
                fc_units: 6,
                reduce_filters: vec![3, 1],
                kernel: 3,
            },
            conv_baseline: ConvBaselineConfig {
                hidden_filters: vec![3],
                kernel: 3,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.image_channels == 0 || self.wm_size == 0 {
            return bad("image and watermark sizes must be positive".into());
        }
        if self.patch_cover == 0 || self.image_size % self.patch_cover != 0 {
            return bad(format!(
                "image_size {} not divisible by patch_cover {}",
                self.image_size, self.patch_cover
            ));
        }
        if self.patch_wm == 0 || self.wm_size % self.patch_wm != 0 {
            return bad(format!(
                "wm_size {} not divisible by patch_wm {}",
                self.wm_size, self.patch_wm
            ));
        }
        if self.image_size / self.patch_cover != self.wm_size / self.patch_wm {
            return bad("cover and watermark must yield the same token grid".into());
        }
        if self.heads == 0 || self.attn_dim % self.heads != 0 {
            return bad(format!(
                "attn_dim {} not divisible by heads {}",
                self.attn_dim, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.wm_embed_dim == 0 {
            return bad("wm_embed_dim must be positive".into());
        }
        let ex = &self.extractor;
        if ex.kernel % 2 == 0 || self.conv_baseline.kernel % 2 == 0 {
            return bad("convolution kernels must be odd".into());
        }
        if ex.reduce_filters.last() != Some(&(self.patch_wm * self.patch_wm)) {
            return bad(format!(
                "extractor must end with {} filter(s)",
                self.patch_wm * self.patch_wm
            ));
        }
        if ex.input_channels == 0 || ex.fc_units == 0 || ex.expand_filters.is_empty() {
            return bad("extractor widths must be non-empty".into());
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        let g = self.image_size / self.patch_cover;
        g * g
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_cover
    }

    pub fn cover_token_dim(&self) -> usize {
        self.patch_cover * self.patch_cover * self.image_channels
    }

    pub fn wm_token_dim(&self) -> usize {
        self.patch_wm * self.patch_wm
    }

    pub fn wm_bits(&self) -> usize {
        self.wm_size * self.wm_size
    }
}
