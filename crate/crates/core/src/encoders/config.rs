use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Transformer stack shape shared by both encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_dim: usize,
}

/// Desk-scale stack shared by both encoders.
impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            width: 64,
            heads: 4,
            mlp_dim: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.mlp_dim == 0 {
            return Err(invalid("encoder width, heads and mlp_dim must be positive"));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(invalid(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionConfig {
    #[serde(flatten)]
    pub encoder: EncoderConfig,
    pub image_side: usize,
    pub patch: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            image_side: 64,
            patch: 16,
        }
    }
}

impl VisionConfig {
    /// Reference geometry: 224×224 images in 16×16 patches, 12 layers of
    /// width 768.
    pub fn reference() -> Self {
        Self {
            encoder: EncoderConfig {
                depth: 12,
                width: 768,
                heads: 12,
                mlp_dim: 3072,
            },
            image_side: 224,
            patch: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.patch == 0 || !self.image_side.is_multiple_of(self.patch) {
            return Err(invalid(format!(
                "image side {} is not divisible by patch {}",
                self.image_side, self.patch
            )));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.image_side / self.patch).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch * self.patch
    }

    /// Sequence length including CLS.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    #[serde(flatten)]
    pub encoder: EncoderConfig,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            vocab_size: 1000,
            max_len: 128,
        }
    }
}

impl TextConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.max_len < 2 {
            return Err(invalid("max_len must be at least 2"));
        }
        if self.vocab_size < 4 {
            return Err(invalid("vocabulary must hold the 4 reserved tokens"));
        }
        Ok(())
    }
}
