//! Small transformer encoders for the two modalities.
//!
//! Both encoders prepend (vision) or start with (text) a CLS position and
//! return the full final-layer sequence alongside the CLS row, so fusion can
//! use either pooled vectors or whole sequences.

mod attention;
mod config;
mod layer;
mod patch;
mod text;
mod vision;

pub use attention::{
    key_padding_mask, multi_head_self_attention, AttentionOutput, AttentionParams,
};
pub use config::{EncoderConfig, TextConfig, VisionConfig};
pub use layer::{encoder_layer, linear, LayerParams, Linear};
pub use patch::{patchify, unpatchify};
pub use text::TextEncoder;
pub use vision::VisionEncoder;

use crate::autodiff::Var;

/// Encoder output for a batch.
#[derive(Debug, Clone)]
pub struct ModalitySequence {
    /// `[B × T × d]`
    pub tokens: Var,
    /// `[B × d]`, equal to `tokens[:, 0, :]`.
    pub cls: Var,
    /// `[B × T]`, 1 for real positions.
    pub mask: Vec<u8>,
}
