//! The three ways of combining the text and vision encoders: concatenation
//! with an MLP head, a Gated Multimodal Unit, and bidirectional crossmodal
//! attention with a pooled head.

mod concat;
mod crossmodal;
mod gmu;
mod model;

pub use concat::{concat_head, ConcatHead};
pub use crossmodal::{crossmodal_attention, crossmodal_head, CrossAttnParams, CrossAttentionOutput};
pub use gmu::{gmu_fuse, GmuOutput, GmuParams};
pub use model::{meta_path, FusionKind, FusionModel, ModelConfig, ModelMeta, ModelOutput};

/// Classes: 0 = non-AD, 1 = AD.
pub const NUM_CLASSES: usize = 2;
