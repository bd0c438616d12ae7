//! Multimodal dementia detection from speech and transcripts.
//!
//! * [`audio`] turns recordings into three-channel log-Mel or MFCC images.
//! * [`chat`] parses CHAT transcripts into token sequences.
//! * [`autodiff`] is the tensor/gradient substrate everything trains on.
//! * [`encoders`] holds the vision and text transformer encoders.
//! * [`fusion`] combines them by concatenation, a gated multimodal unit or
//!   bidirectional crossmodal attention.
//! * [`experiment`] covers data handling, training, metrics and repeated
//!   runs.

pub mod audio;
pub mod autodiff;
pub mod chat;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod gradsuite;
pub mod parallel;

pub use error::{Error, Result};
pub use parallel::Execution;
