//! Audio → three-channel feature images.
//!
//! The pipeline is `AudioSignal` → STFT → power → mel filterbank → dB
//! (optionally → DCT for MFCCs) → `Spectrogram` → (static, delta,
//! delta-delta) → bilinear resize → `FeatureImage` normalized to [-1, 1].

mod batch;
mod delta;
mod fimg;
mod image;
mod matrix;
mod mel;
mod mfcc;
mod signal;
mod stft;
mod wav;
mod window;

pub use batch::{extract_dir, extract_file, ExtractedFile};
pub use delta::{delta, DEFAULT_DELTA_WIDTH};
pub use fimg::{read_fimg, write_fimg, FIMG_MAGIC, FIMG_VERSION};
pub use image::{bilinear_resize, build_feature_image, normalize_unit_range, FeatureImage};
pub use matrix::Matrix;
pub use mel::{hz_to_mel, log_mel_spectrogram, mel_filterbank, mel_to_hz, MelConfig, LOG_FLOOR};
pub use mfcc::{dct_ii_ortho, mfcc, MfccConfig};
pub use signal::{AudioSignal, BandKind, Spectrogram};
pub use stft::{frame_count, reflect_pad, stft, StftMatrix};
pub use wav::read_wav;
pub use window::hann_window;

use serde::{Deserialize, Serialize};

/// Which static feature fills the first image channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mel,
    Mfcc,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Mel => "mel",
            FeatureKind::Mfcc => "mfcc",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "mel" => Ok(FeatureKind::Mel),
            "mfcc" => Ok(FeatureKind::Mfcc),
            other => Err(crate::error::invalid(format!(
                "unknown feature kind {other:?}, expected mel or mfcc"
            ))),
        }
    }
}
