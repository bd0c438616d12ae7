use crate::error::{invalid, Result};
use crate::parallel::Execution;

use super::stft::stft_exec;
use super::{hann_window, AudioSignal, BandKind, Matrix, Spectrogram};

/// Power floor applied before `log10`.
pub const LOG_FLOOR: f64 = 1e-10;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        mel * F_SP
    }
}

/// Slaney-normalized triangular filterbank, `[n_mels × n_fft_bins]`.
///
/// `n_fft_bins` is the number of non-negative STFT bins, `frame_len/2 + 1`.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft_bins: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<Matrix<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 {
        return Err(invalid("n_mels must be at least 1"));
    }
    if n_fft_bins < 2 {
        return Err(invalid("need at least 2 fft bins"));
    }
    if !(fmin >= 0.0 && fmin < fmax) {
        return Err(invalid(format!("need 0 <= fmin < fmax, got {fmin}..{fmax}")));
    }
    if fmax > nyquist {
        return Err(invalid(format!("fmax {fmax} exceeds Nyquist {nyquist}")));
    }

    let n_fft = 2 * (n_fft_bins - 1);
    let fft_freqs: Vec<f64> = (0..n_fft_bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();

    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut fb = Matrix::zeros(n_mels, n_fft_bins);
    for m in 0..n_mels {
        let (lower, center, upper) = (points[m], points[m + 1], points[m + 2]);
        let norm = 2.0 / (upper - lower);
        let row = fb.row_mut(m);
        for (w, &f) in row.iter_mut().zip(&fft_freqs) {
            let rising = (f - lower) / (center - lower);
            let falling = (upper - f) / (upper - center);
            *w = rising.min(falling).max(0.0) * norm;
        }
    }
    Ok(fb)
}

/// Log-mel extraction settings.
#[derive(Debug, Clone)]
pub struct MelConfig {
    pub n_mels: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub exec: Execution,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 224,
            frame_len: 2048,
            hop: 1024,
            fmin: 0.0,
            fmax: None,
            exec: Execution::default(),
        }
    }
}

pub(crate) fn power_to_db(p: f64) -> f64 {
    10.0 * p.max(LOG_FLOOR).log10()
}

/// Mel-band power in dB, before any cepstral step.
pub(crate) fn log_mel_matrix(signal: &AudioSignal, cfg: &MelConfig) -> Result<Matrix<f64>> {
    signal.require_non_empty()?;
    let window = hann_window(cfg.frame_len)?;
    let spec = stft_exec(signal, cfg.frame_len, cfg.hop, &window, cfg.exec)?;
    let fmax = cfg.fmax.unwrap_or(signal.sample_rate() as f64 / 2.0);
    let fb = mel_filterbank(
        cfg.n_mels,
        cfg.frame_len / 2 + 1,
        signal.sample_rate(),
        cfg.fmin,
        fmax,
    )?;

    let (bins, frames) = spec.shape();
    let power: Vec<f64> = spec.data().iter().map(|c| c.norm_sqr()).collect();
    let mut out = Matrix::zeros(cfg.n_mels, frames);
    for m in 0..cfg.n_mels {
        let weights = fb.row(m);
        for t in 0..frames {
            let mut acc = 0.0;
            for k in 0..bins {
                acc += weights[k] * power[k * frames + t];
            }
            out.set(m, t, power_to_db(acc));
        }
    }
    Ok(out)
}

/// Log-mel spectrogram in dB (`10·log10(max(power, 1e-10))`).
pub fn log_mel_spectrogram(signal: &AudioSignal, cfg: &MelConfig) -> Result<Spectrogram> {
    Ok(Spectrogram {
        values: log_mel_matrix(signal, cfg)?,
        band_kind: BandKind::Mel,
        hop: cfg.hop,
        frame_len: cfg.frame_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_anchor_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
        assert!((hz_to_mel(500.0) - 7.5).abs() < 1e-12);
        for hz in [0.0, 123.0, 999.0, 1000.0, 4321.0, 11025.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filters_are_single_peaked_and_bounded() {
        let fb = mel_filterbank(40, 257, 16000, 300.0, 6000.0).unwrap();
        let n_fft = 512.0;
        for m in 0..40 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            // rises then falls: at most one local maximum on the support
            let mut peaks = 0;
            for k in 1..row.len() - 1 {
                if row[k] > row[k - 1] && row[k] >= row[k + 1] {
                    peaks += 1;
                }
            }
            assert!(peaks <= 1, "row {m} has {peaks} peaks");
        }
        for k in 0..257 {
            let f = k as f64 * 16000.0 / n_fft;
            if !(300.0..=6000.0).contains(&f) {
                let total: f64 = (0..40).map(|m| fb.get(m, k)).sum();
                assert_eq!(total, 0.0, "bin {k} at {f} Hz");
            }
        }
    }

    #[test]
    fn fmax_above_nyquist_rejected() {
        assert!(mel_filterbank(10, 129, 8000, 0.0, 4001.0).is_err());
        assert!(mel_filterbank(10, 129, 8000, 100.0, 100.0).is_err());
    }

    #[test]
    fn default_shape_for_five_seconds() {
        let s = AudioSignal::new(vec![0.0; 110_250], 22_050).unwrap();
        let spec = log_mel_spectrogram(&s, &MelConfig::default()).unwrap();
        assert_eq!((spec.bands(), spec.frames()), (224, 108));
        let floor = power_to_db(0.0);
        assert!(spec.values.data().iter().all(|&v| v == floor));
        assert_eq!(floor, -100.0);
    }

    #[test]
    fn hop_shift_moves_interior_columns() {
        let cfg = MelConfig {
            n_mels: 32,
            frame_len: 256,
            hop: 64,
            ..MelConfig::default()
        };
        let mut x: Vec<f64> = (0..2048).map(|i| ((i * 7919) % 211) as f64 / 211.0 - 0.5).collect();
        let a = log_mel_spectrogram(&AudioSignal::new(x.clone(), 8000).unwrap(), &cfg).unwrap();
        let mut shifted = vec![0.0; cfg.hop];
        shifted.append(&mut x);
        shifted.truncate(2048);
        let b = log_mel_spectrogram(&AudioSignal::new(shifted, 8000).unwrap(), &cfg).unwrap();
        // interior frames clear of both padded edges
        for t in 4..a.frames() - 4 {
            for m in 0..32 {
                assert!((a.values.get(m, t) - b.values.get(m, t + 1)).abs() < 1e-9);
            }
        }
    }
}
