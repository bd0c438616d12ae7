use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::parallel::Execution;

use super::mel::{log_mel_matrix, MelConfig};
use super::{AudioSignal, BandKind, Matrix, Spectrogram};

#[derive(Debug, Clone)]
pub struct MfccConfig {
    pub n_mfcc: usize,
    /// Mel bands feeding the DCT.
    pub n_mels: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub exec: Execution,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            n_mfcc: 40,
            n_mels: 128,
            frame_len: 2048,
            hop: 512,
            exec: Execution::default(),
        }
    }
}

/// First `n_out` coefficients of the orthonormal DCT-II of `x`.
pub fn dct_ii_ortho(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                .sum();
            scale * sum
        })
        .collect()
}

/// Mel-frequency cepstral coefficients, `[n_mfcc × frames]`.
pub fn mfcc(signal: &AudioSignal, cfg: &MfccConfig) -> Result<Spectrogram> {
    if cfg.n_mfcc == 0 || cfg.n_mfcc > cfg.n_mels {
        return Err(invalid(format!(
            "n_mfcc {} must be in 1..={} (mel bands)",
            cfg.n_mfcc, cfg.n_mels
        )));
    }
    let mel_cfg = MelConfig {
        n_mels: cfg.n_mels,
        frame_len: cfg.frame_len,
        hop: cfg.hop,
        fmin: 0.0,
        fmax: None,
        exec: cfg.exec,
    };
    let log_mel = log_mel_matrix(signal, &mel_cfg)?;
    let frames = log_mel.cols();
    let mut out = Matrix::zeros(cfg.n_mfcc, frames);
    for t in 0..frames {
        let coeffs = dct_ii_ortho(&log_mel.column(t), cfg.n_mfcc);
        for (k, c) in coeffs.into_iter().enumerate() {
            out.set(k, t, c);
        }
    }
    Ok(Spectrogram {
        values: out,
        band_kind: BandKind::Mfcc,
        hop: cfg.hop,
        frame_len: cfg.frame_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_of_constant_is_dc_only() {
        let c = dct_ii_ortho(&[3.0; 16], 16);
        assert!((c[0] - 3.0 * 4.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dct_is_orthonormal() {
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let c = dct_ii_ortho(&x, 10);
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ec: f64 = c.iter().map(|v| v * v).sum();
        assert!((ex - ec).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_frames_identical() {
        let s = AudioSignal::new(vec![0.0; 4000], 16000).unwrap();
        let m = mfcc(&s, &MfccConfig::default()).unwrap();
        assert_eq!(m.bands(), 40);
        assert_eq!(m.frames(), 1 + 4000 / 512);
        let first = m.values.column(0);
        for t in 1..m.frames() {
            assert_eq!(m.values.column(t), first);
        }
    }

    #[test]
    fn too_many_coefficients_rejected() {
        let s = AudioSignal::new(vec![0.1; 100], 16000).unwrap();
        let cfg = MfccConfig {
            n_mfcc: 129,
            ..MfccConfig::default()
        };
        assert!(mfcc(&s, &cfg).is_err());
    }
}
