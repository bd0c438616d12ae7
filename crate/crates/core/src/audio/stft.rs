use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};
use crate::parallel::Execution;

use super::{AudioSignal, Matrix};

/// Non-negative-frequency STFT bins, `[frame_len/2 + 1 × frames]`.
pub type StftMatrix = Matrix<Complex64>;

/// Number of frames produced for `len` samples under center padding.
pub fn frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

/// Mirror `pad` samples onto each end without repeating the edge sample.
///
/// Signals shorter than the padding are reflected repeatedly, so the result
/// is defined for every non-empty input.
pub fn reflect_pad(samples: &[f64], pad: usize) -> Vec<f64> {
    let n = samples.len();
    assert!(n > 0, "reflect_pad on empty signal");
    if n == 1 {
        return vec![samples[0]; n + 2 * pad];
    }
    let period = 2 * (n - 1) as i64;
    let index = |i: i64| -> usize {
        let m = i.rem_euclid(period);
        if m >= n as i64 {
            (period - m) as usize
        } else {
            m as usize
        }
    };
    (-(pad as i64)..(n + pad) as i64)
        .map(|i| samples[index(i)])
        .collect()
}

/// Short-time Fourier transform with center reflect-padding.
pub fn stft(
    signal: &AudioSignal,
    frame_len: usize,
    hop: usize,
    window: &[f64],
) -> Result<StftMatrix> {
    stft_exec(signal, frame_len, hop, window, Execution::default())
}

pub(crate) fn stft_exec(
    signal: &AudioSignal,
    frame_len: usize,
    hop: usize,
    window: &[f64],
    exec: Execution,
) -> Result<StftMatrix> {
    if frame_len == 0 || window.len() != frame_len {
        return Err(invalid(format!(
            "frame length {frame_len} does not match window length {}",
            window.len()
        )));
    }
    if hop == 0 {
        return Err(invalid("hop must be at least 1"));
    }
    signal.require_non_empty()?;

    // Frame t spans [t·hop − frame_len/2, t·hop + frame_len − frame_len/2);
    // odd lengths need one more sample on the right than on the left.
    let pad = frame_len - frame_len / 2;
    let offset = pad - frame_len / 2;
    let padded = reflect_pad(signal.samples(), pad);
    let frames = frame_count(signal.len(), hop);
    let bins = frame_len / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);

    let columns = exec.map_range(frames, |t| {
        let start = t * hop + offset;
        let mut buf: Vec<Complex64> = padded[start..start + frame_len]
            .iter()
            .zip(window)
            .map(|(&x, &w)| Complex64::new(x * w, 0.0))
            .collect();
        fft.process(&mut buf);
        buf.truncate(bins);
        buf
    });

    let mut out = Matrix::zeros(bins, frames);
    for (t, col) in columns.into_iter().enumerate() {
        for (k, v) in col.into_iter().enumerate() {
            out.set(k, t, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_matches_numpy_convention() {
        assert_eq!(
            reflect_pad(&[1.0, 2.0, 3.0, 4.0], 2),
            vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]
        );
        // period-wrapped reflection for very short input
        assert_eq!(reflect_pad(&[1.0, 2.0], 3), vec![2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0]);
        assert_eq!(reflect_pad(&[7.0], 2), vec![7.0; 5]);
    }

    #[test]
    fn zero_signal_gives_zero_matrix() {
        let s = AudioSignal::new(vec![0.0; 100], 8000).unwrap();
        let w = super::super::hann_window(16).unwrap();
        let m = stft(&s, 16, 4, &w).unwrap();
        assert!(m.data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn dc_concentrates_in_bin_zero() {
        let s = AudioSignal::new(vec![1.0; 40], 8000).unwrap();
        let m = stft(&s, 8, 4, &[1.0; 8]).unwrap();
        assert_eq!(m.rows(), 5);
        for t in 0..m.cols() {
            assert!((m.get(0, t).norm() - 8.0).abs() < 1e-12);
            for k in 1..5 {
                assert!(m.get(k, t).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn window_mismatch_rejected() {
        let s = AudioSignal::new(vec![0.5; 10], 8000).unwrap();
        assert!(stft(&s, 8, 2, &[1.0; 7]).is_err());
        assert!(stft(&s, 8, 0, &[1.0; 8]).is_err());
    }

    #[test]
    fn frame_count_sweep() {
        let hop = 16;
        let w = vec![1.0; 32];
        for len in 1..=10 * hop {
            let s = AudioSignal::new(vec![0.1; len], 16000).unwrap();
            let m = stft(&s, 32, hop, &w).unwrap();
            assert_eq!(m.cols(), 1 + len / hop, "len {len}");
        }
    }

    #[test]
    fn odd_frame_centres_on_sample() {
        // Rectangular window of 3 around t·hop: DC bin is x[t-1] + x[t] + x[t+1].
        let x = [1.0, 2.0, 4.0, 8.0];
        let s = AudioSignal::new(x.to_vec(), 8000).unwrap();
        let m = stft(&s, 3, 1, &[1.0; 3]).unwrap();
        assert_eq!(m.cols(), 5);
        let padded = [2.0, 1.0, 2.0, 4.0, 8.0, 4.0, 2.0];
        for t in 0..5 {
            let want: f64 = padded[t..t + 3].iter().sum();
            assert!((m.get(0, t).re - want).abs() < 1e-12, "frame {t}");
        }
    }
}
