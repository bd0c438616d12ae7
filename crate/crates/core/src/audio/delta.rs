use crate::error::{invalid, Result};

use super::Matrix;

pub const DEFAULT_DELTA_WIDTH: usize = 2;

/// Regression delta along the time axis (columns), per band, with edge
/// replication: `d[t] = Σ n·(c[t+n] − c[t−n]) / (2 Σ n²)`.
pub fn delta(features: &Matrix<f64>, width: usize) -> Result<Matrix<f64>> {
    if width == 0 {
        return Err(invalid("delta width must be at least 1"));
    }
    let (bands, frames) = features.shape();
    if frames == 0 {
        return Err(invalid("delta needs at least one frame"));
    }
    let denom = 2.0 * (1..=width).map(|n| (n * n) as f64).sum::<f64>();
    let last = frames as i64 - 1;
    let mut out = Matrix::zeros(bands, frames);
    for b in 0..bands {
        let row = features.row(b);
        let at = |i: i64| row[i.clamp(0, last) as usize];
        let dst = out.row_mut(b);
        for (t, d) in dst.iter_mut().enumerate() {
            let t = t as i64;
            let mut acc = 0.0;
            for n in 1..=width as i64 {
                acc += n as f64 * (at(t + n) - at(t - n));
            }
            *d = acc / denom;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_row() {
        // width 2, denominator 10, edges replicated: ext = [1,1 | 1,3,2,5,4 | 4,4]
        let m = Matrix::from_vec(1, 5, vec![1.0, 3.0, 2.0, 5.0, 4.0]);
        let d = delta(&m, 2).unwrap();
        let expected = [
            ((3.0 - 1.0) + 2.0 * (2.0 - 1.0)) / 10.0,
            ((2.0 - 1.0) + 2.0 * (5.0 - 1.0)) / 10.0,
            ((5.0 - 3.0) + 2.0 * (4.0 - 1.0)) / 10.0,
            ((4.0 - 2.0) + 2.0 * (4.0 - 3.0)) / 10.0,
            ((4.0 - 5.0) + 2.0 * (4.0 - 2.0)) / 10.0,
        ];
        assert_eq!(expected, [0.4, 0.9, 0.8, 0.4, 0.3]);
        for (a, b) in d.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_and_ramp() {
        let c = Matrix::from_vec(2, 6, vec![4.5; 12]);
        assert!(delta(&c, 2).unwrap().data().iter().all(|&v| v == 0.0));
        let ramp = Matrix::from_vec(1, 10, (0..10).map(|t| 3.0 * t as f64 - 1.0).collect());
        let d = delta(&ramp, 2).unwrap();
        for t in 2..8 {
            assert_eq!(d.get(0, t), 3.0);
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(delta(&Matrix::zeros(3, 0), 2).is_err());
        assert!(delta(&Matrix::zeros(3, 3), 0).is_err());
    }
}
