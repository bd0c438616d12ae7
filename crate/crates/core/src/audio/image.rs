use crate::error::{invalid, Result};

use super::{delta, Matrix, Spectrogram, DEFAULT_DELTA_WIDTH};

/// Three-channel square image (static, delta, delta-delta), values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    side: usize,
    /// Channel-major, then row-major: `data[(c * side + r) * side + col]`.
    data: Vec<f32>,
    /// Set when the source image had no dynamic range and was zeroed.
    pub degenerate: bool,
}

impl FeatureImage {
    pub const CHANNELS: usize = 3;

    pub fn from_vec(side: usize, data: Vec<f32>) -> Result<Self> {
        if side == 0 || data.len() != Self::CHANNELS * side * side {
            return Err(invalid(format!(
                "feature image of side {side} needs {} values, got {}",
                Self::CHANNELS * side * side,
                data.len()
            )));
        }
        Ok(Self {
            side,
            data,
            degenerate: false,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[(c * self.side + r) * self.side + col]
    }
}

/// Bilinear resize with aligned corners: output corners sample input corners
/// exactly.
pub fn bilinear_resize(src: &Matrix<f64>, out_rows: usize, out_cols: usize) -> Matrix<f64> {
    let (in_rows, in_cols) = src.shape();
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_in == 1 || n_out == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Matrix::zeros(out_rows, out_cols);
    for r in 0..out_rows {
        let (r0, r1, fr) = coord(r, in_rows, out_rows);
        for c in 0..out_cols {
            let (c0, c1, fc) = coord(c, in_cols, out_cols);
            let top = src.get(r0, c0) * (1.0 - fc) + src.get(r0, c1) * fc;
            let bottom = src.get(r1, c0) * (1.0 - fc) + src.get(r1, c1) * fc;
            out.set(r, c, top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Min–max scale to [0, 1], then `(x − 0.5) / 0.5`. Returns `true` when the
/// input had no range, in which case every value becomes 0.
pub fn normalize_unit_range(values: &mut [f64]) -> bool {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    // Also catches NaN extremes.
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return true;
    }
    let span = hi - lo;
    for v in values.iter_mut() {
        let unit = (*v - lo) / span;
        *v = ((unit - 0.5) / 0.5).clamp(-1.0, 1.0);
    }
    false
}

/// Stack (static, delta, delta-delta), resize each to `side × side` and
/// normalize the whole image jointly.
pub fn build_feature_image(spec: &Spectrogram, side: usize) -> Result<FeatureImage> {
    if side < 2 {
        return Err(invalid("image side must be at least 2"));
    }
    if spec.bands() == 0 {
        return Err(invalid("spectrogram has no bands"));
    }
    let d1 = delta(&spec.values, DEFAULT_DELTA_WIDTH)?;
    let d2 = delta(&d1, DEFAULT_DELTA_WIDTH)?;

    let mut all = Vec::with_capacity(3 * side * side);
    for ch in [&spec.values, &d1, &d2] {
        all.extend(bilinear_resize(ch, side, side).into_vec());
    }
    let degenerate = normalize_unit_range(&mut all);
    let mut img = FeatureImage::from_vec(side, all.into_iter().map(|v| v as f32).collect())?;
    img.degenerate = degenerate;
    Ok(img)
}
