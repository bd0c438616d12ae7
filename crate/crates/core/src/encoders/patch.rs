use crate::audio::FeatureImage;
use crate::autodiff::{Scalar, Tensor};
use crate::error::{invalid, Result};

/// Split an image into non-overlapping `patch × patch` tiles in row-major
/// tile order. Each row of the result is one tile flattened channel-major
/// (`[c][dy][dx]`), giving `[N × 3·patch²]`.
pub fn patchify<T: Scalar>(image: &FeatureImage, patch: usize) -> Result<Tensor<T>> {
    let side = image.side();
    if patch == 0 || !side.is_multiple_of(patch) {
        return Err(invalid(format!(
            "image side {side} is not divisible by patch {patch}"
        )));
    }
    let per_side = side / patch;
    let dim = FeatureImage::CHANNELS * patch * patch;
    let mut out = Vec::with_capacity(per_side * per_side * dim);
    for py in 0..per_side {
        for px in 0..per_side {
            for c in 0..FeatureImage::CHANNELS {
                for dy in 0..patch {
                    for dx in 0..patch {
                        out.push(T::of(f64::from(image.get(c, py * patch + dy, px * patch + dx))));
                    }
                }
            }
        }
    }
    Tensor::new(vec![per_side * per_side, dim], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(patches: &Tensor<T>, side: usize, patch: usize) -> Result<FeatureImage> {
    let per_side = side / patch;
    let dim = FeatureImage::CHANNELS * patch * patch;
    if patches.shape() != [per_side * per_side, dim] {
        return Err(invalid(format!(
            "patch tensor {:?} does not tile a {side}x{side} image",
            patches.shape()
        )));
    }
    let mut data = vec![0f32; FeatureImage::CHANNELS * side * side];
    let src = patches.data();
    let mut i = 0;
    for py in 0..per_side {
        for px in 0..per_side {
            for c in 0..FeatureImage::CHANNELS {
                for dy in 0..patch {
                    for dx in 0..patch {
                        let (r, col) = (py * patch + dy, px * patch + dx);
                        data[(c * side + r) * side + col] = src[i].as_f64() as f32;
                        i += 1;
                    }
                }
            }
        }
    }
    FeatureImage::from_vec(side, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_image(side: usize) -> FeatureImage {
        let n = 3 * side * side;
        FeatureImage::from_vec(side, (0..n).map(|i| i as f32 / n as f32).collect()).unwrap()
    }

    #[test]
    fn reference_geometry() {
        let p: Tensor<f32> = patchify(&ramp_image(224), 16).unwrap();
        assert_eq!(p.shape(), &[196, 768]);
        let q: Tensor<f32> = patchify(&ramp_image(32), 8).unwrap();
        assert_eq!(q.shape(), &[16, 192]);
    }

    #[test]
    fn round_trip_is_identity() {
        let img = ramp_image(12);
        let p: Tensor<f64> = patchify(&img, 4).unwrap();
        assert_eq!(unpatchify(&p, 12, 4).unwrap(), img);
    }

    #[test]
    fn first_patch_layout() {
        let img = ramp_image(4);
        let p: Tensor<f32> = patchify(&img, 2).unwrap();
        // tile (0,1), channel 1, dy 1, dx 0 → pixel (c=1, r=1, col=2)
        assert_eq!(p.data()[12 + 4 + 2], img.get(1, 1, 2));
    }

    #[test]
    fn indivisible_side() {
        assert!(patchify::<f32>(&ramp_image(10), 4).is_err());
    }
}
