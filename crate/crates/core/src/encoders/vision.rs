use crate::audio::FeatureImage;
use crate::autodiff::init::{xavier_uniform, SeededRng};
use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{invalid, Result};

use super::{encoder_layer, patchify, LayerParams, Linear, ModalitySequence, VisionConfig};

/// Patch-embedding transformer over feature images.
#[derive(Debug, Clone)]
pub struct VisionEncoder {
    pub cfg: VisionConfig,
    pub patch_embed: Linear,
    pub cls: ParamId,
    pub positions: ParamId,
    pub layers: Vec<LayerParams>,
    pub final_gamma: ParamId,
    pub final_beta: ParamId,
}

impl VisionEncoder {
    pub fn register<T: Scalar>(
        cfg: VisionConfig,
        store: &mut ParamStore<T>,
        rng: &mut SeededRng,
        prefix: &str,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.encoder.width;
        let patch_embed = Linear::register(
            store,
            rng,
            &format!("{prefix}.patch_embed"),
            cfg.patch_dim(),
            d,
            true,
        )?;
        let cls = store.add(format!("{prefix}.cls"), xavier_uniform(rng, &[d], d, d))?;
        let positions = store.add(
            format!("{prefix}.positions"),
            xavier_uniform(rng, &[cfg.seq_len(), d], d, d),
        )?;
        let layers = (0..cfg.encoder.depth)
            .map(|i| {
                LayerParams::register(
                    store,
                    rng,
                    &format!("{prefix}.layers.{i}"),
                    d,
                    cfg.encoder.heads,
                    cfg.encoder.mlp_dim,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            patch_embed,
            cls,
            positions,
            layers,
            final_gamma: store.add(format!("{prefix}.final_norm.gamma"), Tensor::full(&[d], T::one()))?,
            final_beta: store.add(format!("{prefix}.final_norm.beta"), Tensor::zeros(&[d]))?,
        })
    }

    /// Encode a batch of images; `tokens` has length `patches + 1` with CLS
    /// first.
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        images: &[&FeatureImage],
    ) -> Result<ModalitySequence> {
        let batch = images.len();
        if batch == 0 {
            return Err(invalid("empty image batch"));
        }
        let (n, dim, d) = (self.cfg.num_patches(), self.cfg.patch_dim(), self.cfg.encoder.width);
        let mut patches = Vec::with_capacity(batch * n * dim);
        for img in images {
            if img.side() != self.cfg.image_side {
                return Err(invalid(format!(
                    "image side {} but encoder expects {}",
                    img.side(),
                    self.cfg.image_side
                )));
            }
            patches.extend_from_slice(patchify::<T>(img, self.cfg.patch)?.data());
        }
        let patches = g.constant(Tensor::new(vec![batch, n, dim], patches)?);
        let embedded = self.patch_embed.forward(g, p, patches)?;

        let zeros = g.constant(Tensor::zeros(&[batch, 1, d]));
        let cls = g.add(zeros, p[self.cls])?;
        let x = g.concat(&[cls, embedded], 1)?;
        let mut x = g.add(x, p[self.positions])?;

        for layer in &self.layers {
            x = encoder_layer(g, x, None, layer, p)?;
        }
        let tokens = g.layer_norm(x, p[self.final_gamma], p[self.final_beta])?;
        let cls = g.slice(tokens, 1, 0, 1)?;
        let cls = g.reshape(cls, &[batch, d])?;
        Ok(ModalitySequence {
            tokens,
            cls,
            mask: vec![1; batch * (n + 1)],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::init::rng;
    use crate::encoders::EncoderConfig;
    use rand::Rng;

    fn image(seed: u64, side: usize) -> FeatureImage {
        let mut r = rng(seed);
        FeatureImage::from_vec(side, (0..3 * side * side).map(|_| r.random_range(-1.0f32..1.0)).collect())
            .unwrap()
    }

    fn cfg(depth: usize, width: usize, heads: usize) -> VisionConfig {
        VisionConfig {
            encoder: EncoderConfig {
                depth,
                width,
                heads,
                mlp_dim: 2 * width,
            },
            image_side: 16,
            patch: 4,
        }
    }

    #[test]
    fn output_shapes_over_config_sweep() {
        for depth in [1, 2] {
            for width in [4, 8, 16] {
                for heads in [1, 2, 4] {
                    let c = cfg(depth, width, heads);
                    let mut store = ParamStore::<f64>::new();
                    let enc = VisionEncoder::register(c, &mut store, &mut rng(0), "vision").unwrap();
                    let mut g = Graph::new();
                    let p = store.bind(&mut g);
                    let (a, b) = (image(1, 16), image(2, 16));
                    let out = enc.encode(&mut g, &p, &[&a, &b]).unwrap();
                    assert_eq!(g.shape(out.tokens), &[2, 17, width]);
                    assert_eq!(g.shape(out.cls), &[2, width]);
                    let tokens = g.value(out.tokens).data();
                    for bi in 0..2 {
                        let row = &tokens[bi * 17 * width..bi * 17 * width + width];
                        assert_eq!(row, &g.value(out.cls).data()[bi * width..(bi + 1) * width]);
                    }
                }
            }
        }
    }

    #[test]
    fn identical_images_give_identical_outputs() {
        let mut store = ParamStore::<f32>::new();
        let enc = VisionEncoder::register(cfg(1, 8, 2), &mut store, &mut rng(3), "vision").unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let a = image(4, 16);
        let out = enc.encode(&mut g, &p, &[&a, &a]).unwrap();
        let data = g.value(out.tokens).data();
        let half = data.len() / 2;
        assert_eq!(&data[..half], &data[half..]);
    }

    #[test]
    fn cls_ignores_patch_order_without_positions() {
        let c = cfg(2, 8, 2);
        let mut store = ParamStore::<f64>::new();
        let enc = VisionEncoder::register(c, &mut store, &mut rng(7), "vision").unwrap();
        store.get_mut(enc.positions).data_mut().fill(0.0);

        let img = image(8, 16);
        // Reverse the order of the 4×4 grid of patches.
        let grid = 4;
        let mut shuffled = vec![0f32; img.data().len()];
        for ch in 0..3 {
            for r in 0..16 {
                for col in 0..16 {
                    let (pr, pc) = (r / 4, col / 4);
                    let (nr, nc) = (grid - 1 - pr, grid - 1 - pc);
                    let (dst_r, dst_c) = (nr * 4 + r % 4, nc * 4 + col % 4);
                    shuffled[ch * 256 + dst_r * 16 + dst_c] = img.get(ch, r, col);
                }
            }
        }
        let perm = FeatureImage::from_vec(16, shuffled).unwrap();

        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let out = enc.encode(&mut g, &p, &[&img, &perm]).unwrap();
        let cls = g.value(out.cls).data();
        for i in 0..8 {
            assert!((cls[i] - cls[8 + i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_image_side() {
        let mut store = ParamStore::<f64>::new();
        let enc = VisionEncoder::register(cfg(1, 4, 1), &mut store, &mut rng(0), "vision").unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let img = image(0, 8);
        assert!(enc.encode(&mut g, &p, &[&img]).is_err());
        assert!(enc.encode(&mut g, &p, &[]).is_err());
    }
}
