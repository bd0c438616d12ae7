use crate::autodiff::init::{xavier_uniform, SeededRng};
use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Scalar, Tensor};
use crate::chat::TokenSequence;
use crate::error::{invalid, Result};

use super::{encoder_layer, LayerParams, ModalitySequence, TextConfig};

/// Token-embedding transformer with a key padding mask.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub cfg: TextConfig,
    pub embeddings: ParamId,
    pub positions: ParamId,
    pub layers: Vec<LayerParams>,
    pub final_gamma: ParamId,
    pub final_beta: ParamId,
}

impl TextEncoder {
    pub fn register<T: Scalar>(
        cfg: TextConfig,
        store: &mut ParamStore<T>,
        rng: &mut SeededRng,
        prefix: &str,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.encoder.width;
        let embeddings = store.add(
            format!("{prefix}.embeddings"),
            xavier_uniform(rng, &[cfg.vocab_size, d], d, d),
        )?;
        let positions = store.add(
            format!("{prefix}.positions"),
            xavier_uniform(rng, &[cfg.max_len, d], d, d),
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
            embeddings,
            positions,
            layers,
            final_gamma: store.add(format!("{prefix}.final_norm.gamma"), Tensor::full(&[d], T::one()))?,
            final_beta: store.add(format!("{prefix}.final_norm.beta"), Tensor::zeros(&[d]))?,
        })
    }

    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        seqs: &[&TokenSequence],
    ) -> Result<ModalitySequence> {
        let batch = seqs.len();
        if batch == 0 {
            return Err(invalid("empty token batch"));
        }
        let (t, d) = (self.cfg.max_len, self.cfg.encoder.width);
        let mut ids = Vec::with_capacity(batch * t);
        let mut mask = Vec::with_capacity(batch * t);
        for s in seqs {
            if s.ids.len() != t || s.attention_mask.len() != t {
                return Err(invalid(format!(
                    "token sequence of length {} but encoder expects {t}",
                    s.ids.len()
                )));
            }
            if let Some(&bad) = s.ids.iter().find(|&&id| id as usize >= self.cfg.vocab_size) {
                return Err(invalid(format!(
                    "token id {bad} outside vocabulary of {}",
                    self.cfg.vocab_size
                )));
            }
            ids.extend(s.ids.iter().map(|&id| id as usize));
            mask.extend_from_slice(&s.attention_mask);
        }
        let x = g.embedding(p[self.embeddings], &ids)?;
        let x = g.reshape(x, &[batch, t, d])?;
        let mut x = g.add(x, p[self.positions])?;
        for layer in &self.layers {
            x = encoder_layer(g, x, Some(&mask), layer, p)?;
        }
        let tokens = g.layer_norm(x, p[self.final_gamma], p[self.final_beta])?;
        let cls = g.slice(tokens, 1, 0, 1)?;
        let cls = g.reshape(cls, &[batch, d])?;
        Ok(ModalitySequence { tokens, cls, mask })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::init::rng;
    use crate::chat::{CLS, SEP};
    use crate::encoders::EncoderConfig;

    fn cfg() -> TextConfig {
        TextConfig {
            encoder: EncoderConfig {
                depth: 2,
                width: 8,
                heads: 2,
                mlp_dim: 16,
            },
            vocab_size: 12,
            max_len: 6,
        }
    }

    fn seq(ids: &[u32], real: usize) -> TokenSequence {
        TokenSequence {
            ids: ids.to_vec(),
            attention_mask: (0..ids.len()).map(|i| u8::from(i < real)).collect(),
            vocab_size: 12,
        }
    }

    fn encode(s: &[&TokenSequence]) -> (Vec<f64>, Vec<usize>) {
        let mut store = ParamStore::<f64>::new();
        let enc = TextEncoder::register(cfg(), &mut store, &mut rng(21), "text").unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let out = enc.encode(&mut g, &p, s).unwrap();
        (g.value(out.cls).data().to_vec(), g.shape(out.tokens).to_vec())
    }

    #[test]
    fn padded_ids_never_reach_cls() {
        let a = seq(&[CLS, 5, 7, SEP, 0, 0], 4);
        let b = seq(&[CLS, 5, 7, SEP, 9, 11], 4);
        let (ca, shape) = encode(&[&a]);
        let (cb, _) = encode(&[&b]);
        assert_eq!(shape, vec![1, 6, 8]);
        assert_eq!(ca, cb);
    }

    #[test]
    fn empty_utterance_is_finite() {
        let s = seq(&[CLS, SEP, 0, 0, 0, 0], 2);
        let (cls, _) = encode(&[&s]);
        assert!(cls.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_out_of_vocabulary_ids_and_wrong_length() {
        let mut store = ParamStore::<f64>::new();
        let enc = TextEncoder::register(cfg(), &mut store, &mut rng(0), "text").unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let bad = seq(&[CLS, 12, SEP, 0, 0, 0], 3);
        assert!(enc.encode(&mut g, &p, &[&bad]).is_err());
        let short = seq(&[CLS, SEP], 2);
        assert!(enc.encode(&mut g, &p, &[&short]).is_err());
    }
}
