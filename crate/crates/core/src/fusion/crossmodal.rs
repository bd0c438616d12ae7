use crate::autodiff::init::{xavier_uniform, SeededRng};
use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Scalar, Var};
use crate::encoders::{key_padding_mask, Linear};
use crate::error::{shape_err, Result};

/// Projections for both attention directions, each `[d × d]`, no biases.
/// α is the vision sequence and β the text sequence.
#[derive(Debug, Clone, Copy)]
pub struct CrossAttnParams {
    pub query_a: ParamId,
    pub key_b: ParamId,
    pub value_b: ParamId,
    pub query_b: ParamId,
    pub key_a: ParamId,
    pub value_a: ParamId,
}

impl CrossAttnParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut SeededRng,
        width: usize,
    ) -> Result<Self> {
        let mut w = |name: &str| {
            store.add(
                format!("fusion.cross.{name}"),
                xavier_uniform(rng, &[width, width], width, width),
            )
        };
        Ok(Self {
            query_a: w("query_a")?,
            key_b: w("key_b")?,
            value_b: w("value_b")?,
            query_b: w("query_b")?,
            key_a: w("key_a")?,
            value_a: w("value_a")?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CrossAttentionOutput {
    /// `[B × T_q × d_v]`
    pub output: Var,
    /// Row-stochastic score matrix `[B × T_q × T_kv]`.
    pub scores: Var,
}

/// `softmax((X_q W_Q)(X_kv W_K)ᵀ / √d_k) · X_kv W_V`: the query sequence
/// absorbs information from the key/value sequence. Keys with
/// `kv_mask == 0` receive zero weight.
pub fn crossmodal_attention<T: Scalar>(
    g: &mut Graph<T>,
    x_query: Var,
    x_kv: Var,
    kv_mask: Option<&[u8]>,
    w_query: Var,
    w_key: Var,
    w_value: Var,
) -> Result<CrossAttentionOutput> {
    let (sq, skv) = (g.shape(x_query).to_vec(), g.shape(x_kv).to_vec());
    let (&[batch, t_q, d], &[b2, t_kv, d2]) = (sq.as_slice(), skv.as_slice()) else {
        return Err(shape_err("crossmodal_attention", format!("{sq:?} with {skv:?}")));
    };
    if batch != b2 || d != d2 {
        return Err(shape_err("crossmodal_attention", format!("{sq:?} with {skv:?}")));
    }
    if let Some(m) = kv_mask {
        if m.len() != batch * t_kv {
            return Err(shape_err(
                "crossmodal_attention",
                format!("mask of {} for {skv:?}", m.len()),
            ));
        }
    }
    let q = crate::encoders::linear(g, x_query, w_query, None)?;
    let k = crate::encoders::linear(g, x_kv, w_key, None)?;
    let v = crate::encoders::linear(g, x_kv, w_value, None)?;
    let d_k = g.shape(k)[2];

    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    let mut s = g.scale(s, T::one() / T::of(d_k as f64).sqrt())?;
    if let Some(m) = kv_mask {
        s = g.masked_fill(s, &key_padding_mask(m, batch, t_q, t_kv), T::neg_infinity())?;
    }
    let scores = g.softmax(s, 2)?;
    let output = g.matmul(scores, v)?;
    Ok(CrossAttentionOutput { output, scores })
}

/// Concatenate both directions' outputs along time, average over time and
/// project to the two class logits.
pub fn crossmodal_head<T: Scalar>(
    g: &mut Graph<T>,
    y_a: Var,
    y_b: Var,
    out: &Linear,
    p: &Bound,
) -> Result<Var> {
    let joined = g.concat(&[y_a, y_b], 1)?;
    let pooled = g.mean(joined, 1)?;
    out.forward(g, p, pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::init::{rng, uniform};
    use crate::autodiff::Tensor;

    struct Case {
        xq: Tensor<f64>,
        xkv: Tensor<f64>,
        wq: Tensor<f64>,
        wk: Tensor<f64>,
        wv: Tensor<f64>,
    }

    fn case(seed: u64, b: usize, tq: usize, tk: usize, d: usize) -> Case {
        let mut r = rng(seed);
        Case {
            xq: uniform(&mut r, &[b, tq, d], -1.0, 1.0),
            xkv: uniform(&mut r, &[b, tk, d], -1.0, 1.0),
            wq: uniform(&mut r, &[d, d], -1.0, 1.0),
            wk: uniform(&mut r, &[d, d], -1.0, 1.0),
            wv: uniform(&mut r, &[d, d], -1.0, 1.0),
        }
    }

    fn run(c: &Case, mask: Option<&[u8]>) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let v: Vec<Var> = [&c.xq, &c.xkv, &c.wq, &c.wk, &c.wv].iter().map(|t| g.constant((*t).clone())).collect();
        let out = crossmodal_attention(&mut g, v[0], v[1], mask, v[2], v[3], v[4]).unwrap();
        (g.value(out.output).data().to_vec(), g.value(out.scores).data().to_vec())
    }

    #[test]
    fn score_rows_are_distributions() {
        let c = case(1, 2, 3, 4, 3);
        let mask = [1, 1, 0, 1, 1, 0, 0, 0];
        let (_, s) = run(&c, Some(&mask));
        for (i, row) in s.chunks(4).enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let keep = &mask[(i / 3) * 4..][..4];
            assert!(row.iter().zip(keep).all(|(v, &m)| m == 1 || *v == 0.0));
        }
    }

    #[test]
    fn single_key_returns_its_value() {
        let c = case(2, 2, 3, 1, 4);
        let (y, s) = run(&c, None);
        assert!(s.iter().all(|&v| v == 1.0));
        let (xkv, wv) = (c.xkv.data(), c.wv.data());
        for b in 0..2 {
            let v: Vec<f64> = (0..4).map(|j| (0..4).map(|i| xkv[b * 4 + i] * wv[i * 4 + j]).sum()).collect();
            for t in 0..3 {
                for j in 0..4 {
                    assert!((y[(b * 3 + t) * 4 + j] - v[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_keys_average_unmasked_values() {
        let mut c = case(3, 1, 2, 3, 2);
        c.wk.data_mut().fill(0.0);
        let mask = [1, 0, 1];
        let (y, _) = run(&c, Some(&mask));
        let (xkv, wv) = (c.xkv.data(), c.wv.data());
        let v = |t: usize, j: usize| (0..2).map(|i| xkv[t * 2 + i] * wv[i * 2 + j]).sum::<f64>();
        for t in 0..2 {
            for j in 0..2 {
                assert!((y[t * 2 + j] - 0.5 * (v(0, j) + v(2, j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permuting_keys_with_mask_leaves_output_unchanged() {
        let c = case(4, 1, 2, 3, 3);
        let mask = [1, 0, 1];
        let (y, _) = run(&c, Some(&mask));
        let order = [2, 0, 1];
        let mut p = Case { xkv: c.xkv.clone(), ..case(4, 1, 2, 3, 3) };
        let mut pmask = [0u8; 3];
        for (dst, &src) in order.iter().enumerate() {
            p.xkv.data_mut()[dst * 3..dst * 3 + 3].copy_from_slice(&c.xkv.data()[src * 3..src * 3 + 3]);
            pmask[dst] = mask[src];
        }
        let (yp, _) = run(&p, Some(&pmask));
        for (a, b) in y.iter().zip(&yp) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn head_pools_over_both_sequences() {
        let mut store = ParamStore::<f64>::new();
        let out = Linear::register(&mut store, &mut rng(0), "head.out", 2, 2, true).unwrap();
        let w = store.get(out.weight).data().to_vec();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let (c1, c2) = ([0.5, -1.0], [2.0, 3.0]);
        let ya = g.constant(Tensor::from_f64(&[1, 3, 2], &[c1, c1, c1].concat()).unwrap());
        let yb = g.constant(Tensor::from_f64(&[1, 1, 2], &c2).unwrap());
        let logits = crossmodal_head(&mut g, ya, yb, &out, &p).unwrap();
        let pooled: Vec<f64> = (0..2).map(|j| (3.0 * c1[j] + c2[j]) / 4.0).collect();
        for j in 0..2 {
            let expect = pooled[0] * w[j] + pooled[1] * w[2 + j];
            assert!((g.value(logits).data()[j] - expect).abs() < 1e-12);
        }
        let bad = g.constant(Tensor::zeros(&[1, 2, 3]));
        assert!(crossmodal_head(&mut g, ya, bad, &out, &p).is_err());
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let c = case(5, 1, 2, 2, 2);
        let mut g = Graph::new();
        let v: Vec<Var> = [&c.xq, &c.xkv, &c.wq, &c.wk, &c.wv].iter().map(|t| g.constant((*t).clone())).collect();
        assert!(crossmodal_attention(&mut g, v[0], v[1], Some(&[1]), v[2], v[3], v[4]).is_err());
        let other = g.constant(Tensor::zeros(&[2, 2, 2]));
        assert!(crossmodal_attention(&mut g, v[0], other, None, v[2], v[3], v[4]).is_err());
    }
}
