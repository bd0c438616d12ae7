use crate::autodiff::init::SeededRng;
use crate::autodiff::{Bound, Graph, ParamStore, Scalar, Var};
use crate::error::{shape_err, Result};

use super::Linear;

/// Q/K/V/output projections. The key projection has no bias: a key bias
/// shifts every score in a softmax row equally and never receives gradient.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl AttentionParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut SeededRng,
        name: &str,
        width: usize,
    ) -> Result<Self> {
        Ok(Self {
            query: Linear::register(store, rng, &format!("{name}.query"), width, width, true)?,
            key: Linear::register(store, rng, &format!("{name}.key"), width, width, false)?,
            value: Linear::register(store, rng, &format!("{name}.value"), width, width, true)?,
            output: Linear::register(store, rng, &format!("{name}.output"), width, width, true)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `[B × T × d]`
    pub output: Var,
    /// Per-head attention weights, each `[B × T_q × T_k]`.
    pub weights: Vec<Var>,
}

/// Expand a `[B × T_k]` keep-mask (1 = attend) into the `[B × T_q × T_k]`
/// fill mask used on score matrices (true = excluded).
pub fn key_padding_mask(mask: &[u8], batch: usize, t_q: usize, t_k: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(batch * t_q * t_k);
    for b in 0..batch {
        let row = &mask[b * t_k..(b + 1) * t_k];
        for _ in 0..t_q {
            out.extend(row.iter().map(|&m| m == 0));
        }
    }
    out
}

/// Scaled dot-product attention per head over `x` (`[B × T × d]`), heads
/// concatenated and output-projected. Masked keys are filled with −∞ before
/// the softmax.
pub fn multi_head_self_attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    mask: Option<&[u8]>,
    params: &AttentionParams,
    heads: usize,
    p: &Bound,
) -> Result<AttentionOutput> {
    let shape = g.shape(x).to_vec();
    let &[batch, t, d] = shape.as_slice() else {
        return Err(shape_err("attention", format!("input {shape:?} is not [B, T, d]")));
    };
    if heads == 0 || d % heads != 0 {
        return Err(shape_err("attention", format!("width {d} with {heads} heads")));
    }
    if let Some(m) = mask {
        if m.len() != batch * t {
            return Err(shape_err("attention", format!("mask of {} for {shape:?}", m.len())));
        }
    }
    let dh = d / heads;
    let q = params.query.forward(g, p, x)?;
    let k = params.key.forward(g, p, x)?;
    let v = params.value.forward(g, p, x)?;
    let fill = mask.map(|m| key_padding_mask(m, batch, t, t));
    let scale = T::one() / T::of(dh as f64).sqrt();

    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice(q, 2, h * dh, dh)?;
        let kh = g.slice(k, 2, h * dh, dh)?;
        let vh = g.slice(v, 2, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let mut scores = g.scale(scores, scale)?;
        if let Some(fill) = &fill {
            scores = g.masked_fill(scores, fill, T::neg_infinity())?;
        }
        let w = g.softmax(scores, 2)?;
        outs.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    let merged = if heads == 1 { outs[0] } else { g.concat(&outs, 2)? };
    let output = params.output.forward(g, p, merged)?;
    Ok(AttentionOutput { output, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::init::{rng, uniform};
    use crate::autodiff::Tensor;

    fn setup(width: usize, seed: u64) -> (ParamStore<f64>, AttentionParams) {
        let mut store = ParamStore::new();
        let params = AttentionParams::register(&mut store, &mut rng(seed), "attn", width).unwrap();
        (store, params)
    }

    fn row_major(t: &Tensor<f64>) -> &[f64] {
        t.data()
    }

    #[test]
    fn single_key_gets_full_weight() {
        let (store, params) = setup(4, 1);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(uniform(&mut rng(2), &[2, 1, 4], -1.0, 1.0));
        let out = multi_head_self_attention(&mut g, x, None, &params, 2, &p).unwrap();
        for w in &out.weights {
            assert!(g.value(*w).data().iter().all(|&v| v == 1.0));
        }
        let v = params.value.forward(&mut g, &p, x).unwrap();
        let expect = params.output.forward(&mut g, &p, v).unwrap();
        assert_eq!(g.value(out.output).data(), g.value(expect).data());
    }

    #[test]
    fn zero_queries_average_unmasked_positions() {
        let (mut store, params) = setup(2, 3);
        store.get_mut(params.query.weight).data_mut().fill(0.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(uniform(&mut rng(4), &[1, 3, 2], -1.0, 1.0));
        let mask = [1, 0, 1];
        let out = multi_head_self_attention(&mut g, x, Some(&mask), &params, 1, &p).unwrap();
        let w = g.value(out.weights[0]).data();
        for row in w.chunks(3) {
            assert!((row[0] - 0.5).abs() < 1e-15 && row[1] == 0.0 && (row[2] - 0.5).abs() < 1e-15);
        }
    }

    /// Scalar loops: `softmax(q kᵀ / √d) v` then the output projection.
    fn brute_force(x: &[f64], t: usize, d: usize, store: &ParamStore<f64>, p: &AttentionParams) -> Vec<f64> {
        let proj = |lin: &Linear, row: &[f64]| -> Vec<f64> {
            let w = row_major(store.get(lin.weight));
            (0..d)
                .map(|j| {
                    let b = lin.bias.map_or(0.0, |b| store.get(b).data()[j]);
                    b + (0..d).map(|i| row[i] * w[i * d + j]).sum::<f64>()
                })
                .collect()
        };
        let rows: Vec<&[f64]> = x.chunks(d).collect();
        let q: Vec<Vec<f64>> = rows.iter().map(|r| proj(&p.query, r)).collect();
        let k: Vec<Vec<f64>> = rows.iter().map(|r| proj(&p.key, r)).collect();
        let v: Vec<Vec<f64>> = rows.iter().map(|r| proj(&p.value, r)).collect();
        let mut out = Vec::new();
        for qi in &q {
            let s: Vec<f64> = (0..t)
                .map(|j| (0..d).map(|c| qi[c] * k[j][c]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let mixed: Vec<f64> = (0..d).map(|c| (0..t).map(|j| e[j] / z * v[j][c]).sum()).collect();
            out.extend(proj(&p.output, &mixed));
        }
        out
    }

    #[test]
    fn matches_brute_force_oracle() {
        for seed in 0..20 {
            let (mut store, params) = setup(2, seed);
            let mut r = rng(seed + 100);
            for id in [params.query.bias, params.value.bias, params.output.bias].into_iter().flatten() {
                *store.get_mut(id) = uniform(&mut r, &[2], -0.5, 0.5);
            }
            let x = uniform(&mut r, &[1, 2, 2], -1.0, 1.0);
            let expect = brute_force(x.data(), 2, 2, &store, &params);
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let xv = g.constant(x);
            let out = multi_head_self_attention(&mut g, xv, None, &params, 1, &p).unwrap();
            for (a, b) in g.value(out.output).data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-6, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn masked_keys_have_zero_weight_and_rows_sum_to_one() {
        let (store, params) = setup(4, 9);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(uniform(&mut rng(10), &[2, 4, 4], -1.0, 1.0));
        let mask = [1, 1, 0, 0, 1, 0, 1, 0];
        let out = multi_head_self_attention(&mut g, x, Some(&mask), &params, 2, &p).unwrap();
        for w in &out.weights {
            for (i, row) in g.value(*w).data().chunks(4).enumerate() {
                let keep = &mask[(i / 4) * 4..(i / 4) * 4 + 4];
                for (v, &m) in row.iter().zip(keep) {
                    if m == 0 {
                        assert!(v.abs() < 1e-12);
                    }
                }
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let (store, params) = setup(4, 1);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[2, 4]));
        assert!(multi_head_self_attention(&mut g, x, None, &params, 2, &p).is_err());
        let x = g.constant(Tensor::zeros(&[1, 2, 4]));
        assert!(multi_head_self_attention(&mut g, x, None, &params, 3, &p).is_err());
        assert!(multi_head_self_attention(&mut g, x, Some(&[1]), &params, 2, &p).is_err());
    }
}
