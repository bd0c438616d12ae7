use crate::autodiff::init::{xavier_uniform, SeededRng};
use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::error::{shape_err, Result};

use super::{multi_head_self_attention, AttentionParams};

/// Dense layer weights `[in × out]` plus optional bias `[out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut SeededRng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            xavier_uniform(rng, &[fan_in, fan_out], fan_in, fan_out),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        linear(g, x, p[self.weight], self.bias.map(|b| p[b]))
    }
}

/// `x · W (+ b)` applied over the last axis of `x`, any leading shape.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let w_shape = g.shape(w).to_vec();
    let (Some(&d_in), &[w_in, d_out]) = (shape.last(), w_shape.as_slice()) else {
        return Err(shape_err("linear", format!("x {shape:?}, w {w_shape:?}")));
    };
    if d_in != w_in {
        return Err(shape_err("linear", format!("x {shape:?}, w {w_shape:?}")));
    }
    let rows = shape.iter().product::<usize>() / d_in;
    let flat = if shape.len() == 2 { x } else { g.reshape(x, &[rows, d_in])? };
    let mut y = g.matmul(flat, w)?;
    if let Some(b) = b {
        y = g.add(y, b)?;
    }
    if shape.len() == 2 {
        return Ok(y);
    }
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = d_out;
    g.reshape(y, &out_shape)
}

/// Pre-norm transformer block parameters.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub attn: AttentionParams,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    pub heads: usize,
}

impl LayerParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut SeededRng,
        name: &str,
        width: usize,
        heads: usize,
        mlp_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            ln1_gamma: store.add(format!("{name}.ln1.gamma"), Tensor::full(&[width], T::one()))?,
            ln1_beta: store.add(format!("{name}.ln1.beta"), Tensor::zeros(&[width]))?,
            attn: AttentionParams::register(store, rng, &format!("{name}.attn"), width)?,
            ln2_gamma: store.add(format!("{name}.ln2.gamma"), Tensor::full(&[width], T::one()))?,
            ln2_beta: store.add(format!("{name}.ln2.beta"), Tensor::zeros(&[width]))?,
            mlp_in: Linear::register(store, rng, &format!("{name}.mlp.fc1"), width, mlp_dim, true)?,
            mlp_out: Linear::register(store, rng, &format!("{name}.mlp.fc2"), mlp_dim, width, true)?,
            heads,
        })
    }
}

/// `y = x + MHSA(LN(x))`, then `y + MLP(LN(y))` with a ReLU MLP.
pub fn encoder_layer<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    mask: Option<&[u8]>,
    layer: &LayerParams,
    p: &Bound,
) -> Result<Var> {
    let h = g.layer_norm(x, p[layer.ln1_gamma], p[layer.ln1_beta])?;
    let attn = multi_head_self_attention(g, h, mask, &layer.attn, layer.heads, p)?;
    let x = g.add(x, attn.output)?;

    let h = g.layer_norm(x, p[layer.ln2_gamma], p[layer.ln2_beta])?;
    let h = layer.mlp_in.forward(g, p, h)?;
    let h = g.relu(h)?;
    let h = layer.mlp_out.forward(g, p, h)?;
    g.add(x, h)
}
