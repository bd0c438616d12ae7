use crate::autodiff::init::SeededRng;
use crate::autodiff::{Bound, Graph, ParamStore, Scalar, Var};
use crate::encoders::Linear;
use crate::error::{shape_err, Result};

/// Gated Multimodal Unit weights. Matrices are stored input-major
/// (`[d × k]`, applied as `f · W`).
#[derive(Debug, Clone, Copy)]
pub struct GmuParams {
    pub text: Linear,
    pub vision: Linear,
    /// Acts on `[f_t; f_v]`, `[2d × k]`.
    pub gate: Linear,
}

impl GmuParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut SeededRng,
        width: usize,
        dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            text: Linear::register(store, rng, "fusion.gmu.text", width, dim, true)?,
            vision: Linear::register(store, rng, "fusion.gmu.vision", width, dim, true)?,
            gate: Linear::register(store, rng, "fusion.gmu.gate", 2 * width, dim, true)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmuOutput {
    /// Fused representation `[B × k]`.
    pub h: Var,
    /// Per-dimension gate `[B × k]`; weight on the text branch.
    pub z: Var,
    pub h_text: Var,
    pub h_vision: Var,
}

/// `h = z ⊙ tanh(W_t f_t + b_t) + (1 − z) ⊙ tanh(W_v f_v + b_v)` with
/// `z = σ(W_z [f_t; f_v] + b_z)`.
pub fn gmu_fuse<T: Scalar>(
    g: &mut Graph<T>,
    f_text: Var,
    f_vision: Var,
    params: &GmuParams,
    p: &Bound,
) -> Result<GmuOutput> {
    if g.shape(f_text).len() != 2 || g.shape(f_text)[0] != g.shape(f_vision)[0] {
        return Err(shape_err(
            "gmu_fuse",
            format!("{:?} with {:?}", g.shape(f_text), g.shape(f_vision)),
        ));
    }
    let h_text = params.text.forward(g, p, f_text)?;
    let h_text = g.tanh(h_text)?;
    let h_vision = params.vision.forward(g, p, f_vision)?;
    let h_vision = g.tanh(h_vision)?;

    let joined = g.concat(&[f_text, f_vision], 1)?;
    let z = params.gate.forward(g, p, joined)?;
    let z = g.sigmoid(z)?;

    // z·h_t + (1 − z)·h_v  ==  h_v + z·(h_t − h_v)
    let diff = g.sub(h_text, h_vision)?;
    let gated = g.mul(z, diff)?;
    let h = g.add(h_vision, gated)?;
    Ok(GmuOutput {
        h,
        z,
        h_text,
        h_vision,
    })
}
