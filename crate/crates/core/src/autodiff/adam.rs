use super::{ParamStore, Scalar};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(beta1), T::of(beta2));
    let c1 = T::one() - T::of(beta1.powi(t));
    let c2 = T::one() - T::of(beta2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(eps));
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        Self {
            lr,
            states: params.tensors().iter().map(|t| AdamState::new(t.numel())).collect(),
        }
    }

    /// Tensors whose gradient is `None` are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Vec<T>>]) {
        for ((tensor, grad), state) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.states.iter_mut())
        {
            if let Some(g) = grad {
                adam_step(
                    tensor.data_mut(),
                    g,
                    state,
                    self.lr,
                    ADAM_BETA1,
                    ADAM_BETA2,
                    ADAM_EPS,
                );
            }
        }
    }
}
