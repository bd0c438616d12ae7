use crate::autodiff::init::SeededRng;
use crate::autodiff::{Bound, Graph, ParamStore, Scalar, Var};
use crate::encoders::Linear;
use crate::error::{shape_err, Result};

use super::NUM_CLASSES;

/// `Dense₂(ReLU(Dense_hidden([f_t; f_v])))`
#[derive(Debug, Clone, Copy)]
pub struct ConcatHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl ConcatHead {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut SeededRng,
        width: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::register(store, rng, "head.hidden", 2 * width, hidden, true)?,
            out: Linear::register(store, rng, "head.out", hidden, NUM_CLASSES, true)?,
        })
    }
}

/// Concatenate text and vision CLS vectors (`[B × d]` each) and classify.
pub fn concat_head<T: Scalar>(
    g: &mut Graph<T>,
    f_text: Var,
    f_vision: Var,
    head: &ConcatHead,
    p: &Bound,
) -> Result<Var> {
    if g.shape(f_text).len() != 2 || g.shape(f_text)[0] != g.shape(f_vision)[0] {
        return Err(shape_err(
            "concat_head",
            format!("{:?} with {:?}", g.shape(f_text), g.shape(f_vision)),
        ));
    }
    let joined = g.concat(&[f_text, f_vision], 1)?;
    let h = head.hidden.forward(g, p, joined)?;
    let h = g.relu(h)?;
    head.out.forward(g, p, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::init::{rng, uniform};

    #[test]
    fn zero_weights_give_output_bias() {
        let mut store = ParamStore::<f64>::new();
        let head = ConcatHead::register(&mut store, &mut rng(0), 3, 512).unwrap();
        for id in [head.hidden.weight, head.out.weight] {
            store.get_mut(id).data_mut().fill(0.0);
        }
        store.get_mut(head.out.bias.unwrap()).data_mut().copy_from_slice(&[0.25, -1.5]);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let ft = g.constant(uniform(&mut rng(1), &[4, 3], -1.0, 1.0));
        let fv = g.constant(uniform(&mut rng(2), &[4, 3], -1.0, 1.0));
        let logits = concat_head(&mut g, ft, fv, &head, &p).unwrap();
        assert_eq!(g.shape(logits), &[4, 2]);
        assert!(g.value(logits).data().chunks(2).all(|r| r == [0.25, -1.5]));
    }
}
