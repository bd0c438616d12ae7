//! Central-difference gradient verification in double precision.

use crate::error::{invalid, Result};

use super::{Graph, Tensor, Var};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradFailure {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    /// Entries compared.
    pub checked: usize,
    /// Entries whose ±h evaluations took different ReLU pieces; the
    /// difference quotient is meaningless there, so they are not compared.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs() + 1e-12)
}

/// Compare the tape's gradient of the scalar `f(inputs)` against central
/// differences for every entry of every input.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).item(), g.kink_signature()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(invalid(format!(
            "grad_check needs a scalar output, got shape {:?}",
            g.shape(out)
        )));
    }
    let base_kinks = g.kink_signature();
    let grads = g.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let (plus, k_plus) = eval(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let (minus, k_minus) = eval(&work)?;
            work[i].data_mut()[j] = orig;

            if k_plus != base_kinks || k_minus != base_kinks {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let rel = relative_error(a, numeric);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel > tol {
                report.failures.push(GradFailure {
                    input: i,
                    index: j,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::init::{rng, uniform};

    #[test]
    fn linear_graph_gradient_is_input() {
        let x = Tensor::from_f64(&[1, 3], &[0.5, -1.5, 2.0]).unwrap();
        let w = Tensor::from_f64(&[3, 1], &[1.0, 2.0, 3.0]).unwrap();
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.input(w.clone()));
        let y = g.matmul(xv, wv).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(wv).unwrap(), x.data());

        let report = grad_check(&[x, w], |g, v| g.matmul(v[0], v[1]), 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn tanh_of_matmul_passes_tight_tolerance() {
        let mut r = rng(11);
        let a = uniform(&mut r, &[4, 4], -1.0, 1.0);
        let b = uniform(&mut r, &[4, 4], -1.0, 1.0);
        let report = grad_check(
            &[a, b],
            |g, v| {
                let y = g.matmul(v[0], v[1])?;
                let y = g.tanh(y)?;
                let y = g.reshape(y, &[1, 16])?;
                g.mean(y, 1)
            },
            1e-6,
        )
        .unwrap();
        assert_eq!(report.checked, 32);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn corrupted_backward_rule_is_caught() {
        let x = Tensor::from_f64(&[1, 3], &[0.2, -0.4, 0.9]).unwrap();
        let report = grad_check(
            &[x],
            |g, v| {
                // d/dx sin x reported as sin x instead of cos x.
                let y = g.map(v[0], f64::sin, |x, _| x.sin())?;
                g.mean(y, 1)
            },
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures.len(), 3);
    }

    #[test]
    fn kink_crossings_are_skipped() {
        let x = Tensor::from_f64(&[1, 3], &[1e-7, 0.5, -0.5]).unwrap();
        let report = grad_check(
            &[x],
            |g, v| {
                let y = g.relu(v[0])?;
                g.mean(y, 1)
            },
            1e-6,
        )
        .unwrap();
        assert_eq!(report.skipped_kinks, 1);
        assert_eq!(report.checked, 2);
        assert!(report.passed());
    }

    #[test]
    fn vector_output_is_rejected() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        assert!(grad_check(&[x], |g, v| g.tanh(v[0]), 1e-4).is_err());
    }
}
