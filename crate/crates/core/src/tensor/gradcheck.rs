//! Finite-difference verification of reverse-mode gradients.

use super::{Graph, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Entries whose gradient magnitude is below this floor are compared on an
/// absolute scale: `|a - n| / max(|a|, |n|, floor)`.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares `d build(inputs) / d inputs` from one backward pass against
/// central differences on every input element.
///
/// `build` receives a fresh graph and the input variables and must return a
/// scalar node. It must be deterministic.
pub fn grad_check<F>(inputs: &[Tensor<f64>], build: F, tolerance: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| g.grad(*v)).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        tolerance,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let orig = t.data()[j];
            work[ti].data_mut()[j] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[ti].data_mut()[j] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[ti].data()[j].as_f64();
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_correct_gradient() {
        let x = Tensor::from_f64(&[3], &[0.3, -1.2, 2.0]).unwrap();
        let y = Tensor::from_f64(&[3], &[1.0, 0.5, -0.5]).unwrap();
        let report = grad_check(&[x], |g, v| g.mse(v[0], &y), 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 3);
    }
}
