//! Central finite-difference gradient checking.

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Per-element comparison of the reverse-mode gradient against central
/// differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub abs_error: Vec<f64>,
    /// `|analytic − numeric| / max(|analytic|, |numeric|, 1)`.
    pub rel_error: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_abs_error(&self) -> f64 {
        self.abs_error.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.rel_error.iter().cloned().fold(0.0, f64::max)
    }
}

/// Compares `∂f/∂x` from [`Graph::grad`] with `(f(x+he) − f(x−he)) / 2h` per
/// coordinate. `f` builds a scalar on a fresh graph from a leaf holding `x`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(AutodiffError::InvalidArgument {
            op: "finite_difference_check",
            detail: format!("step must be positive, got {step}"),
        });
    }
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone(), true);
    let out = f(&mut g, leaf)?;
    let grads = g.grad(out, &[leaf], false)?;
    let gv = grads.get(leaf).expect("requested gradient is present");
    let analytic = g.value(gv).data().to_vec();

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.leaf(t, true);
        let out = f(&mut g, leaf)?;
        Ok(g.value(out).item())
    };

    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }

    let abs_error: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).collect();
    let rel_error = analytic
        .iter()
        .zip(&numeric)
        .zip(&abs_error)
        .map(|((a, n), e)| e / a.abs().max(n.abs()).max(1.0))
        .collect();
    Ok(GradCheckReport {
        analytic,
        numeric,
        abs_error,
        rel_error,
    })
}
