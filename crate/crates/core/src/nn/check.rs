//! Finite-difference checks of parameter gradients.

use pad_autodiff::{GradCheckReport, Graph, Var};

use crate::error::Result;
use crate::nn::{Bound, ParamId, ParamStore};

/// Compares the reverse-mode gradient of `loss` with respect to parameter `id`
/// against central differences of step `step`, perturbing the stored value.
pub fn param_grad_check<F>(store: &ParamStore, id: ParamId, loss: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = store.bind(&mut g, true);
    let out = loss(&mut g, &bound)?;
    let grads = g.grad(out, &[bound.var(id)], false)?;
    let analytic = g.value(grads.get(bound.var(id)).expect("requested")).data().to_vec();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let b = s.bind(&mut g, false);
        let out = loss(&mut g, &b)?;
        Ok(g.value(out).item())
    };
    let base = store.get(id).clone();
    let mut scratch = store.clone();
    let mut numeric = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus.data_mut()[i] += step;
        scratch.set(id, plus)?;
        let fp = eval(&scratch)?;
        let mut minus = base.clone();
        minus.data_mut()[i] -= step;
        scratch.set(id, minus)?;
        let fm = eval(&scratch)?;
        numeric.push((fp - fm) / (2.0 * step));
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
