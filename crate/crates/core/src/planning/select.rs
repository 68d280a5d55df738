use rand::Rng;

use crate::error::{PadError, Result};

/// Indices of the `k` smallest finite energies, ascending, ties to the
/// lower index.
pub fn select_top_k(energies: &[f64], k: usize) -> Result<Vec<usize>> {
    let mut finite: Vec<usize> = (0..energies.len()).filter(|&i| energies[i].is_finite()).collect();
    if k == 0 || k > finite.len() {
        return Err(PadError::Planning(format!(
            "cannot select {k} of {} finite energies",
            finite.len()
        )));
    }
    finite.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]).then(a.cmp(&b)));
    finite.truncate(k);
    Ok(finite)
}

/// Probabilities `softmax(−λ)`.
pub fn lambda_probabilities(lambdas: &[f64]) -> Vec<f64> {
    let lo = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = lambdas.iter().map(|l| (lo - l).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Position in `lambdas` drawn from `Categorical(logits = −λ)`.
pub fn sample_lambda_biased(lambdas: &[f64], rng: &mut impl Rng) -> usize {
    let p = lambda_probabilities(lambdas);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}
