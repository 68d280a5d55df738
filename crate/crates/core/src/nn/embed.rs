use pad_autodiff::Tensor;

pub const DEFAULT_OMEGA_MIN: f64 = 1.0;
pub const DEFAULT_OMEGA_MAX: f64 = 1000.0;

/// Fixed sinusoidal embedding of a scalar in `[0, 1]`: interleaved
/// `(sin ω_k λ, cos ω_k λ)` pairs with `dim / 2` frequencies spaced
/// logarithmically between `omega_min` and `omega_max`.
pub fn sinusoidal_embed(lambda: f64, dim: usize, omega_min: f64, omega_max: f64) -> Vec<f64> {
    assert!(dim.is_multiple_of(2), "embedding dim must be even, got {dim}");
    let n = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..n {
        let frac = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
        let omega = omega_min * (omega_max / omega_min).powf(frac);
        out.push((omega * lambda).sin());
        out.push((omega * lambda).cos());
    }
    out
}

/// Embeddings of a batch of scalars, `[lambdas.len(), dim]`.
pub fn sinusoidal_batch(lambdas: &[f64], dim: usize) -> Tensor {
    let data = lambdas
        .iter()
        .flat_map(|&l| sinusoidal_embed(l, dim, DEFAULT_OMEGA_MIN, DEFAULT_OMEGA_MAX))
        .collect();
    Tensor::new(vec![lambdas.len(), dim], data).expect("embedding size")
}
