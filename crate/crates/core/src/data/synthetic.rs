use pad_autodiff::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

use super::dataset::{Dataset, Trajectory};
use crate::error::Result;
use crate::rng::{purpose, stream};

/// Trajectories of `s' = A s + 0.1 a` with `A` a slow rotation in
/// consecutive coordinate pairs and smooth random actions.
/// `length` must be at least 1.
pub fn linear_dynamics(trajectories: usize, length: usize, state_dim: usize, seed: u64) -> Result<Dataset> {
    let (c, s) = (0.1f64.cos() * 0.98, 0.1f64.sin() * 0.98);
    let mut out = Vec::with_capacity(trajectories);
    for i in 0..trajectories {
        let mut rng = stream(seed, &[purpose::DATASET, i as u64]);
        let mut x: Vec<f64> = (0..state_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; state_dim];
        let mut states = x.clone();
        let mut actions = Vec::new();
        for _ in 1..length {
            for v in a.iter_mut() {
                *v = 0.8 * *v + 0.2 * rng.sample::<f64, _>(StandardNormal);
            }
            let mut next = x.clone();
            for k in (0..state_dim).step_by(2) {
                if k + 1 < state_dim {
                    next[k] = c * x[k] - s * x[k + 1];
                    next[k + 1] = s * x[k] + c * x[k + 1];
                } else {
                    next[k] = 0.98 * x[k];
                }
            }
            for k in 0..state_dim {
                next[k] += 0.1 * a[k];
            }
            actions.extend_from_slice(&a);
            states.extend_from_slice(&next);
            x = next;
        }
        let states = Tensor::new(vec![length, state_dim], states)?;
        let actions = Some(Tensor::new(vec![length - 1, state_dim], actions)?);
        out.push(Trajectory::new(states, actions)?);
    }
    Dataset::new(state_dim, state_dim, out)
}
