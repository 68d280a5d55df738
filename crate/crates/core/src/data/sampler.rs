use std::f64::consts::FRAC_PI_2;

use pad_autodiff::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

use super::dataset::{Dataset, Trajectory};
use crate::error::{PadError, Result};
use crate::models::PadConfig;
use crate::rng::{purpose, stream};

/// Inverse CDF of the density `(2/π)(1 − r²)^{-1/2}` on `[0, 1]`.
pub fn arccos_from_uniform(u: f64) -> f64 {
    (FRAC_PI_2 * u).sin()
}

pub fn sample_arccos(rng: &mut impl Rng) -> f64 {
    arccos_from_uniform(rng.random::<f64>())
}

/// `1 + round(r (P_max − 1))`, ties to even.
pub fn past_len_from(r: f64, past_max: usize) -> usize {
    1 + (r * (past_max - 1) as f64).round_ties_even() as usize
}

/// Smallest goal offset: `min(P_max, H − 1)`, at least 1.
pub fn min_goal_offset(past_max: usize, horizon: usize) -> usize {
    past_max.min(horizon.saturating_sub(1)).max(1)
}

/// 1-indexed goal offset `round(G_min + λ (H − G_min))` into the future window.
pub fn goal_offset(lambda: f64, past_max: usize, horizon: usize) -> usize {
    let g_min = min_goal_offset(past_max, horizon) as f64;
    (g_min + lambda * (horizon as f64 - g_min)).round_ties_even() as usize
}

/// A relabelled training window.
#[derive(Clone, Debug, PartialEq)]
pub struct HindsightSample {
    /// `[P_max, state_dim]`, replicate-padded on the left.
    pub s_past: Tensor,
    /// `[H, state_dim]`.
    pub s_future: Tensor,
    pub goal: Vec<f64>,
    pub lambda: f64,
    pub past_len: usize,
    /// 1-indexed offset of the goal within the future window.
    pub goal_offset: usize,
    /// Index of the first real past state in the trajectory.
    pub start: usize,
}

/// Builds the window with `past_len` real past states starting at `start`,
/// followed by `horizon` future states.
pub fn hindsight_window(
    traj: &Trajectory,
    past_max: usize,
    horizon: usize,
    past_len: usize,
    start: usize,
    lambda: f64,
) -> Result<HindsightSample> {
    if !(1..=past_max).contains(&past_len) {
        return Err(PadError::Invalid(format!("past length {past_len} outside [1, {past_max}]")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(PadError::Invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    if start + past_len + horizon > traj.len() {
        return Err(PadError::Data(format!(
            "window {start}+{past_len}+{horizon} exceeds trajectory length {}",
            traj.len()
        )));
    }
    let sd = traj.state_dim();
    let mut past = Vec::with_capacity(past_max * sd);
    for _ in 0..past_max - past_len {
        past.extend_from_slice(traj.state(start));
    }
    for t in start..start + past_len {
        past.extend_from_slice(traj.state(t));
    }
    let first = start + past_len;
    let mut future = Vec::with_capacity(horizon * sd);
    for t in first..first + horizon {
        future.extend_from_slice(traj.state(t));
    }
    let g = goal_offset(lambda, past_max, horizon);
    Ok(HindsightSample {
        s_past: Tensor::new(vec![past_max, sd], past)?,
        s_future: Tensor::new(vec![horizon, sd], future)?,
        goal: traj.state(first + g - 1).to_vec(),
        lambda,
        past_len,
        goal_offset: g,
        start,
    })
}

/// Draws `r`, the window start and `λ` (in that order) and relabels.
pub fn hindsight_sample(traj: &Trajectory, past_max: usize, horizon: usize, rng: &mut impl Rng) -> Result<HindsightSample> {
    if traj.len() < past_max + horizon {
        return Err(PadError::Data(format!(
            "trajectory of length {} shorter than P_max + H = {}",
            traj.len(),
            past_max + horizon
        )));
    }
    let past_len = past_len_from(sample_arccos(rng), past_max);
    let start = rng.random_range(0..=traj.len() - past_len - horizon);
    let lambda = rng.random::<f64>();
    hindsight_window(traj, past_max, horizon, past_len, start, lambda)
}

/// `√β z + √(1 − β) ε`, elementwise.
pub fn corrupt(z_clean: &Tensor, beta: f64, eps: &Tensor) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(PadError::Invalid(format!("beta {beta} outside [0, 1]")));
    }
    if z_clean.shape() != eps.shape() {
        return Err(PadError::Invalid(format!(
            "corruption shapes differ: {:?} vs {:?}",
            z_clean.shape(),
            eps.shape()
        )));
    }
    let (a, b) = (beta.sqrt(), (1.0 - beta).sqrt());
    let data = z_clean.data().iter().zip(eps.data()).map(|(z, e)| a * z + b * e).collect();
    Ok(Tensor::new(z_clean.shape().to_vec(), data)?)
}

/// Stacked hindsight samples plus one corruption draw per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, P_max, state_dim]`.
    pub s_past: Tensor,
    /// `[B, H, state_dim]`.
    pub s_future: Tensor,
    /// `[B, state_dim]`.
    pub goals: Tensor,
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `[B, H, d]` standard normal draws.
    pub noise: Tensor,
    /// Dataset index of each row's trajectory.
    pub trajectories: Vec<usize>,
    pub samples: Vec<HindsightSample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Stacks samples with their `(β, ε)` draws; `ε` rows are `[H, d]`.
    pub fn stack(samples: Vec<HindsightSample>, draws: Vec<(f64, Tensor)>, trajectories: Vec<usize>) -> Result<Self> {
        let first = samples.first().ok_or_else(|| PadError::Invalid("empty batch".into()))?;
        if draws.len() != samples.len() || trajectories.len() != samples.len() {
            return Err(PadError::Invalid("batch parts differ in length".into()));
        }
        let b = samples.len();
        let (p, sd) = (first.s_past.shape()[0], first.s_past.shape()[1]);
        let h = first.s_future.shape()[0];
        let nd = draws[0].1.shape().to_vec();
        let cat = |parts: Vec<&[f64]>| parts.concat();
        let s_past = Tensor::new(vec![b, p, sd], cat(samples.iter().map(|s| s.s_past.data()).collect()))?;
        let s_future = Tensor::new(vec![b, h, sd], cat(samples.iter().map(|s| s.s_future.data()).collect()))?;
        let goals = Tensor::new(vec![b, sd], cat(samples.iter().map(|s| &s.goal[..]).collect()))?;
        let noise = Tensor::new([&[b][..], &nd].concat(), cat(draws.iter().map(|d| d.1.data()).collect()))?;
        Ok(Self {
            s_past,
            s_future,
            goals,
            lambdas: samples.iter().map(|s| s.lambda).collect(),
            betas: draws.iter().map(|d| d.0).collect(),
            noise,
            trajectories,
            samples,
        })
    }
}

/// Indices of trajectories long enough for a full window.
pub fn trainable(dataset: &Dataset, past_max: usize, horizon: usize) -> Vec<usize> {
    (0..dataset.len()).filter(|&i| dataset.trajectories()[i].len() >= past_max + horizon).collect()
}

/// Batch number `step`: each row draws from its own `(seed, step, row)`
/// stream, so batches do not depend on what was drawn before.
pub fn make_batch(dataset: &Dataset, cfg: &PadConfig, batch_size: usize, seed: u64, step: u64) -> Result<Batch> {
    let pool = trainable(dataset, cfg.past_len, cfg.horizon);
    if pool.is_empty() {
        return Err(PadError::Data(format!(
            "no trajectory reaches length P_max + H = {}",
            cfg.past_len + cfg.horizon
        )));
    }
    if batch_size == 0 {
        return Err(PadError::Invalid("batch size must be positive".into()));
    }
    let mut samples = Vec::with_capacity(batch_size);
    let mut draws = Vec::with_capacity(batch_size);
    let mut picked = Vec::with_capacity(batch_size);
    for slot in 0..batch_size {
        let mut rng = stream(seed, &[purpose::BATCH, step, slot as u64]);
        let idx = pool[rng.random_range(0..pool.len())];
        samples.push(hindsight_sample(&dataset.trajectories()[idx], cfg.past_len, cfg.horizon, &mut rng)?);
        let beta = rng.random::<f64>();
        let n = cfg.horizon * cfg.latent_dim;
        let eps = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        draws.push((beta, Tensor::new(vec![cfg.horizon, cfg.latent_dim], eps)?));
        picked.push(idx);
    }
    Batch::stack(samples, draws, picked)
}

/// Endless sequence of batches `start_step, start_step + 1, ...`.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    config: PadConfig,
    batch_size: usize,
    seed: u64,
    step: u64,
}

impl<'a> BatchIter<'a> {
    pub fn new(dataset: &'a Dataset, config: &PadConfig, batch_size: usize, seed: u64, start_step: u64) -> Result<Self> {
        if trainable(dataset, config.past_len, config.horizon).is_empty() {
            return Err(PadError::Data("dataset has no trainable trajectory".into()));
        }
        Ok(Self {
            dataset,
            config: config.clone(),
            batch_size,
            seed,
            step: start_step,
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let b = make_batch(self.dataset, &self.config, self.batch_size, self.seed, self.step);
        self.step += 1;
        Some(b)
    }
}
