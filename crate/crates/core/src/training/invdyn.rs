use pad_autodiff::{Graph, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{PadError, Result};
use crate::models::{EnergyModel, InverseDynamics, PadConfig};
use crate::nn::{AdamW, AdamWConfig, CosineSchedule};
use crate::rng::{purpose, stream};

pub const INVDYN_KIND: &str = "invdyn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvDynConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub schedule: CosineSchedule,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for InvDynConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 128,
            schedule: CosineSchedule {
                lr_start: 1e-3,
                lr_end: 1e-4,
                total_steps: 3000,
            },
            optimizer: AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            seed: 0,
        }
    }
}

/// `(trajectory, t)` for every action-labelled transition `s_t → s_{t+1}`.
pub fn transitions(dataset: &Dataset) -> Vec<(usize, usize)> {
    dataset
        .trajectories()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len() - 1).map(move |s| (i, s)))
        .collect()
}

struct PairBatch {
    now: Tensor,
    next: Tensor,
    actions: Tensor,
}

fn gather(dataset: &Dataset, pairs: &[(usize, usize)]) -> Result<PairBatch> {
    let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
    let (mut now, mut next, mut actions) = (Vec::new(), Vec::new(), Vec::new());
    for &(i, t) in pairs {
        let traj = &dataset.trajectories()[i];
        now.extend_from_slice(traj.state(t));
        next.extend_from_slice(traj.state(t + 1));
        actions.extend_from_slice(traj.action(t).ok_or_else(|| PadError::Data("transition without action".into()))?);
    }
    let b = pairs.len();
    Ok(PairBatch {
        now: Tensor::new(vec![b, sd], now)?,
        next: Tensor::new(vec![b, sd], next)?,
        actions: Tensor::new(vec![b, ad], actions)?,
    })
}

/// Mean squared action error; gradients for `inv` only when `trainable`.
fn mse<M: EnergyModel + ?Sized>(
    g: &mut Graph,
    inv: &InverseDynamics,
    planner: &M,
    batch: &PairBatch,
    trainable: bool,
) -> Result<(pad_autodiff::Var, crate::nn::Bound)> {
    let pp = planner.params().bind(g, false);
    let pi = inv.params().bind(g, trainable);
    let now = g.constant(batch.now.clone());
    let next = g.constant(batch.next.clone());
    let z_now = planner.encode(g, &pp, now)?;
    let z_next = planner.encode(g, &pp, next)?;
    let pred = inv.decode(g, &pi, z_now, z_next)?;
    let target = g.constant(batch.actions.clone());
    let err = g.sub(pred, target)?;
    let sq = g.square(err);
    Ok((g.mean_all(sq), pi))
}

/// Mean squared action error over `pairs`.
pub fn invdyn_mse<M: EnergyModel + ?Sized>(
    inv: &InverseDynamics,
    planner: &M,
    dataset: &Dataset,
    pairs: &[(usize, usize)],
) -> Result<f64> {
    let batch = gather(dataset, pairs)?;
    let mut g = Graph::new();
    let (loss, _) = mse(&mut g, inv, planner, &batch, false)?;
    Ok(g.value(loss).item())
}

/// Regresses actions from frozen encodings of consecutive states, drawing
/// transitions uniformly from `pairs`. Returns the loss per step.
pub fn train_invdyn_on<M: EnergyModel + ?Sized>(
    inv: &mut InverseDynamics,
    planner: &M,
    dataset: &Dataset,
    pairs: &[(usize, usize)],
    config: &InvDynConfig,
) -> Result<Vec<f64>> {
    if !dataset.has_actions() {
        return Err(PadError::Data("inverse dynamics needs an action-labelled dataset".into()));
    }
    if dataset.action_dim() != inv.action_dim {
        return Err(PadError::Data(format!(
            "dataset action dim {} but model expects {}",
            dataset.action_dim(),
            inv.action_dim
        )));
    }
    if pairs.is_empty() && config.steps > 0 {
        return Err(PadError::Data("no transitions to train on".into()));
    }
    let mut opt = AdamW::new(config.optimizer, inv.params());
    let mut losses = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let mut picked = Vec::with_capacity(config.batch_size);
        for slot in 0..config.batch_size {
            let mut rng = stream(config.seed, &[purpose::INVDYN, step, slot as u64]);
            picked.push(pairs[rng.random_range(0..pairs.len())]);
        }
        let batch = gather(dataset, &picked)?;
        let mut g = Graph::new();
        let (loss, pi) = mse(&mut g, inv, planner, &batch, true)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(PadError::NonFinite(format!("inverse dynamics loss {value} at step {step}")));
        }
        let gm = g.grad(loss, pi.vars(), false)?;
        let grads: Vec<Tensor> = pi.vars().iter().map(|v| g.value(gm.get(*v).expect("requested")).clone()).collect();
        opt.step(inv.params_mut(), &grads, config.schedule.lr(step))?;
        losses.push(value);
    }
    Ok(losses)
}

pub fn train_invdyn<M: EnergyModel + ?Sized>(
    inv: &mut InverseDynamics,
    planner: &M,
    dataset: &Dataset,
    config: &InvDynConfig,
) -> Result<Vec<f64>> {
    if !dataset.has_actions() {
        return Err(PadError::Data("inverse dynamics needs an action-labelled dataset".into()));
    }
    train_invdyn_on(inv, planner, dataset, &transitions(dataset), config)
}

pub fn invdyn_checkpoint(inv: &InverseDynamics, pad: &PadConfig, config: &InvDynConfig) -> Result<Checkpoint> {
    Ok(Checkpoint {
        kind: INVDYN_KIND.into(),
        config: serde_json::to_value(pad)?,
        train: serde_json::to_value(config)?,
        step: config.steps,
        seed: config.seed,
        params: inv.params().named(),
        optimizer: None,
    })
}

pub fn restore_invdyn(ckpt: &Checkpoint) -> Result<InverseDynamics> {
    if ckpt.kind != INVDYN_KIND {
        return Err(PadError::ConfigMismatch {
            stored: format!("kind {}", ckpt.kind),
            expected: format!("kind {INVDYN_KIND}"),
        });
    }
    let config: PadConfig = serde_json::from_value(ckpt.config.clone())?;
    let mut inv = InverseDynamics::new(&config, ckpt.seed)?;
    inv.params_mut().restore(&ckpt.params)?;
    Ok(inv)
}
