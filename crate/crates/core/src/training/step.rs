use std::time::Instant;

use pad_autodiff::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{corrupt, Batch};
use crate::error::{PadError, Result};
use crate::models::{refine_step, Context, EnergyModel, GradMode};
use crate::nn::{clip_global_norm, AdamW, AdamWConfig, CosineSchedule};

/// Optimisation settings for the planner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub schedule: CosineSchedule,
    pub optimizer: AdamWConfig,
    pub refine_steps: usize,
    pub seed: u64,
    pub use_projector: bool,
    /// Train with the energy gradient treated as a constant (ablation).
    pub first_order_only: bool,
    /// Checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub loss_delta: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 64,
            schedule: CosineSchedule::default(),
            optimizer: AdamWConfig::default(),
            refine_steps: 2,
            seed: 0,
            use_projector: true,
            first_order_only: false,
            checkpoint_every: 1000,
            loss_delta: 1.0,
            clip_norm: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.refine_steps == 0 || self.batch_size == 0 {
            return Err(PadError::Config("steps, refinement steps and batch size must be >= 1".into()));
        }
        if !(self.loss_delta > 0.0) || !(self.clip_norm > 0.0) {
            return Err(PadError::Config("loss delta and clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn grad_mode(&self) -> GradMode {
        if self.first_order_only {
            GradMode::FirstOrderOnly
        } else {
            GradMode::SecondOrder
        }
    }
}

/// One line of the metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub step_losses: Vec<f64>,
    pub energy_init: f64,
    pub energy_final: f64,
    pub eta: f64,
    pub lr: f64,
    pub ms_per_step: f64,
}

impl MetricsRow {
    pub fn header(refine_steps: usize) -> String {
        let losses: Vec<String> = (1..=refine_steps).map(|t| format!("loss_t{t}")).collect();
        format!("step,loss,{},energy_init,energy_final,eta,lr,wallclock_ms_per_step", losses.join(","))
    }

    pub fn to_csv(&self) -> String {
        let losses: Vec<String> = self.step_losses.iter().map(|v| format!("{v:e}")).collect();
        format!(
            "{},{:e},{},{:e},{:e},{:e},{:e},{:.3}",
            self.step,
            self.loss,
            losses.join(","),
            self.energy_init,
            self.energy_final,
            self.eta,
            self.lr,
            self.ms_per_step
        )
    }
}

/// Loss, its parts and parameter gradients for one batch.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    pub step_losses: Vec<f64>,
    /// Summed over refinement steps, averaged over each row's elements.
    pub per_sample: Vec<f64>,
    pub energy_init: f64,
    pub energy_final: f64,
    /// Aligned with the model's parameter registration order.
    pub grads: Vec<Tensor>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// The denoising objective: encode, corrupt the detached clean future,
/// refine `refine_steps` times with a detached iterate between steps, and
/// sum the per-step smooth-L1 losses.
pub fn loss_and_grads<M: EnergyModel + ?Sized>(
    model: &M,
    batch: &Batch,
    refine_steps: usize,
    use_projector: bool,
    mode: GradMode,
    delta: f64,
) -> Result<LossEval> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, true);
    let s_past = g.constant(batch.s_past.clone());
    let z_past = model.encode(&mut g, &p, s_past)?;
    let s_future = g.constant(batch.s_future.clone());
    let z_clean = model.encode(&mut g, &p, s_future)?;
    let z_clean = g.stop_gradient(z_clean);

    let clean = g.value(z_clean).clone();
    if batch.noise.shape() != clean.shape() {
        return Err(PadError::Invalid(format!(
            "noise {:?} does not match latents {:?}",
            batch.noise.shape(),
            clean.shape()
        )));
    }
    let b = batch.len();
    let row = clean.len() / b;
    let mut z0 = Vec::with_capacity(clean.len());
    for i in 0..b {
        let zc = Tensor::vector(clean.data()[i * row..(i + 1) * row].to_vec());
        let eps = Tensor::vector(batch.noise.data()[i * row..(i + 1) * row].to_vec());
        z0.extend_from_slice(corrupt(&zc, batch.betas[i], &eps)?.data());
    }
    let mut z = g.constant(Tensor::new(clean.shape().to_vec(), z0)?);

    let ctx = Context {
        z_past,
        goal: g.constant(batch.goals.clone()),
        lambdas: batch.lambdas.clone(),
    };
    let mut terms = Vec::with_capacity(refine_steps);
    let mut step_losses = Vec::with_capacity(refine_steps);
    let mut per_sample = vec![0.0; b];
    let mut energy_init = 0.0;
    for t in 0..refine_steps {
        let r = refine_step(&mut g, model, &p, z, &ctx, use_projector, mode)?;
        if t == 0 {
            energy_init = mean(g.value(r.energy).data());
        }
        let l = g.smooth_l1(r.z, z_clean, delta)?;
        for (i, chunk) in g.value(l).data().chunks(row).enumerate() {
            per_sample[i] += mean(chunk);
        }
        let l = g.mean_all(l);
        step_losses.push(g.value(l).item());
        terms.push(l);
        z = g.stop_gradient(r.z);
    }
    let energy_final = g.no_grad(|g| model.energy(g, &p, z, &ctx))?;
    let energy_final = mean(g.value(energy_final).data());

    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    let loss = g.value(total).item();
    if !loss.is_finite() {
        return Err(PadError::NonFinite(format!(
            "loss {loss}; step losses {step_losses:?}; mean energy initial {energy_init}, final {energy_final}"
        )));
    }
    let gm = g.grad(total, p.vars(), false)?;
    let grads: Vec<Tensor> = p.vars().iter().map(|v| g.value(gm.get(*v).expect("requested")).clone()).collect();
    Ok(LossEval {
        loss,
        step_losses,
        per_sample,
        energy_init,
        energy_final,
        grads,
    })
}

/// One optimisation step at (0-based) index `step`. Parameters and the
/// optimizer are untouched when the loss or gradients are non-finite.
pub fn train_step<M: EnergyModel + ?Sized>(
    model: &mut M,
    optimizer: &mut AdamW,
    batch: &Batch,
    config: &TrainConfig,
    step: u64,
) -> Result<(MetricsRow, LossEval)> {
    let start = Instant::now();
    let eval = loss_and_grads(
        &*model,
        batch,
        config.refine_steps,
        config.use_projector,
        config.grad_mode(),
        config.loss_delta,
    )?;
    let mut grads = eval.grads.clone();
    let norm = clip_global_norm(&mut grads, config.clip_norm);
    if !norm.is_finite() {
        return Err(PadError::NonFinite(format!(
            "gradient norm {norm} at loss {}; mean energy initial {}, final {}",
            eval.loss, eval.energy_init, eval.energy_final
        )));
    }
    let lr = config.schedule.lr(step);
    optimizer.step(model.params_mut(), &grads, lr)?;
    let eta_id = model.eta();
    let eta = model.params().get(eta_id).item().max(0.0);
    model.params_mut().set(eta_id, Tensor::scalar(eta))?;
    let row = MetricsRow {
        step: step + 1,
        loss: eval.loss,
        step_losses: eval.step_losses.clone(),
        energy_init: eval.energy_init,
        energy_final: eval.energy_final,
        eta,
        lr,
        ms_per_step: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((row, eval))
}
