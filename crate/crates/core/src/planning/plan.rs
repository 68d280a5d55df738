use pad_autodiff::{Graph, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::select::{sample_lambda_biased, select_top_k};
use crate::error::{PadError, Result};
use crate::models::{refine_step_unchecked, Context, EnergyModel, GradMode, InverseDynamics};
use crate::rng::{purpose, stream};

/// Candidate count, top-set size and refinement settings of one planning call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSettings {
    pub candidates: usize,
    pub top_k: usize,
    pub refine_steps: usize,
    pub use_projector: bool,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self {
            candidates: 128,
            top_k: 5,
            refine_steps: 2,
            use_projector: true,
        }
    }
}

impl PlanSettings {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.top_k > self.candidates || self.refine_steps == 0 {
            return Err(PadError::Config(format!(
                "need 1 <= K <= B and T >= 1, got K={} B={} T={}",
                self.top_k, self.candidates, self.refine_steps
            )));
        }
        Ok(())
    }
}

/// One planning problem. `call` distinguishes repeated calls sharing a seed.
#[derive(Clone, Debug)]
pub struct PlanRequest<'a> {
    /// Recent states, oldest first; only the last `P_max` are used.
    pub past: &'a [Vec<f64>],
    pub goal: &'a [f64],
    pub settings: PlanSettings,
    pub seed: u64,
    pub call: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// Refined latents `[H, d]`.
    pub z: Tensor,
    pub lambda: f64,
    /// Final energy; NaN for excluded (non-finite) candidates.
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub candidates: Vec<Candidate>,
    /// Top-K candidate indices, lowest energy first.
    pub top: Vec<usize>,
    pub chosen: usize,
}

impl Plan {
    pub fn chosen(&self) -> &Candidate {
        &self.candidates[self.chosen]
    }
}

/// The last `past_max` states, replicate-padded on the left: `[P_max, dim]`.
pub fn pad_past(states: &[Vec<f64>], past_max: usize) -> Result<Tensor> {
    let first = states.first().ok_or_else(|| PadError::Invalid("empty past window".into()))?;
    let keep = &states[states.len().saturating_sub(past_max)..];
    let mut data = Vec::with_capacity(past_max * first.len());
    for _ in keep.len()..past_max {
        data.extend_from_slice(&keep[0]);
    }
    for s in keep {
        if s.len() != first.len() {
            return Err(PadError::Invalid("past states differ in dimension".into()));
        }
        data.extend_from_slice(s);
    }
    Ok(Tensor::new(vec![past_max, first.len()], data)?)
}

/// λ and initial latents `[H, d]` of candidate `b`, from its own stream.
pub fn candidate_init(seed: u64, call: u64, b: usize, horizon: usize, latent_dim: usize) -> (f64, Tensor) {
    let mut rng = stream(seed, &[purpose::PLAN, call, b as u64]);
    let lambda = rng.random::<f64>();
    let z = (0..horizon * latent_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    (lambda, Tensor::new(vec![horizon, latent_dim], z).expect("sized"))
}

/// Encodes `[P_max, state_dim]` states into `[P_max, d]` latents.
pub fn encode_states<M: EnergyModel + ?Sized>(model: &M, states: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, false);
    let s = g.constant(states.clone());
    let z = model.encode(&mut g, &p, s)?;
    Ok(g.value(z).clone())
}

fn tile(t: &Tensor, n: usize) -> Tensor {
    let mut data = Vec::with_capacity(t.len() * n);
    for _ in 0..n {
        data.extend_from_slice(t.data());
    }
    Tensor::new([&[n][..], t.shape()].concat(), data).expect("sized")
}

fn rows_finite(t: &Tensor, rows: usize) -> Vec<bool> {
    let w = t.len() / rows;
    t.data().chunks(w).map(|c| c.iter().all(|v| v.is_finite())).collect()
}

/// Refines the candidates `z [B, H, d]` for `steps` steps with the training
/// update rule, then scores them. Returns final latents and energies; rows
/// that become non-finite are zeroed and reported with NaN energy.
pub fn refine_candidates<M: EnergyModel + ?Sized>(
    model: &M,
    z_past: &Tensor,
    goal: &[f64],
    lambdas: &[f64],
    z: Tensor,
    steps: usize,
    use_projector: bool,
) -> Result<(Tensor, Vec<f64>)> {
    let b = lambdas.len();
    let past = tile(z_past, b);
    let goals = tile(&Tensor::vector(goal.to_vec()), b);
    let mut alive = vec![true; b];
    let mut z = z;
    for _ in 0..steps {
        let mut g = Graph::new();
        let p = model.params().bind(&mut g, false);
        let ctx = Context {
            z_past: g.constant(past.clone()),
            goal: g.constant(goals.clone()),
            lambdas: lambdas.to_vec(),
        };
        let zv = g.leaf(z.clone(), true);
        let (r, dz) = refine_step_unchecked(&mut g, model, &p, zv, &ctx, use_projector, GradMode::FirstOrderOnly)?;
        let ok_e: Vec<bool> = g.value(r.energy).data().iter().map(|e| e.is_finite()).collect();
        let ok_g = rows_finite(g.value(dz), b);
        let mut next = g.value(r.z).clone();
        let ok_z = rows_finite(&next, b);
        let w = next.len() / b;
        for i in 0..b {
            alive[i] &= ok_e[i] && ok_g[i] && ok_z[i];
            if !alive[i] {
                next.data_mut()[i * w..(i + 1) * w].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        z = next;
    }
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, false);
    let ctx = Context {
        z_past: g.constant(past),
        goal: g.constant(goals),
        lambdas: lambdas.to_vec(),
    };
    let zc = g.constant(z.clone());
    let e = model.energy(&mut g, &p, zc, &ctx)?;
    let energies = g
        .value(e)
        .data()
        .iter()
        .zip(&alive)
        .map(|(e, ok)| if *ok && e.is_finite() { *e } else { f64::NAN })
        .collect();
    Ok((z, energies))
}

/// Multi-hypothesis planning: `B` noise-initialised candidates with their
/// own λ, refined `T` times, scored by final energy; one of the `K` lowest
/// is drawn with probability `∝ exp(−λ)`.
pub fn plan<M: EnergyModel + ?Sized>(model: &M, req: &PlanRequest<'_>) -> Result<Plan> {
    let s = &req.settings;
    s.validate()?;
    let (h, d) = (model.horizon(), model.latent_dim());
    let states = pad_past(req.past, model.past_len())?;
    let z_past = encode_states(model, &states)?;
    let inits: Vec<(f64, Tensor)> = (0..s.candidates).map(|b| candidate_init(req.seed, req.call, b, h, d)).collect();
    let lambdas: Vec<f64> = inits.iter().map(|c| c.0).collect();
    let mut z0 = Vec::with_capacity(s.candidates * h * d);
    for (_, z) in &inits {
        z0.extend_from_slice(z.data());
    }
    let z0 = Tensor::new(vec![s.candidates, h, d], z0)?;
    let (z, energies) = match refine_candidates(model, &z_past, req.goal, &lambdas, z0, s.refine_steps, s.use_projector) {
        Ok(out) => out,
        // a failure in the batched pass: isolate candidates one by one
        Err(_) => refine_individually(model, &z_past, req.goal, &inits, s)?,
    };
    let finite = energies.iter().filter(|e| e.is_finite()).count();
    if finite == 0 {
        return Err(PadError::Planning(format!("all {} candidates have non-finite energy", s.candidates)));
    }
    let top = select_top_k(&energies, s.top_k.min(finite))?;
    let top_lambdas: Vec<f64> = top.iter().map(|&i| lambdas[i]).collect();
    let mut rng = stream(req.seed, &[purpose::SELECT, req.call]);
    let chosen = top[sample_lambda_biased(&top_lambdas, &mut rng)];
    let w = h * d;
    let candidates = (0..s.candidates)
        .map(|i| Candidate {
            z: Tensor::new(vec![h, d], z.data()[i * w..(i + 1) * w].to_vec()).expect("sized"),
            lambda: lambdas[i],
            energy: energies[i],
        })
        .collect();
    Ok(Plan { candidates, top, chosen })
}

fn refine_individually<M: EnergyModel + ?Sized>(
    model: &M,
    z_past: &Tensor,
    goal: &[f64],
    inits: &[(f64, Tensor)],
    s: &PlanSettings,
) -> Result<(Tensor, Vec<f64>)> {
    let (h, d) = (model.horizon(), model.latent_dim());
    let mut z = Vec::with_capacity(inits.len() * h * d);
    let mut energies = Vec::with_capacity(inits.len());
    for (lambda, z0) in inits {
        let z0 = z0.reshaped(&[1, h, d])?;
        match refine_candidates(model, z_past, goal, &[*lambda], z0, s.refine_steps, s.use_projector) {
            Ok((zi, e)) => {
                z.extend_from_slice(zi.data());
                energies.push(e[0]);
            }
            Err(_) => {
                z.extend(std::iter::repeat_n(0.0, h * d));
                energies.push(f64::NAN);
            }
        }
    }
    Ok((Tensor::new(vec![inits.len(), h, d], z)?, energies))
}

/// The first `n` actions of a plan: `g(f(s), z_1)`, then `g(z_{i−1}, z_i)`.
pub fn decode_plan_actions<M: EnergyModel + ?Sized>(
    model: &M,
    inv: &InverseDynamics,
    current_state: &[f64],
    plan_z: &Tensor,
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    let (h, d) = (plan_z.shape()[0], plan_z.shape()[1]);
    if n == 0 || n > h {
        return Err(PadError::Invalid(format!("cannot decode {n} actions from a {h}-step plan")));
    }
    let s = Tensor::new(vec![1, current_state.len()], current_state.to_vec())?;
    let z_now = encode_states(model, &s)?;
    let mut from = z_now.data().to_vec();
    from.extend_from_slice(&plan_z.data()[..(n - 1) * d]);
    let to = plan_z.data()[..n * d].to_vec();
    let mut g = Graph::new();
    let p = inv.params().bind(&mut g, false);
    let a = g.constant(Tensor::new(vec![n, d], from)?);
    let b = g.constant(Tensor::new(vec![n, d], to)?);
    let out = inv.decode(&mut g, &p, a, b)?;
    let ad = inv.action_dim;
    Ok(g.value(out).data().chunks(ad).map(|c| c.to_vec()).collect())
}
