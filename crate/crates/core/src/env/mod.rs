//! Toy goal-reaching environments, offline data generators and the
//! evaluation harness.

mod eval;
mod generate;
mod pickplace;
mod pointmass;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};

pub use eval::{
    evaluate, histogram_svg, run_scripted, REPORT_HEADER, Controller, EpisodeRecord, EpisodeResult, RandomController, Report, ReportRow,
    ScriptedController,
};
pub use generate::{coverage, generate_dataset, generate_episodes, GeneratedEpisode, Regime, EPISODE_STEPS};
pub use pickplace::PickPlace1D;
pub use pointmass::PointMass2D;

/// Success tolerance on the task-relevant coordinates.
pub const SUCCESS_EPS: f64 = 0.05;
/// Step budget of one evaluation episode.
pub const MAX_EPISODE_STEPS: usize = 200;
/// Task families per environment.
pub const TASK_FAMILIES: usize = 5;

/// A deterministic environment whose whole state is the state vector.
pub trait Env: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// The admissible action closest to `action`.
    fn clamp_action(&self, action: &[f64]) -> Vec<f64>;
    /// Next state; out-of-range actions are clamped.
    fn step(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>>;
    /// Max-norm distance on the task-relevant coordinates is below `eps`.
    fn success(&self, state: &[f64], goal: &[f64], eps: f64) -> bool;
    /// Human-readable name of task family `family`.
    fn task_name(&self, family: usize) -> &'static str;
    /// Start and goal state for task family `family`.
    fn sample_task(&self, family: usize, rng: &mut dyn rand::RngCore) -> (Vec<f64>, Vec<f64>);
    /// Start and goal drawn from the whole state space.
    fn sample_free(&self, rng: &mut dyn rand::RngCore) -> (Vec<f64>, Vec<f64>);
    /// Noise-free scripted controller: a closed-loop action toward `goal`.
    fn expert_action(&self, state: &[f64], goal: &[f64]) -> Vec<f64>;
    /// Weaker goal-biased controller used by the broad data regime.
    fn proportional_action(&self, state: &[f64], goal: &[f64]) -> Vec<f64>;
    /// Uniformly random admissible action.
    fn random_action(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
    /// Two coordinates in `[-1, 1]` used for coverage statistics.
    fn coverage_coords(&self, state: &[f64]) -> (f64, f64);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    PointMass,
    PickPlace,
}

impl EnvKind {
    pub fn build(self) -> Box<dyn Env> {
        match self {
            EnvKind::PointMass => Box::new(PointMass2D::default()),
            EnvKind::PickPlace => Box::new(PickPlace1D::default()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointMass => "pointmass",
            EnvKind::PickPlace => "pickplace",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = PadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointmass" => Ok(EnvKind::PointMass),
            "pickplace" => Ok(EnvKind::PickPlace),
            other => Err(PadError::Config(format!("unknown environment {other:?} (pointmass, pickplace)"))),
        }
    }
}

pub(crate) fn check_dims(env: &dyn Env, state: &[f64], action: &[f64]) -> Result<()> {
    if state.len() != env.state_dim() || action.len() != env.action_dim() {
        return Err(PadError::Invalid(format!(
            "{}: state/action dims {}/{} but expected {}/{}",
            env.name(),
            state.len(),
            action.len(),
            env.state_dim(),
            env.action_dim()
        )));
    }
    if state.iter().chain(action).any(|v| !v.is_finite()) {
        return Err(PadError::NonFinite(format!("{}: non-finite state or action", env.name())));
    }
    Ok(())
}

pub(crate) fn uniform(rng: &mut dyn rand::RngCore, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Point in the box `center ± half`.
pub(crate) fn around(rng: &mut dyn rand::RngCore, center: f64, half: f64) -> f64 {
    uniform(rng, center - half, center + half)
}
