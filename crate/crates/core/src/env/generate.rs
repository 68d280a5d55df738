use std::str::FromStr;

use pad_autodiff::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Env, SUCCESS_EPS, TASK_FAMILIES};
use crate::data::{Dataset, DatasetMeta, Trajectory};
use crate::error::{PadError, Result};
use crate::rng::{purpose, stream};

/// Transitions recorded per generated episode.
pub const EPISODE_STEPS: usize = 100;
const AR_RHO: f64 = 0.9;
const AR_SIGMA: f64 = 0.005;
const NOISY_SIGMA: (f64, f64) = (0.01, 0.05);
const COVERAGE_CELLS: usize = 20;

/// Behaviour policy family of an offline dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Scripted controller on the task families with small correlated noise.
    Expert,
    /// Weak goal-biased controller on random goals with large white noise.
    Noisy,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Expert => "expert",
            Regime::Noisy => "noisy",
        }
    }
}

impl FromStr for Regime {
    type Err = PadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(Regime::Expert),
            "noisy" => Ok(Regime::Noisy),
            other => Err(PadError::Config(format!("unknown regime {other:?} (expert, noisy)"))),
        }
    }
}

/// One behaviour-policy rollout with the noise that perturbed it.
#[derive(Clone, Debug)]
pub struct GeneratedEpisode {
    pub trajectory: Trajectory,
    /// Per-step additive action noise.
    pub noise: Vec<Vec<f64>>,
    pub goal: Vec<f64>,
    pub success: bool,
}

fn rollout(env: &dyn Env, regime: Regime, episode: usize, seed: u64) -> Result<GeneratedEpisode> {
    let mut rng = stream(seed, &[purpose::DATASET, episode as u64]);
    let (start, goal) = match regime {
        Regime::Expert => env.sample_task(episode % TASK_FAMILIES, &mut rng),
        Regime::Noisy => env.sample_free(&mut rng),
    };
    let ad = env.action_dim();
    // the expert's grip channel (pick-place) stays noise-free
    let noisy_dims = match (regime, env.name()) {
        (Regime::Expert, "pickplace") => 1,
        _ => ad,
    };
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sigma = match regime {
        Regime::Expert => AR_SIGMA,
        Regime::Noisy => rng.random_range(NOISY_SIGMA.0..NOISY_SIGMA.1),
    };
    let mut n: Vec<f64> = (0..ad)
        .map(|i| match regime {
            // stationary start of the AR(1) process
            Regime::Expert if i < noisy_dims => std_normal.sample(&mut rng) * sigma / (1.0 - AR_RHO * AR_RHO).sqrt(),
            _ => 0.0,
        })
        .collect();
    let mut state = start.clone();
    let mut states = start.clone();
    let (mut actions, mut noise) = (Vec::new(), Vec::new());
    for t in 0..EPISODE_STEPS {
        let nominal = match regime {
            Regime::Expert => env.expert_action(&state, &goal),
            Regime::Noisy => env.proportional_action(&state, &goal),
        };
        for v in n.iter_mut().take(noisy_dims) {
            let xi = std_normal.sample(&mut rng);
            *v = match regime {
                Regime::Expert if t == 0 => *v,
                Regime::Expert => AR_RHO * *v + sigma * xi,
                Regime::Noisy => sigma * xi,
            };
        }
        let a: Vec<f64> = nominal.iter().zip(&n).map(|(a, e)| a + e).collect();
        let next = env.step(&state, &a)?;
        // record the action the environment actually applied
        actions.extend_from_slice(&env.clamp_action(&a));
        noise.push(n.clone());
        states.extend_from_slice(&next);
        state = next;
    }
    let sd = env.state_dim();
    // an episode succeeds if it ends at the goal
    let success = env.success(&state, &goal, SUCCESS_EPS);
    let trajectory = Trajectory::new(
        Tensor::new(vec![EPISODE_STEPS + 1, sd], states)?,
        Some(Tensor::new(vec![EPISODE_STEPS, ad], actions)?),
    )?;
    Ok(GeneratedEpisode {
        trajectory,
        noise,
        goal,
        success,
    })
}

pub fn generate_episodes(env: &dyn Env, regime: Regime, episodes: usize, seed: u64) -> Result<Vec<GeneratedEpisode>> {
    if episodes == 0 {
        return Err(PadError::Config("need at least one episode".into()));
    }
    (0..episodes).map(|e| rollout(env, regime, e, seed)).collect()
}

/// Dataset, provenance and fraction of successful episodes.
pub fn generate_dataset(env: &dyn Env, regime: Regime, episodes: usize, seed: u64) -> Result<(Dataset, DatasetMeta, f64)> {
    let eps = generate_episodes(env, regime, episodes, seed)?;
    let successes = eps.iter().filter(|e| e.success).count();
    let dataset = Dataset::new(
        env.state_dim(),
        env.action_dim(),
        eps.into_iter().map(|e| e.trajectory).collect(),
    )?;
    let meta = DatasetMeta {
        generator: regime.name().into(),
        seed,
        environment: env.name().into(),
    };
    Ok((dataset, meta, successes as f64 / episodes as f64))
}

/// Occupied cells of a 20×20 grid over `[-1, 1]²` of the coverage coordinates.
pub fn coverage(env: &dyn Env, dataset: &Dataset) -> usize {
    let mut seen = vec![false; COVERAGE_CELLS * COVERAGE_CELLS];
    let cell = |v: f64| (((v + 1.0) / 2.0 * COVERAGE_CELLS as f64) as usize).min(COVERAGE_CELLS - 1);
    for t in dataset.trajectories() {
        for i in 0..t.len() {
            let (x, y) = env.coverage_coords(t.state(i));
            seen[cell(x) * COVERAGE_CELLS + cell(y)] = true;
        }
    }
    seen.iter().filter(|s| **s).count()
}
