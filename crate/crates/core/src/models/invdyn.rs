use pad_autodiff::{Graph, Var};

use super::config::PadConfig;
use crate::error::{PadError, Result};
use crate::nn::{Activation, Bound, Mlp, ParamStore};
use crate::rng::{purpose, stream};

/// Inverse dynamics `g_ψ(z_t, z_{t+1}) -> a_t`, kept in its own parameter
/// store so its training never touches the planner.
#[derive(Clone, Debug)]
pub struct InverseDynamics {
    pub latent_dim: usize,
    pub action_dim: usize,
    params: ParamStore,
    mlp: Mlp,
}

impl InverseDynamics {
    pub fn new(config: &PadConfig, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, &[purpose::INVDYN]);
        let mut params = ParamStore::new();
        let (d, h) = (config.latent_dim, config.invdyn_hidden);
        let mlp = Mlp::new(&mut params, "invdyn", &[2 * d, h, h, config.action_dim], Activation::Gelu, &mut rng)?;
        Ok(Self {
            latent_dim: d,
            action_dim: config.action_dim,
            params,
            mlp,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Actions `[.., action_dim]` for latent pairs `[.., d]`. Inputs are
    /// detached first, so nothing upstream receives gradient.
    pub fn decode(&self, g: &mut Graph, p: &Bound, z_t: Var, z_next: Var) -> Result<Var> {
        let (a, b) = (g.shape(z_t).to_vec(), g.shape(z_next).to_vec());
        if a != b || a.last() != Some(&self.latent_dim) {
            return Err(PadError::Invalid(format!(
                "inverse dynamics expects matching [.., {}] latents, got {a:?} and {b:?}",
                self.latent_dim
            )));
        }
        let z_t = g.stop_gradient(z_t);
        let z_next = g.stop_gradient(z_next);
        let x = g.concat(&[z_t, z_next], a.len() - 1)?;
        self.mlp.forward(g, p, x)
    }
}
