use pad_autodiff::{Graph, Var};

use crate::error::Result;
use crate::nn::{Bound, ParamId, ParamStore};

/// Conditioning for the energy: encoded past `[B, P, d]`, goal states
/// `[B, state_dim]` and one time-to-reach value per batch row.
#[derive(Clone, Debug)]
pub struct Context {
    pub z_past: Var,
    pub goal: Var,
    pub lambdas: Vec<f64>,
}

/// The planner networks as seen by training and planning: encoder, energy,
/// projector and the learnable step size, all stored in one registry.
pub trait EnergyModel {
    fn latent_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Number of past states the energy conditions on.
    fn past_len(&self) -> usize;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Scalar step-size parameter `η`.
    fn eta(&self) -> ParamId;
    /// Encodes states `[.., state_dim]` independently into `[.., d]`.
    fn encode(&self, g: &mut Graph, p: &Bound, states: Var) -> Result<Var>;
    /// Per-row energies `[B]` of futures `[B, H, d]`.
    fn energy(&self, g: &mut Graph, p: &Bound, z_future: Var, ctx: &Context) -> Result<Var>;
    /// Position-wise projection of latents `[.., d]`.
    fn project(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var>;
}
