//! Layer kit and optimizer.

mod check;
mod embed;
mod layers;
mod optim;
mod params;

pub use check::param_grad_check;
pub use embed::{sinusoidal_batch, sinusoidal_embed, DEFAULT_OMEGA_MAX, DEFAULT_OMEGA_MIN};
pub use layers::{
    learned_table, mlp_forward, Activation, CausalSelfAttention, Conv1d, LayerNorm, Linear, Mlp,
    TransformerBlock, LAYER_NORM_EPS,
};
pub use optim::{clip_global_norm, AdamW, AdamWConfig, CosineSchedule};
pub use params::{Bound, ParamId, ParamStore};
