use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};

/// Network and planning-horizon sizes shared by the encoder, energy,
/// projector and inverse-dynamics networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PadConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Latent dimension `d`.
    pub latent_dim: usize,
    /// Maximum past context `P_max`.
    pub past_len: usize,
    /// Planning horizon `H`.
    pub horizon: usize,
    pub encoder_hidden: usize,
    /// Channels of the two strided convolutions; the second equals `width`.
    pub conv_channels: [usize; 2],
    /// Transformer model width.
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Refinement steps `T`.
    pub refine_steps: usize,
    pub eta_init: f64,
    pub projector_hidden: usize,
    /// Sinusoidal λ-embedding size (twice the number of frequencies).
    pub lambda_embed_dim: usize,
    pub invdyn_hidden: usize,
}

impl PadConfig {
    /// Desk-scale defaults for an environment with the given dimensions.
    pub fn desk(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            latent_dim: 32,
            past_len: 8,
            horizon: 32,
            encoder_hidden: 128,
            conv_channels: [64, 96],
            width: 96,
            blocks: 3,
            heads: 4,
            refine_steps: 2,
            eta_init: 2.5,
            projector_hidden: 128,
            lambda_embed_dim: 64,
            invdyn_hidden: 128,
        }
    }

    /// A very small configuration for tests.
    pub fn tiny(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            latent_dim: 4,
            past_len: 4,
            horizon: 8,
            encoder_hidden: 8,
            conv_channels: [8, 8],
            width: 8,
            blocks: 1,
            heads: 2,
            refine_steps: 2,
            eta_init: 2.5,
            projector_hidden: 8,
            lambda_embed_dim: 8,
            invdyn_hidden: 16,
        }
    }

    /// Number of transformer tokens: convolution outputs plus goal and λ tokens.
    pub fn tokens(&self) -> usize {
        (self.past_len + self.horizon) / 4 + 2
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PadError::Config(m));
        if self.horizon == 0 || !self.horizon.is_multiple_of(4) {
            return fail(format!("horizon {} must be a positive multiple of 4", self.horizon));
        }
        if self.past_len == 0 || !(self.past_len + self.horizon).is_multiple_of(4) {
            return fail(format!(
                "past length {} must be >= 1 and make past + horizon a multiple of 4",
                self.past_len
            ));
        }
        if self.refine_steps == 0 {
            return fail("refinement steps must be >= 1".into());
        }
        if self.latent_dim == 0 || self.state_dim == 0 || self.action_dim == 0 {
            return fail("latent, state and action dims must be positive".into());
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return fail(format!("width {} not divisible by {} heads", self.width, self.heads));
        }
        if self.conv_channels[1] != self.width {
            return fail(format!(
                "second conv channel count {} must equal transformer width {}",
                self.conv_channels[1], self.width
            ));
        }
        if self.lambda_embed_dim == 0 || !self.lambda_embed_dim.is_multiple_of(2) {
            return fail(format!("lambda embedding dim {} must be even", self.lambda_embed_dim));
        }
        if !(self.eta_init >= 0.0) {
            return fail(format!("eta_init {} must be >= 0", self.eta_init));
        }
        Ok(())
    }
}
