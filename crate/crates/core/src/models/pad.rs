use pad_autodiff::{Graph, Tensor, Var};

use super::config::PadConfig;
use super::traits::{Context, EnergyModel};
use crate::error::{PadError, Result};
use crate::nn::{
    learned_table, sinusoidal_batch, Activation, Bound, Conv1d, LayerNorm, Linear, Mlp, ParamId, ParamStore,
    TransformerBlock,
};
use crate::rng::{purpose, stream};

const POSITION_STD: f64 = 0.02;
/// Small enough that encoded latents have unit variance to within 1e-6.
pub const ENCODER_LN_EPS: f64 = 1e-9;

/// Encoder, conditional energy, projector and step size of the planner.
#[derive(Clone, Debug)]
pub struct PadModel {
    pub config: PadConfig,
    params: ParamStore,
    encoder: Mlp,
    conv1: Conv1d,
    conv2: Conv1d,
    goal_mlp: Mlp,
    lambda_mlp: Mlp,
    positions: ParamId,
    blocks: Vec<TransformerBlock>,
    final_ln: LayerNorm,
    head: Linear,
    projector: Mlp,
    eta: ParamId,
}

impl PadModel {
    pub fn new(config: PadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = stream(seed, &[purpose::INIT]);
        let mut s = ParamStore::new();
        let (d, w) = (c.latent_dim, c.width);
        let encoder = Mlp::new(&mut s, "encoder", &[c.state_dim, c.encoder_hidden, d], Activation::Gelu, &mut rng)?;
        let conv1 = Conv1d::new(&mut s, "energy.conv1", d, c.conv_channels[0], 3, 2, 1, &mut rng)?;
        let conv2 = Conv1d::new(&mut s, "energy.conv2", c.conv_channels[0], c.conv_channels[1], 3, 2, 1, &mut rng)?;
        let goal_mlp = Mlp::new(&mut s, "energy.goal", &[c.state_dim, w, w, w], Activation::Gelu, &mut rng)?;
        let lambda_mlp = Mlp::new(&mut s, "energy.lambda", &[c.lambda_embed_dim, w, w, w], Activation::Gelu, &mut rng)?;
        let positions = learned_table(&mut s, "energy.pos", &[c.tokens(), w], POSITION_STD, &mut rng)?;
        let out_gain = 1.0 / (2.0 * c.blocks.max(1) as f64).sqrt();
        let blocks = (0..c.blocks)
            .map(|i| TransformerBlock::new(&mut s, &format!("energy.block{i}"), w, c.heads, out_gain, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let final_ln = LayerNorm::new(&mut s, "energy.ln_f", w)?;
        let head = Linear::new(&mut s, "energy.head", w, 1, 1.0, &mut rng)?;
        let projector = Mlp::new(&mut s, "projector", &[d, c.projector_hidden, d], Activation::Gelu, &mut rng)?;
        let eta = s.register("eta", Tensor::scalar(c.eta_init))?;
        Ok(Self {
            config,
            params: s,
            encoder,
            conv1,
            conv2,
            goal_mlp,
            lambda_mlp,
            positions,
            blocks,
            final_ln,
            head,
            projector,
            eta,
        })
    }

    /// Parameters of the projector's output layer (weight, bias).
    pub fn projector_output(&self) -> (ParamId, ParamId) {
        let last = self.projector.layers.last().expect("two layers");
        (last.weight, last.bias)
    }

    /// Ids of the encoder's parameters.
    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.encoder.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Latent tokens, goal token and λ token fed to the transformer, `[B, n, width]`.
    fn tokens(&self, g: &mut Graph, p: &Bound, z_future: Var, ctx: &Context) -> Result<Var> {
        let c = &self.config;
        let fs = g.shape(z_future).to_vec();
        let ps = g.shape(ctx.z_past).to_vec();
        if fs.len() != 3 || fs[1] != c.horizon || fs[2] != c.latent_dim {
            return Err(PadError::Invalid(format!(
                "future latents must be [B, {}, {}], got {fs:?}",
                c.horizon, c.latent_dim
            )));
        }
        let b = fs[0];
        if ps != [b, c.past_len, c.latent_dim] {
            return Err(PadError::Invalid(format!(
                "past latents must be [{b}, {}, {}], got {ps:?}",
                c.past_len, c.latent_dim
            )));
        }
        if g.shape(ctx.goal) != [b, c.state_dim] {
            return Err(PadError::Invalid(format!(
                "goal must be [{b}, {}], got {:?}",
                c.state_dim,
                g.shape(ctx.goal)
            )));
        }
        if ctx.lambdas.len() != b || ctx.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(PadError::Invalid(format!("need {b} lambdas in [0, 1], got {:?}", ctx.lambdas)));
        }
        let seq = g.concat(&[ctx.z_past, z_future], 1)?;
        let h = self.conv1.forward(g, p, seq)?;
        let h = g.gelu(h);
        let h = self.conv2.forward(g, p, h)?;
        let goal = self.goal_mlp.forward(g, p, ctx.goal)?;
        let goal = g.reshape(goal, &[b, 1, c.width])?;
        let emb = g.constant(sinusoidal_batch(&ctx.lambdas, c.lambda_embed_dim));
        let lam = self.lambda_mlp.forward(g, p, emb)?;
        let lam = g.reshape(lam, &[b, 1, c.width])?;
        let tokens = g.concat(&[h, goal, lam], 1)?;
        Ok(g.add(tokens, p.var(self.positions))?)
    }
}

impl EnergyModel for PadModel {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn past_len(&self) -> usize {
        self.config.past_len
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn eta(&self) -> ParamId {
        self.eta
    }

    fn encode(&self, g: &mut Graph, p: &Bound, states: Var) -> Result<Var> {
        let h = self.encoder.forward(g, p, states)?;
        Ok(g.layer_norm(h, ENCODER_LN_EPS)?)
    }

    fn energy(&self, g: &mut Graph, p: &Bound, z_future: Var, ctx: &Context) -> Result<Var> {
        let mut h = self.tokens(g, p, z_future, ctx)?;
        for block in &self.blocks {
            h = block.forward(g, p, h)?;
        }
        let h = self.final_ln.forward(g, p, h)?;
        let (b, n, w) = (g.shape(h)[0], g.shape(h)[1], self.config.width);
        let last = g.slice(h, 1, n - 1, 1)?;
        let last = g.reshape(last, &[b, w])?;
        let e = self.head.forward(g, p, last)?;
        Ok(g.reshape(e, &[b])?)
    }

    fn project(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        self.projector.forward(g, p, z)
    }
}
