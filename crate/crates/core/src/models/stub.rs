use pad_autodiff::{Graph, Tensor, Var};

use super::traits::{Context, EnergyModel};
use crate::error::{PadError, Result};
use crate::nn::{Bound, ParamId, ParamStore};

/// Scalar coefficients of [`ScalarStub`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StubCoefficients {
    /// Encoder `f(s) = a s`.
    pub a: f64,
    /// Energy `E = ½ w z² + u z z_p + v z s_g`, with `z_p` the last past latent.
    pub w: f64,
    pub u: f64,
    pub v: f64,
    /// Projector `p(x) = m x + c`.
    pub m: f64,
    pub c: f64,
    pub eta: f64,
}

/// Closed-form stand-in for the planner networks with `d = H = 1` and
/// scalar states. Used to check training and planning against hand-derived
/// values.
#[derive(Clone, Debug)]
pub struct ScalarStub {
    params: ParamStore,
    ids: [ParamId; 7],
}

impl ScalarStub {
    pub fn new(k: StubCoefficients) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut reg = |n: &str, v: f64| params.register(n, Tensor::scalar(v));
        let ids = [
            reg("enc.a", k.a)?,
            reg("energy.w", k.w)?,
            reg("energy.u", k.u)?,
            reg("energy.v", k.v)?,
            reg("proj.m", k.m)?,
            reg("proj.c", k.c)?,
            reg("eta", k.eta)?,
        ];
        Ok(Self { params, ids })
    }

    /// Parameter ids in the order a, w, u, v, m, c, η.
    pub fn ids(&self) -> [ParamId; 7] {
        self.ids
    }
}

impl EnergyModel for ScalarStub {
    fn latent_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        1
    }

    fn past_len(&self) -> usize {
        1
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn eta(&self) -> ParamId {
        self.ids[6]
    }

    fn encode(&self, g: &mut Graph, p: &Bound, states: Var) -> Result<Var> {
        Ok(g.mul(states, p.var(self.ids[0]))?)
    }

    fn energy(&self, g: &mut Graph, p: &Bound, z: Var, ctx: &Context) -> Result<Var> {
        let shape = g.shape(z).to_vec();
        if shape.len() != 3 || shape[1] != 1 || shape[2] != 1 {
            return Err(PadError::Invalid(format!("stub expects [B, 1, 1] futures, got {shape:?}")));
        }
        let b = shape[0];
        let past = g.shape(ctx.z_past).to_vec();
        let zp = g.slice(ctx.z_past, 1, past[1] - 1, 1)?;
        let sg = g.reshape(ctx.goal, &[b, 1, 1])?;
        let [_, w, u, v, ..] = self.ids;
        let zz = g.square(z);
        let quad = g.mul(zz, p.var(w))?;
        let quad = g.scale(quad, 0.5);
        let cross = g.mul(z, zp)?;
        let cross = g.mul(cross, p.var(u))?;
        let goal = g.mul(z, sg)?;
        let goal = g.mul(goal, p.var(v))?;
        let e = g.add(quad, cross)?;
        let e = g.add(e, goal)?;
        Ok(g.reshape(e, &[b])?)
    }

    fn project(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        let y = g.mul(z, p.var(self.ids[4]))?;
        Ok(g.add(y, p.var(self.ids[5]))?)
    }
}
