use pad_autodiff::{Graph, Var};

use super::traits::{Context, EnergyModel};
use crate::error::{PadError, Result};
use crate::nn::Bound;

/// How the energy gradient inside a refinement step is differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    /// `∇_z E` is itself a graph node, so parameters receive second-order terms.
    SecondOrder,
    /// `∇_z E` is a constant; only η and the projector see the loss.
    FirstOrderOnly,
}

/// Result of one refinement step.
#[derive(Clone, Copy, Debug)]
pub struct Refined {
    pub z: Var,
    /// Per-row energies `[B]` of the incoming iterate.
    pub energy: Var,
}

/// `z' = p(z − η ∇_z E(z | ctx))`, or the raw step when `use_projector` is off.
///
/// The gradient is taken with respect to `z` only. A `z` that does not
/// require grad is lifted to a fresh leaf first, so the step never links
/// back to whatever produced it.
pub fn refine_step<M: EnergyModel + ?Sized>(
    g: &mut Graph,
    model: &M,
    p: &Bound,
    z: Var,
    ctx: &Context,
    use_projector: bool,
    mode: GradMode,
) -> Result<Refined> {
    let (out, dz) = refine_step_unchecked(g, model, p, z, ctx, use_projector, mode)?;
    let value = g.value(dz);
    if !value.is_finite() {
        let total: f64 = g.value(out.energy).data().iter().sum();
        return Err(PadError::NonFinite(format!(
            "energy gradient: energy sum {total}, grad norm {}",
            value.norm()
        )));
    }
    Ok(out)
}

/// [`refine_step`] without the finiteness check; also returns `∇_z E`.
/// Rows are independent, so callers may screen them individually.
pub fn refine_step_unchecked<M: EnergyModel + ?Sized>(
    g: &mut Graph,
    model: &M,
    p: &Bound,
    z: Var,
    ctx: &Context,
    use_projector: bool,
    mode: GradMode,
) -> Result<(Refined, Var)> {
    let z = if g.requires_grad(z) { z } else { g.leaf(g.value(z).clone(), true) };
    let energy = model.energy(g, p, z, ctx)?;
    let total = g.sum_all(energy);
    let grads = g.grad(total, &[z], mode == GradMode::SecondOrder)?;
    let dz = grads.get(z).expect("requested gradient");
    let step = g.mul(dz, p.var(model.eta()))?;
    let raw = g.sub(z, step)?;
    let z = if use_projector { model.project(g, p, raw)? } else { raw };
    Ok((Refined { z, energy }, dz))
}
