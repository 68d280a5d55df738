//! Planner networks and the refinement operator.

mod config;
mod invdyn;
mod pad;
mod refine;
mod stub;
mod traits;

pub use config::PadConfig;
pub use invdyn::InverseDynamics;
pub use pad::{PadModel, ENCODER_LN_EPS};
pub use refine::{refine_step, refine_step_unchecked, GradMode, Refined};
pub use stub::{ScalarStub, StubCoefficients};
pub use traits::{Context, EnergyModel};

#[cfg(test)]
mod tests;
