//! The denoising objective, optimisation loops and checkpoints.

mod checkpoint;
mod invdyn;
mod run;
mod step;

pub use checkpoint::{sidecar_path, Checkpoint, CHECKPOINT_VERSION};
pub use invdyn::{
    invdyn_checkpoint, invdyn_mse, restore_invdyn, train_invdyn, train_invdyn_on, transitions, InvDynConfig,
    INVDYN_KIND,
};
pub use run::{planner_checkpoint, restore_planner, train_loop, TrainOutcome, LATEST_CHECKPOINT, METRICS_FILE, PLANNER_KIND};
pub use step::{loss_and_grads, train_step, LossEval, MetricsRow, TrainConfig};
