//! Offline trajectories, hindsight relabelling and batch assembly.

mod dataset;
mod sampler;
mod synthetic;

pub use dataset::{load_meta, meta_path, save_dataset, Dataset, DatasetMeta, Trajectory};
pub use sampler::{
    arccos_from_uniform, corrupt, goal_offset, hindsight_sample, hindsight_window, make_batch, min_goal_offset,
    past_len_from, sample_arccos, trainable, Batch, BatchIter, HindsightSample,
};
pub use synthetic::linear_dynamics;
