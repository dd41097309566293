//! Categorical driving policy distilled from action-value labels.

pub mod control;
pub mod io;
pub mod loss;
pub mod model;
pub mod train;

pub use control::{decode, head_at_speed, ControlConfig, PolicyAgent};
pub use io::{load_policy, save_policy};
pub use loss::{distill_loss, joint_distill_loss, joint_log_probs, N_JOINT};
pub use model::{PolicyArch, PolicyModel, Tensor};
pub use train::{build_samples, mean_loss, train, Adam, DistillConfig, DistillSample, TrainReport};
