//! Tabular backward induction over the ego-centric state grid.

pub mod backup;
pub mod grid;
pub mod io;
pub mod label;
pub mod render;

pub use backup::{argmax, backup, backup_naive, q_values, EgoDynamics, ModelDynamics, StageReward};
pub use grid::{to_local_state, to_world_state, ActionGrid, Axis, GridSpec, ValueGrid};
pub use io::{read_labels, write_labels, LabelMeta};
pub use label::{frame_values, FrameLabels, Labeler, PlanConfig, PoseOffset, QLabels};
pub use render::render_value_map;
