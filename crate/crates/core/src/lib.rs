//! Driving on rails: record logs in a small 2D driving world, fit an ego
//! forward model, label every frame with tabular action-values computed
//! under a frozen replay of the world, distill a reactive policy from those
//! labels and benchmark it.

pub mod agent;
pub mod baselines;
pub mod bench;
pub mod ego_model;
pub mod error;
pub mod geom;
pub mod policy;
pub mod reward;
pub mod value;
pub mod world;

pub use error::{Error, Result};
