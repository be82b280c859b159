pub mod compliance;
pub mod contact;
pub mod dmp;
pub mod env;
pub mod error;
pub mod eval_stats;
pub mod manipulator;
pub mod pose;
pub mod ppo;
pub mod sim;

pub use error::{Error, Result};
pub use pose::{Pose6, TaskFrame, Wrench};
