//! Ego-guided scene-flow modeling on a panoramic camera ring.

pub mod error;
pub mod exec;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub mod enhance;
pub mod flow;
pub mod metrics;
pub mod rig;
pub mod synth;
