//! Stop detection on GPS trajectories with simulated data gaps.
//!
//! The crate covers the whole batch pipeline: a density-based labeler, gap
//! injection over selected stops, routine and local features per ping, a
//! temporal split that keeps stops whole, two classifiers and the
//! imbalance-aware evaluation.

pub mod detect;
pub mod error;
pub mod eval;
pub mod features;
pub mod gaps;
pub mod geo;
pub mod io;
pub mod models;
pub mod model;
pub mod quality;
pub mod split;
pub mod synth;

pub use error::{Error, Result};
pub use model::{LabeledPing, Ping, PingId, PointType, StopEvent, Trajectory};
