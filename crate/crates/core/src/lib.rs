//! Cramer-Rao analysis and anchor placement for time-of-flight AUV
//! localization when sound travels along bent rays through an isogradient
//! sound-speed profile.
//!
//! * [`geometry`]: closed-form ray geometry and travel time, plus a Snell's-law
//!   integration oracle.
//! * [`fisher`]: noise model, Jacobian, Fisher information and CRLB.
//! * [`deployment`]: the uniform sea-surface circumference layout, its radius
//!   optimizer, and cube/random baselines.
//! * [`estimation`]: measurement simulation and a Gauss-Newton position fix.
//! * [`harness`]: Monte-Carlo scenarios, sweeps, CSV and SVG output.
//! * [`cli`]: the `auvgeom` command line.

pub mod cli;
pub mod deployment;
pub mod estimation;
pub mod fisher;
pub mod geometry;
pub mod harness;
pub mod linalg;

pub use geometry::{Position, SoundSpeedProfile};
