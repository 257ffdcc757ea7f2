//! Score distillation as a two-objective problem, measured against analytic
//! Gaussian-mixture diffusion oracles.
//!
//! * [`schedule`]: the discrete noise ladder, timestep sampling and `omega(t)`.
//! * [`oracle`]: closed-form noised densities, scores and noise predictions.
//! * [`guidance`]: classifier/smoothing decomposition and the SDS, CSD,
//!   fixed-ratio and balanced (BSD) combiners.
//! * [`mgda`]: min-norm gradient combinations and stationarity gaps.
//! * [`generator`]: differentiable parameterizations and the distillation step.
//! * [`harness`]: config loading, seeded experiments and CSV/PPM output.
//! * [`presets`]: named oracles used by the example configs.

pub mod error;
pub mod generator;
pub mod guidance;
pub mod harness;
pub mod mgda;
pub mod oracle;
pub mod presets;
pub mod schedule;
pub mod vecops;

pub use error::{Error, Result};
