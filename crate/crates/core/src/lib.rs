//! Simulation and analysis of time-inhomogeneous jump SDEs on `[0, ∞)`.
//!
//! The state equation has a drift `γ0(s, x)`, a diffusion driven by white
//! noise of intensity `2 b1(s)` on `[0, γ1(x)]`, and compensated jumps of a
//! Poisson random measure with intensity `b2(s) μ(dz)` on `[0, γ2(x)]`.
//!
//! * [`levy`]: jump measures, truncated moments and tail sampling
//! * [`model`]: model definition, generator and drift kernels
//! * [`simulate`]: Euler paths and Monte Carlo estimators
//! * [`criteria`]: grid scans for extinction and explosion conditions
//! * [`coupling`]: coupled paths, weighted distances and certificates
//! * [`meanfield`]: the self-consistent mean-field example

pub mod coupling;
pub mod criteria;
pub mod error;
pub mod expr;
pub mod harness;
pub mod levy;
pub mod meanfield;
pub mod model;
pub mod par;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use levy::{Atom, Density, LevyMeasure, TruncatedMoments};
pub use model::{ModelSpec, SmoothProbe};
pub use simulate::{MCEstimate, Path, PathStatus, SimConfig};
