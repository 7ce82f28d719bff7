//! Detection of a pollution source on a bounded channel.
//!
//! The latent concentration field follows a dispersion-advection-dilution
//! equation on [0,1] with reflecting boundaries, driven by Poisson point
//! releases at a fixed but unknown site. The crate provides the spectral
//! machinery for the solution operator, exact path simulation, noisy
//! discrete observation of a fixed functional, method-of-moments recovery
//! of the release site and intensity, a weighted particle filter for the
//! field given those estimates, and distributional diagnostics.

pub mod config;
pub mod error;
pub mod ergodic;
pub mod estimate;
pub mod filter;
pub mod observe;
pub mod quad;
pub mod rng;
pub mod signal;
pub mod spectral;

pub use config::{HFunction, InitialMeasure, ModelConfig, Phi0Spec};
pub use error::{Error, Result};
pub use estimate::{EstimationResult, MomentTargets};
pub use filter::{FilterOutput, ResamplePolicy};
pub use observe::ObservationSeries;
pub use quad::GridFunction;
pub use signal::{PoissonPath, SignalPath};
pub use spectral::SpectralBasis;
