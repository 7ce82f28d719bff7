//! Model parameters and the small closed vocabulary of observation
//! functionals, link functions and initial measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::GridFunction;

/// Link function applied to the observed functional before adding noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HFunction {
    /// h(z) = kappa * z. Unbounded; the usual simulation choice.
    Linear { kappa: f64 },
    /// h(z) = kappa * tanh(z / scale). Bounded by |kappa|.
    ScaledTanh { kappa: f64, scale: f64 },
}

impl HFunction {
    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            HFunction::Linear { kappa } => kappa * z,
            HFunction::ScaledTanh { kappa, scale } => kappa * (z / scale).tanh(),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, HFunction::Linear { .. })
    }
}

/// The observation functional φ₀: either a point evaluation or a smooth
/// weight given on the quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Phi0Spec {
    DiracAt(f64),
    Grid(GridFunction),
}

impl Phi0Spec {
    pub fn validate(&self) -> Result<()> {
        if let Phi0Spec::DiracAt(x0) = self {
            if !(0.0..=1.0).contains(x0) {
                return Err(Error::parameter(format!(
                    "phi0 dirac location {x0} must lie in [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// Initial concentration profile, as a finite measure on [0,1].
#[derive(Debug, Clone, PartialEq)]
pub enum InitialMeasure {
    /// Density given on the quadrature grid.
    DensityOnGrid(GridFunction),
    /// Atoms (location, mass >= 0).
    PointMasses(Vec<(f64, f64)>),
    /// Precomputed spectral coefficients u0_j, j = 0..=J.
    Spectral(Vec<f64>),
}

impl InitialMeasure {
    /// The zero measure.
    pub fn zero() -> Self {
        InitialMeasure::PointMasses(Vec::new())
    }
}

/// All physical and statistical parameters of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Dispersion coefficient, > 0.
    pub a: f64,
    /// Flow velocity; must be nonzero (the spectral formulas presume c != 0).
    pub b: f64,
    /// Dilution rate, > 0.
    pub alpha: f64,
    /// Source location in (0,1).
    pub beta: f64,
    /// Poisson release intensity in (0, m_bound].
    pub lambda: f64,
    /// Upper bound of the admissible intensity box.
    pub m_bound: f64,
    /// Observation sampling interval, > 0.
    pub delta: f64,
    pub h: HFunction,
    pub phi0: Phi0Spec,
    pub u0: InitialMeasure,
    /// Spectral series truncation J.
    pub truncation_j: usize,
    pub seed: u64,
    /// Retain the latent functional alongside generated observations.
    pub keep_truth: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.a <= 0.0 {
            return Err(Error::parameter(format!("a = {} must be > 0", self.a)));
        }
        if self.b == 0.0 {
            return Err(Error::parameter("b must be nonzero"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::parameter(format!(
                "alpha = {} must be > 0",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::parameter(format!(
                "beta = {} must lie in (0,1)",
                self.beta
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= self.m_bound) {
            return Err(Error::parameter(format!(
                "lambda = {} must lie in (0, {}]",
                self.lambda, self.m_bound
            )));
        }
        if self.delta <= 0.0 {
            return Err(Error::parameter(format!(
                "delta = {} must be > 0",
                self.delta
            )));
        }
        if self.truncation_j < 1 {
            return Err(Error::parameter("truncation_j must be >= 1"));
        }
        self.phi0.validate()?;
        if let InitialMeasure::PointMasses(atoms) = &self.u0 {
            for &(loc, mass) in atoms {
                if !(0.0..=1.0).contains(&loc) {
                    return Err(Error::parameter(format!(
                        "initial point mass at {loc} outside [0,1]"
                    )));
                }
                if mass < 0.0 {
                    return Err(Error::parameter(format!(
                        "initial point mass {mass} must be >= 0"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn theta(&self) -> (f64, f64) {
        (self.beta, self.lambda)
    }
}
