//! Eigen-system and truncated Green's function of L = a∂²ₓ + b∂ₓ with
//! Neumann boundary conditions on [0,1], and the deterministic semigroup.
//!
//! Eigenvalues: σ₀ = 0, σⱼ = a(c² + (jπ)²) with c = −b/(2a).
//! Eigenfunctions: ψ₀ = sqrt(2c/(1−e^{−2c})), ψⱼ(x) = √2 e^{cx} sin(jπx + kⱼ)
//! with phase kⱼ = arctan(−jπ/c). The family is orthonormal in the
//! e^{−2cx}-weighted inner product. The kernel is the truncated series
//! P_t(y,x) = Σⱼ e^{−σⱼ t} ψⱼ(y) ψⱼ(x), implemented exactly as written.

use std::f64::consts::PI;

use crate::config::InitialMeasure;
use crate::error::{Error, Result};
use crate::quad::GridFunction;

/// Smallest admissible kernel time argument; the series is a Dirac limit as
/// t → 0, so shorter lags are rejected and callers clamp to this value.
pub const TAU_MIN: f64 = 1e-8;

/// Default series truncation.
pub const DEFAULT_TRUNCATION: usize = 200;

/// e^{-x} is exactly 0.0 in f64 beyond this, so series terms may be skipped
/// bit-identically once the exponent passes it.
const EXP_UNDERFLOW: f64 = 800.0;

/// Truncated eigen-system of the transport operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub a: f64,
    pub b: f64,
    /// c = −b/(2a).
    pub c: f64,
    /// Series truncation J.
    pub truncation: usize,
    /// Eigenvalues σ₀..σ_J.
    pub sigma: Vec<f64>,
    /// Phases k₁..k_J; index 0 is unused and holds 0.
    pub phase: Vec<f64>,
    /// Constant value of ψ₀.
    pub psi0_norm: f64,
}

impl SpectralBasis {
    /// Build the truncated basis for dispersion `a`, velocity `b` and
    /// truncation level `truncation`.
    pub fn build(a: f64, b: f64, truncation: usize) -> Result<Self> {
        if a <= 0.0 {
            return Err(Error::parameter(format!("a = {a} must be > 0")));
        }
        if b == 0.0 {
            return Err(Error::parameter(
                "b must be nonzero: the c = 0 (cosine) limit is not supported",
            ));
        }
        if truncation < 1 {
            return Err(Error::parameter("truncation must be >= 1"));
        }
        let c = -b / (2.0 * a);
        let mut sigma = Vec::with_capacity(truncation + 1);
        let mut phase = Vec::with_capacity(truncation + 1);
        sigma.push(0.0);
        phase.push(0.0);
        for j in 1..=truncation {
            let jpi = j as f64 * PI;
            sigma.push(a * (c * c + jpi * jpi));
            phase.push((-jpi / c).atan());
        }
        let psi0_norm = (2.0 * c / (1.0 - (-2.0 * c).exp())).sqrt();
        Ok(Self {
            a,
            b,
            c,
            truncation,
            sigma,
            phase,
            psi0_norm,
        })
    }

    fn check_mode(&self, j: usize) -> Result<()> {
        if j > self.truncation {
            return Err(Error::parameter(format!(
                "mode index {j} exceeds truncation {}",
                self.truncation
            )));
        }
        Ok(())
    }

    fn check_x(&self, x: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::parameter(format!("x = {x} outside [0,1]")));
        }
        Ok(())
    }

    /// ψⱼ(x).
    pub fn psi(&self, j: usize, x: f64) -> Result<f64> {
        self.check_mode(j)?;
        self.check_x(x)?;
        Ok(self.psi_unchecked(j, x))
    }

    #[inline]
    pub(crate) fn psi_unchecked(&self, j: usize, x: f64) -> f64 {
        if j == 0 {
            self.psi0_norm
        } else {
            let jpi = j as f64 * PI;
            std::f64::consts::SQRT_2 * (self.c * x).exp() * (jpi * x + self.phase[j]).sin()
        }
    }

    /// ∂ψⱼ/∂x, analytic. Zero at both endpoints by the Neumann condition.
    pub fn psi_deriv(&self, j: usize, x: f64) -> Result<f64> {
        self.check_mode(j)?;
        self.check_x(x)?;
        if j == 0 {
            return Ok(0.0);
        }
        let jpi = j as f64 * PI;
        let arg = jpi * x + self.phase[j];
        Ok(std::f64::consts::SQRT_2
            * (self.c * x).exp()
            * (self.c * arg.sin() + jpi * arg.cos()))
    }

    /// ψⱼ(x) for all modes j = 0..=J.
    pub fn psi_values(&self, x: f64) -> Vec<f64> {
        (0..=self.truncation)
            .map(|j| self.psi_unchecked(j, x))
            .collect()
    }

    /// Truncated kernel P_t(y,x) = Σⱼ e^{−σⱼ t} ψⱼ(y) ψⱼ(x).
    ///
    /// The truncation tail is bounded by
    /// 2 e^{2|c|} e^{−σ_{J+1} t} / (1 − e^{−a(2J+3)π² t}); see
    /// [`Self::green_tail_bound`].
    pub fn green(&self, t: f64, y: f64, x: f64) -> Result<f64> {
        if t < TAU_MIN {
            return Err(Error::domain(format!(
                "kernel time {t} below tau_min = {TAU_MIN}: the series is a Dirac limit"
            )));
        }
        self.check_x(y)?;
        self.check_x(x)?;
        let mut acc = 0.0;
        for j in 0..=self.truncation {
            if self.sigma[j] * t > EXP_UNDERFLOW {
                break;
            }
            acc += (-self.sigma[j] * t).exp() * self.psi_unchecked(j, y) * self.psi_unchecked(j, x);
        }
        Ok(acc)
    }

    /// Upper bound on the magnitude of the dropped series tail of
    /// [`Self::green`]: |ψⱼ| ≤ √2 e^{|c|} and the eigenvalue gaps grow, so
    /// the tail is dominated by a geometric series.
    pub fn green_tail_bound(&self, t: f64) -> f64 {
        let j1 = (self.truncation + 1) as f64;
        let sigma_next = self.a * (self.c * self.c + (j1 * PI) * (j1 * PI));
        let gap = self.a * (2.0 * j1 + 1.0) * PI * PI;
        let bound_sq = 2.0 * (2.0 * self.c.abs()).exp();
        bound_sq * (-sigma_next * t).exp() / (1.0 - (-gap * t).exp())
    }

    /// Semigroup action T_t f(y) = ∫₀¹ P_t(y,x) f(x) dx, computed in
    /// coefficient space. t = 0 returns f(y) by interpolation.
    pub fn semigroup_apply(&self, t: f64, f: &GridFunction, y: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::parameter(format!("t = {t} must be >= 0")));
        }
        self.check_x(y)?;
        if t == 0.0 {
            return f.interp(y);
        }
        let coeffs = self.grid_coeffs(f);
        let mut acc = 0.0;
        for j in 0..=self.truncation {
            if self.sigma[j] * t > EXP_UNDERFLOW {
                break;
            }
            acc += (-self.sigma[j] * t).exp() * coeffs[j] * self.psi_unchecked(j, y);
        }
        Ok(acc)
    }

    /// Unweighted projections ⟨ψⱼ, f⟩ = ∫₀¹ ψⱼ(x) f(x) dx for all modes.
    pub fn grid_coeffs(&self, f: &GridFunction) -> Vec<f64> {
        (0..=self.truncation)
            .map(|j| f.integrate_against(|x| self.psi_unchecked(j, x)))
            .collect()
    }

    /// Spectral coefficients u0ⱼ = ∫ ψⱼ(y) μ(dy) of an initial measure.
    pub fn measure_coeffs(&self, mu: &InitialMeasure) -> Result<Vec<f64>> {
        match mu {
            InitialMeasure::DensityOnGrid(g) => Ok(self.grid_coeffs(g)),
            InitialMeasure::PointMasses(atoms) => {
                let mut coeffs = vec![0.0; self.truncation + 1];
                for &(loc, mass) in atoms {
                    if mass < 0.0 {
                        return Err(Error::parameter(format!(
                            "negative mass atom {mass} at {loc}"
                        )));
                    }
                    self.check_x(loc)?;
                    for (j, c) in coeffs.iter_mut().enumerate() {
                        *c += mass * self.psi_unchecked(j, loc);
                    }
                }
                Ok(coeffs)
            }
            InitialMeasure::Spectral(coeffs) => {
                if coeffs.len() != self.truncation + 1 {
                    return Err(Error::parameter(format!(
                        "spectral initial measure has {} coefficients, basis needs {}",
                        coeffs.len(),
                        self.truncation + 1
                    )));
                }
                Ok(coeffs.clone())
            }
        }
    }
}
