//! Simulation of the signal: Poisson jump paths and evaluation of the mild
//! solution
//!
//!   U(t,x) = e^{−αt} Σⱼ e^{−σⱼt} u0ⱼ ψⱼ(x)
//!            + Σ_{τ<t} e^{−α(t−τ)} P_{max(t−τ, τ_min)}(β, x)
//!
//! either lazily from stored jump times ([`SignalPath`]) or incrementally in
//! spectral-coefficient space ([`SignalEvolver`]), which is the fast path for
//! long observation runs and particle propagation.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::config::{ModelConfig, Phi0Spec};
use crate::error::{Error, Result};
use crate::quad::GridFunction;
use crate::spectral::{SpectralBasis, TAU_MIN};

/// Jump times of a Poisson process on (0, horizon].
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonPath {
    pub rate: f64,
    pub horizon: f64,
    /// Strictly increasing, all in (0, horizon].
    pub jump_times: Vec<f64>,
}

/// Sample jump times as partial sums of Exponential(rate) inter-arrivals,
/// truncated at `horizon`.
pub fn sample_poisson_path(rate: f64, horizon: f64, rng: &mut impl Rng) -> Result<PoissonPath> {
    if rate < 0.0 {
        return Err(Error::parameter(format!("rate = {rate} must be >= 0")));
    }
    if horizon <= 0.0 {
        return Err(Error::parameter(format!("horizon = {horizon} must be > 0")));
    }
    let mut jump_times = Vec::new();
    if rate > 0.0 {
        let exp = Exp::new(rate).expect("rate > 0");
        let mut t = 0.0;
        loop {
            t += exp.sample(rng);
            if t > horizon {
                break;
            }
            jump_times.push(t);
        }
    }
    Ok(PoissonPath {
        rate,
        horizon,
        jump_times,
    })
}

impl PoissonPath {
    /// Jumps with times in the half-open window (t0, t1].
    pub fn jumps_in(&self, t0: f64, t1: f64) -> &[f64] {
        let lo = self.jump_times.partition_point(|&t| t <= t0);
        let hi = self.jump_times.partition_point(|&t| t <= t1);
        &self.jump_times[lo..hi]
    }

    /// Dump as CSV with header `jump_index,jump_time`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "jump_index,jump_time")?;
        for (i, t) in self.jump_times.iter().enumerate() {
            writeln!(w, "{},{:.17}", i, t)?;
        }
        Ok(())
    }
}

/// A realized signal path: initial spectral coefficients plus jump times.
/// Evaluation is deterministic and lazy; nothing is precomputed on a grid.
#[derive(Debug, Clone)]
pub struct SignalPath {
    pub basis: Arc<SpectralBasis>,
    pub u0_coeffs: Vec<f64>,
    pub path: PoissonPath,
    pub beta: f64,
    pub alpha: f64,
}

impl SignalPath {
    pub fn new(
        basis: Arc<SpectralBasis>,
        u0_coeffs: Vec<f64>,
        path: PoissonPath,
        beta: f64,
        alpha: f64,
    ) -> Result<Self> {
        if u0_coeffs.len() != basis.truncation + 1 {
            return Err(Error::parameter(format!(
                "u0 has {} coefficients, basis needs {}",
                u0_coeffs.len(),
                basis.truncation + 1
            )));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::parameter(format!("beta = {beta} outside [0,1]")));
        }
        if alpha <= 0.0 {
            return Err(Error::parameter(format!("alpha = {alpha} must be > 0")));
        }
        Ok(Self {
            basis,
            u0_coeffs,
            path,
            beta,
            alpha,
        })
    }

    /// Build from a model config, sampling the jump path with `rng`.
    pub fn sample(config: &ModelConfig, horizon: f64, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let basis = Arc::new(SpectralBasis::build(config.a, config.b, config.truncation_j)?);
        let u0_coeffs = basis.measure_coeffs(&config.u0)?;
        let path = sample_poisson_path(config.lambda, horizon, rng)?;
        Self::new(basis, u0_coeffs, path, config.beta, config.alpha)
    }

    /// Spectral coefficients cⱼ(t) of U(t,·): decayed initial coefficients
    /// plus one kernel kick per past jump (lags clamped to τ_min inside the
    /// kernel only; the α-decay uses the exact lag).
    pub fn spectral_state(&self, t: f64) -> Vec<f64> {
        let basis = &self.basis;
        let nmodes = basis.truncation + 1;
        let mut coeffs = vec![0.0; nmodes];
        for j in 0..nmodes {
            let ex = (self.alpha + basis.sigma[j]) * t;
            if ex <= 800.0 {
                coeffs[j] = (-ex).exp() * self.u0_coeffs[j];
            }
        }
        let psi_beta = basis.psi_values(self.beta);
        for &tau in self.path.jumps_in(0.0, t) {
            if tau >= t {
                break;
            }
            let lag = t - tau;
            let klag = lag.max(TAU_MIN);
            let decay = (-self.alpha * lag).exp();
            for j in 0..nmodes {
                let ex = basis.sigma[j] * klag;
                if ex > 800.0 {
                    break;
                }
                coeffs[j] += decay * (-ex).exp() * psi_beta[j];
            }
        }
        coeffs
    }

    /// Pointwise value U(t,x).
    pub fn eval(&self, t: f64, x: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::parameter(format!("t = {t} must be >= 0")));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::parameter(format!("x = {x} outside [0,1]")));
        }
        let coeffs = self.spectral_state(t);
        Ok(dot_psi(&self.basis, &coeffs, x))
    }

    /// ⟨U_t, φ₀⟩: point evaluation for a Dirac, Simpson quadrature of
    /// φ₀(x)·U(t,x) over the grid otherwise.
    pub fn functional(&self, t: f64, phi0: &Phi0Spec) -> Result<f64> {
        match phi0 {
            Phi0Spec::DiracAt(x0) => self.eval(t, *x0),
            Phi0Spec::Grid(g) => {
                if t < 0.0 {
                    return Err(Error::parameter(format!("t = {t} must be >= 0")));
                }
                let coeffs = self.spectral_state(t);
                Ok(g.integrate_against(|x| dot_psi(&self.basis, &coeffs, x)))
            }
        }
    }

    /// ⟨U_t, f⟩ for a functional already projected onto the basis
    /// (f_coeffs[j] = ⟨ψⱼ, f⟩, or ψⱼ(x₀) for a Dirac).
    pub fn functional_coeffs(&self, t: f64, f_coeffs: &[f64]) -> f64 {
        self.spectral_state(t)
            .iter()
            .zip(f_coeffs)
            .map(|(c, f)| c * f)
            .sum()
    }
}

fn dot_psi(basis: &SpectralBasis, coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(j, c)| c * basis.psi_unchecked(j, x))
        .sum()
}

/// Incremental propagation of the spectral state, for observation generation
/// and particle advancement. Equivalent to [`SignalPath::spectral_state`] up
/// to floating-point associativity.
#[derive(Debug, Clone)]
pub struct SignalEvolver {
    basis: Arc<SpectralBasis>,
    alpha: f64,
    t: f64,
    coeffs: Vec<f64>,
    psi_beta: Vec<f64>,
}

impl SignalEvolver {
    pub fn new(basis: Arc<SpectralBasis>, alpha: f64, beta: f64, u0_coeffs: Vec<f64>) -> Self {
        let psi_beta = basis.psi_values(beta);
        SignalEvolver {
            basis,
            alpha,
            t: 0.0,
            coeffs: u0_coeffs,
            psi_beta,
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Advance to `t_next`, folding in jumps at the given absolute times
    /// (all must lie in (t, t_next]).
    pub fn advance_to(&mut self, t_next: f64, jumps: &[f64]) {
        debug_assert!(t_next >= self.t);
        let dt = t_next - self.t;
        for (j, c) in self.coeffs.iter_mut().enumerate() {
            *c *= (-(self.alpha + self.basis.sigma[j]) * dt).exp();
        }
        for &tau in jumps {
            debug_assert!(tau > self.t - 1e-12 && tau <= t_next + 1e-12);
            let lag = t_next - tau;
            let klag = lag.max(TAU_MIN);
            let decay = (-self.alpha * lag).exp();
            for j in 0..self.coeffs.len() {
                let ex = self.basis.sigma[j] * klag;
                if ex > 800.0 {
                    break;
                }
                self.coeffs[j] += decay * (-ex).exp() * self.psi_beta[j];
            }
        }
        self.t = t_next;
    }

    pub fn eval(&self, x: f64) -> f64 {
        dot_psi(&self.basis, &self.coeffs, x)
    }

    pub fn functional_coeffs(&self, f_coeffs: &[f64]) -> f64 {
        self.coeffs.iter().zip(f_coeffs).map(|(c, f)| c * f).sum()
    }
}

/// Analytic expectation of ⟨U_t, φ₀⟩:
/// e^{−αt} Σ e^{−σⱼt} u0ⱼ φⱼ + λ Σⱼ ψⱼ(β) φⱼ (1 − e^{−(α+σⱼ)t})/(α+σⱼ).
pub fn mean_functional(basis: &SpectralBasis, config: &ModelConfig, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::parameter(format!("t = {t} must be >= 0")));
    }
    let phi = phi0_coeffs(basis, &config.phi0)?;
    let u0 = basis.measure_coeffs(&config.u0)?;
    let mut acc = 0.0;
    for j in 0..=basis.truncation {
        let rate = config.alpha + basis.sigma[j];
        let decay = (-rate * t).exp();
        acc += decay * u0[j] * phi[j];
        acc += config.lambda * basis.psi_unchecked(j, config.beta) * phi[j] * (1.0 - decay) / rate;
    }
    Ok(acc)
}

/// Basis projection of the observation functional: ψⱼ(x₀) for a Dirac,
/// ⟨ψⱼ, φ₀⟩ for a grid weight.
pub fn phi0_coeffs(basis: &SpectralBasis, phi0: &Phi0Spec) -> Result<Vec<f64>> {
    match phi0 {
        Phi0Spec::DiracAt(x0) => {
            if !(0.0..=1.0).contains(x0) {
                return Err(Error::parameter(format!("x0 = {x0} outside [0,1]")));
            }
            Ok(basis.psi_values(*x0))
        }
        Phi0Spec::Grid(g) => Ok(basis.grid_coeffs(g)),
    }
}

/// Basis projection of a plain grid functional f (⟨ψⱼ, f⟩ per mode).
pub fn grid_functional_coeffs(basis: &SpectralBasis, f: &GridFunction) -> Vec<f64> {
    basis.grid_coeffs(f)
}
