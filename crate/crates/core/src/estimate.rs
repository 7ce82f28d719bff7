//! Method-of-moments estimation of θ = (β, λ).
//!
//! The stationary moments of the observed functional come from the shot
//! noise V_∞ = ∫₀^∞ e^{−αs} P_s(β,·) dN_{λs}. For a linear link they have
//! closed forms (mean λS₁, variance λS₂ of ⟨V_∞, φ₀⟩):
//!
//!   S₁(β) = Σⱼ ψⱼ(β) wⱼ / (α + σⱼ)
//!   S₂(β) = Σᵢⱼ ψᵢ(β) wᵢ ψⱼ(β) wⱼ / (2α + σᵢ + σⱼ)
//!
//! with wⱼ the φ₀ basis coefficients. For other links the moments are
//! Monte Carlo averages over frozen stationary samples (common random
//! numbers by thinning a max-rate jump stream, so the residual surface is
//! smooth in θ). A damped, box-projected Newton iteration solves
//! m₁ = g₁(θ), m₂ = g₂(θ) + 1.

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::observe::ObservationSeries;
use crate::rng;
use crate::signal::phi0_coeffs;
use crate::spectral::{SpectralBasis, TAU_MIN};

/// Clip margin of the admissible box Θ.
pub const THETA_EDGE: f64 = 1e-6;
/// Newton stopping tolerance on the residual norm.
const NEWTON_TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;
const DET_FLOOR: f64 = 1e-12;
/// Monte Carlo sample count for non-linear links.
const MC_SAMPLES: usize = 20_000;

/// Sample moments m₁, m₂ of an observation series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentTargets {
    pub m1: f64,
    pub m2: f64,
    pub n: usize,
}

pub fn sample_moments(y: &ObservationSeries) -> Result<MomentTargets> {
    if y.is_empty() {
        return Err(Error::parameter("empty observation series"));
    }
    let n = y.len();
    let m1 = y.y.iter().sum::<f64>() / n as f64;
    let m2 = y.y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    Ok(MomentTargets { m1, m2, n })
}

/// One Newton iterate, recorded in the solver trace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Iterate {
    pub beta: f64,
    pub lambda: f64,
    pub residual_norm: f64,
}

/// Outcome of a moment-equation solve.
#[derive(Debug, Clone, Serialize)]
pub struct EstimationResult {
    pub beta_hat: f64,
    pub lambda_hat: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    pub jacobian_cond: f64,
    pub trace: Vec<Iterate>,
}

/// Rolling estimate at prefix length k.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RollingPoint {
    pub k: usize,
    pub beta_hat: f64,
    pub lambda_hat: f64,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Precomputed stationary moment machinery for one model configuration.
pub struct MomentModel {
    basis: Arc<SpectralBasis>,
    alpha: f64,
    m_bound: f64,
    /// φ₀ basis coefficients wⱼ.
    phi: Vec<f64>,
    /// 1/(2α + σᵢ + σⱼ), row-major (J+1)².
    inv2: Vec<f64>,
    mode: Mode,
}

enum Mode {
    /// Closed forms for h(z) = κz.
    Linear { kappa: f64 },
    /// Frozen thinning streams: per sample, (jump time, uniform mark) pairs
    /// of a rate-m_bound Poisson process on [0, horizon].
    MonteCarlo {
        h: crate::config::HFunction,
        streams: Vec<Vec<(f64, f64)>>,
    },
}

impl MomentModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let basis = Arc::new(SpectralBasis::build(config.a, config.b, config.truncation_j)?);
        Self::with_basis(basis, config)
    }

    pub fn with_basis(basis: Arc<SpectralBasis>, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let phi = phi0_coeffs(&basis, &config.phi0)?;
        let n = basis.truncation + 1;
        let mut inv2 = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                inv2[i * n + j] = 1.0 / (2.0 * config.alpha + basis.sigma[i] + basis.sigma[j]);
            }
        }
        let mode = match config.h {
            crate::config::HFunction::Linear { kappa } => Mode::Linear { kappa },
            ref h => {
                // horizon 5/α drops an e^{-5} tail of the stationary integral
                let horizon = 5.0 / config.alpha;
                let mut r = rng::stream(config.seed, rng::STREAM_ESTIMATOR_MC);
                let mut streams = Vec::with_capacity(MC_SAMPLES);
                for _ in 0..MC_SAMPLES {
                    let path =
                        crate::signal::sample_poisson_path(config.m_bound, horizon, &mut r)?;
                    let marks: Vec<(f64, f64)> = path
                        .jump_times
                        .iter()
                        .map(|&t| (t, r.random::<f64>()))
                        .collect();
                    streams.push(marks);
                }
                Mode::MonteCarlo {
                    h: h.clone(),
                    streams,
                }
            }
        };
        Ok(Self {
            basis,
            alpha: config.alpha,
            m_bound: config.m_bound,
            phi,
            inv2,
            mode,
        })
    }

    pub fn m_bound(&self) -> f64 {
        self.m_bound
    }

    fn check_theta(&self, beta: f64, lambda: f64) -> Result<()> {
        if !(beta > 0.0 && beta < 1.0 && lambda > 0.0 && lambda <= self.m_bound) {
            return Err(Error::domain(format!(
                "theta = ({beta}, {lambda}) outside the admissible box"
            )));
        }
        Ok(())
    }

    /// Weighted kernel coefficients qⱼ = ψⱼ(β) wⱼ.
    fn q(&self, beta: f64) -> Vec<f64> {
        (0..=self.basis.truncation)
            .map(|j| self.basis.psi_unchecked(j, beta) * self.phi[j])
            .collect()
    }

    fn q_deriv(&self, beta: f64) -> Vec<f64> {
        (0..=self.basis.truncation)
            .map(|j| self.basis.psi_deriv(j, beta).expect("beta in range") * self.phi[j])
            .collect()
    }

    /// S₁(β) = Σⱼ qⱼ / (α + σⱼ).
    pub fn s1(&self, beta: f64) -> f64 {
        self.q(beta)
            .iter()
            .enumerate()
            .map(|(j, q)| q / (self.alpha + self.basis.sigma[j]))
            .sum()
    }

    /// S₂(β) = qᵀ A q with Aᵢⱼ = 1/(2α + σᵢ + σⱼ).
    pub fn s2(&self, beta: f64) -> f64 {
        let q = self.q(beta);
        self.bilinear(&q, &q)
    }

    fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = u.len();
        let mut acc = 0.0;
        for i in 0..n {
            if u[i] == 0.0 {
                continue;
            }
            let row = &self.inv2[i * n..(i + 1) * n];
            let mut inner = 0.0;
            for j in 0..n {
                inner += row[j] * v[j];
            }
            acc += u[i] * inner;
        }
        acc
    }

    fn s1_deriv(&self, beta: f64) -> f64 {
        self.q_deriv(beta)
            .iter()
            .enumerate()
            .map(|(j, q)| q / (self.alpha + self.basis.sigma[j]))
            .sum()
    }

    fn s2_deriv(&self, beta: f64) -> f64 {
        let q = self.q(beta);
        let dq = self.q_deriv(beta);
        2.0 * self.bilinear(&dq, &q)
    }

    /// Stationary moments (g₁, g₂) of h(⟨V_∞, φ₀⟩).
    pub fn g(&self, beta: f64, lambda: f64) -> Result<(f64, f64)> {
        self.check_theta(beta, lambda)?;
        match &self.mode {
            Mode::Linear { kappa } => {
                let s1 = self.s1(beta);
                let s2 = self.s2(beta);
                let g1 = kappa * lambda * s1;
                let g2 = kappa * kappa * (lambda * s2 + lambda * lambda * s1 * s1);
                Ok((g1, g2))
            }
            Mode::MonteCarlo { h, streams } => {
                let keep = lambda / self.m_bound;
                let q = self.q(beta);
                let mut sum1 = 0.0;
                let mut sum2 = 0.0;
                for marks in streams {
                    let mut v = 0.0;
                    for &(s, u) in marks {
                        if u < keep {
                            v += (-self.alpha * s).exp() * self.kernel_dot(&q, s.max(TAU_MIN));
                        }
                    }
                    let hv = h.apply(v);
                    sum1 += hv;
                    sum2 += hv * hv;
                }
                let n = streams.len() as f64;
                Ok((sum1 / n, sum2 / n))
            }
        }
    }

    /// Σⱼ e^{−σⱼ s} qⱼ, the kernel paired with φ₀ at lag s.
    fn kernel_dot(&self, q: &[f64], s: f64) -> f64 {
        let mut acc = 0.0;
        for (j, &qj) in q.iter().enumerate() {
            let ex = self.basis.sigma[j] * s;
            if ex > 800.0 {
                break;
            }
            acc += (-ex).exp() * qj;
        }
        acc
    }

    /// 2x2 Jacobian [[∂g₁/∂β, ∂g₁/∂λ], [∂g₂/∂β, ∂g₂/∂λ]].
    pub fn jacobian(&self, beta: f64, lambda: f64) -> Result<[[f64; 2]; 2]> {
        self.check_theta(beta, lambda)?;
        match &self.mode {
            Mode::Linear { kappa } => {
                let k = *kappa;
                let s1 = self.s1(beta);
                let s2 = self.s2(beta);
                let ds1 = self.s1_deriv(beta);
                let ds2 = self.s2_deriv(beta);
                Ok([
                    [k * lambda * ds1, k * s1],
                    [
                        k * k * (lambda * ds2 + 2.0 * lambda * lambda * s1 * ds1),
                        k * k * (s2 + 2.0 * lambda * s1 * s1),
                    ],
                ])
            }
            Mode::MonteCarlo { .. } => {
                // central differences, steps clipped to stay inside Θ
                let hb = (1e-4 * beta.abs().max(1.0))
                    .min(beta - THETA_EDGE)
                    .min(1.0 - THETA_EDGE - beta)
                    .max(1e-8);
                let hl = (1e-4 * lambda.abs().max(1.0))
                    .min(lambda - THETA_EDGE)
                    .min(self.m_bound - lambda)
                    .max(1e-8);
                let (g1p, g2p) = self.g(beta + hb, lambda)?;
                let (g1m, g2m) = self.g(beta - hb, lambda)?;
                let (g1lp, g2lp) = self.g(beta, lambda + hl)?;
                let (g1lm, g2lm) = self.g(beta, lambda - hl)?;
                Ok([
                    [(g1p - g1m) / (2.0 * hb), (g1lp - g1lm) / (2.0 * hl)],
                    [(g2p - g2m) / (2.0 * hb), (g2lp - g2lm) / (2.0 * hl)],
                ])
            }
        }
    }

    fn project(&self, beta: f64, lambda: f64) -> (f64, f64) {
        (
            beta.clamp(THETA_EDGE, 1.0 - THETA_EDGE),
            lambda.clamp(THETA_EDGE, self.m_bound),
        )
    }
}

/// Free-function form of [`MomentModel::g`].
pub fn g_moments(theta: (f64, f64), config: &ModelConfig) -> Result<(f64, f64)> {
    MomentModel::new(config)?.g(theta.0, theta.1)
}

/// Free-function form of [`MomentModel::jacobian`].
pub fn jacobian(theta: (f64, f64), config: &ModelConfig) -> Result<[[f64; 2]; 2]> {
    MomentModel::new(config)?.jacobian(theta.0, theta.1)
}

fn residual(model: &MomentModel, targets: &MomentTargets, beta: f64, lambda: f64) -> Result<[f64; 2]> {
    let (g1, g2) = model.g(beta, lambda)?;
    Ok([g1 - targets.m1, g2 + 1.0 - targets.m2])
}

fn norm(r: &[f64; 2]) -> f64 {
    r[0].hypot(r[1])
}

fn cond_2x2(j: &[[f64; 2]; 2]) -> f64 {
    // singular values of a 2x2 from the Gram matrix
    let a = j[0][0] * j[0][0] + j[1][0] * j[1][0];
    let b = j[0][0] * j[0][1] + j[1][0] * j[1][1];
    let d = j[0][1] * j[0][1] + j[1][1] * j[1][1];
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    let s_max = (0.5 * (tr + disc)).max(0.0).sqrt();
    let s_min = (0.5 * (tr - disc)).max(0.0).sqrt();
    if s_min == 0.0 {
        f64::INFINITY
    } else {
        s_max / s_min
    }
}

struct NewtonRun {
    beta: f64,
    lambda: f64,
    residual_norm: f64,
    iterations: usize,
    converged: bool,
    jacobian_cond: f64,
    trace: Vec<Iterate>,
}

fn newton(
    model: &MomentModel,
    targets: &MomentTargets,
    init: (f64, f64),
) -> Result<NewtonRun> {
    let (mut beta, mut lambda) = model.project(init.0, init.1);
    let mut r = residual(model, targets, beta, lambda)?;
    let mut rnorm = norm(&r);
    let mut trace = vec![Iterate {
        beta,
        lambda,
        residual_norm: rnorm,
    }];
    let mut cond = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        if rnorm <= NEWTON_TOL {
            return Ok(NewtonRun {
                beta,
                lambda,
                residual_norm: rnorm,
                iterations,
                converged: true,
                jacobian_cond: cond,
                trace,
            });
        }
        let jac = model.jacobian(beta, lambda)?;
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        cond = cond_2x2(&jac);
        if det.abs() < DET_FLOOR {
            break;
        }
        let step = [
            (jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
            (jac[0][0] * r[1] - jac[1][0] * r[0]) / det,
        ];
        // backtracking: accept the first damping factor that reduces ||r||
        let mut accepted = false;
        let mut s = 1.0;
        for _ in 0..=10 {
            let (tb, tl) = model.project(beta - s * step[0], lambda - s * step[1]);
            let tr = residual(model, targets, tb, tl)?;
            let tn = norm(&tr);
            if tn < rnorm {
                beta = tb;
                lambda = tl;
                r = tr;
                rnorm = tn;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        iterations += 1;
        trace.push(Iterate {
            beta,
            lambda,
            residual_norm: rnorm,
        });
        if !accepted {
            break;
        }
    }
    Ok(NewtonRun {
        beta,
        lambda,
        residual_norm: rnorm,
        iterations,
        converged: rnorm <= NEWTON_TOL,
        jacobian_cond: cond,
        trace,
    })
}

/// Solve m₁ = g₁(θ), m₂ = g₂(θ) + 1 by damped projected Newton with a
/// 5x5 grid restart; never raises on non-convergence.
pub fn solve_moment_equations(
    targets: &MomentTargets,
    config: &ModelConfig,
    init: (f64, f64),
) -> Result<EstimationResult> {
    let model = MomentModel::new(config)?;
    solve_with_model(&model, targets, init)
}

pub fn solve_with_model(
    model: &MomentModel,
    targets: &MomentTargets,
    init: (f64, f64),
) -> Result<EstimationResult> {
    let first = newton(model, targets, init)?;
    let mut candidates = vec![first];
    if !candidates[0].converged {
        // restart from the best point of a 5x5 grid over Θ
        let mut best: Option<((f64, f64), f64)> = None;
        for ib in 0..5 {
            for il in 0..5 {
                let beta = (ib as f64 + 1.0) / 6.0;
                let lambda = (il as f64 + 1.0) / 5.0 * model.m_bound();
                let r = residual(model, targets, beta, lambda)?;
                let n = norm(&r);
                if best.map_or(true, |(_, bn)| n < bn) {
                    best = Some(((beta, lambda), n));
                }
            }
        }
        if let Some((start, _)) = best {
            candidates.push(newton(model, targets, start)?);
        }
    }
    // converged candidates first, then smallest residual, then smallest
    // displacement from the caller's init
    let dist = |run: &NewtonRun| {
        let db = run.beta - init.0;
        let dl = run.lambda - init.1;
        db.hypot(dl)
    };
    candidates.sort_by(|a, b| {
        b.converged
            .cmp(&a.converged)
            .then(a.residual_norm.total_cmp(&b.residual_norm))
            .then(dist(a).total_cmp(&dist(b)))
    });
    let best = candidates.into_iter().next().expect("at least one run");
    Ok(EstimationResult {
        beta_hat: best.beta,
        lambda_hat: best.lambda,
        iterations: best.iterations,
        residual_norm: best.residual_norm,
        converged: best.converged,
        jacobian_cond: best.jacobian_cond,
        trace: best.trace,
    })
}

/// Sample moments composed with the moment-equation solve.
pub fn estimate_parameters(
    y: &ObservationSeries,
    config: &ModelConfig,
    init: (f64, f64),
) -> Result<EstimationResult> {
    let targets = sample_moments(y)?;
    solve_moment_equations(&targets, config, init)
}

/// Rolling estimates θ̂_k for prefix lengths k = start, start+stride, ..., n,
/// warm-starting each solve at the previous solution.
pub fn rolling_estimates(
    y: &ObservationSeries,
    config: &ModelConfig,
    init: (f64, f64),
    start: usize,
    stride: usize,
) -> Result<Vec<RollingPoint>> {
    if start < 1 || start > y.len() {
        return Err(Error::parameter(format!(
            "rolling start {start} outside 1..={}",
            y.len()
        )));
    }
    if stride < 1 {
        return Err(Error::parameter("stride must be >= 1"));
    }
    let model = MomentModel::new(config)?;
    let mut points = Vec::new();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut warm = init;
    let mut next = start;
    for (i, &v) in y.y.iter().enumerate() {
        sum += v;
        sum_sq += v * v;
        let k = i + 1;
        if k == next || k == y.len() {
            let targets = MomentTargets {
                m1: sum / k as f64,
                m2: sum_sq / k as f64,
                n: k,
            };
            let res = solve_with_model(&model, &targets, warm)?;
            warm = (res.beta_hat, res.lambda_hat);
            points.push(RollingPoint {
                k,
                beta_hat: res.beta_hat,
                lambda_hat: res.lambda_hat,
                residual_norm: res.residual_norm,
                converged: res.converged,
            });
            while next <= k {
                next += stride;
            }
        }
    }
    Ok(points)
}
