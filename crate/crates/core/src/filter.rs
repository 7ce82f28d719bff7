//! Weighted Monte Carlo approximating filter.
//!
//! M particles carry independent copies of the signal driven by fresh
//! Poisson streams at the estimated rate λ̂ from the estimated site β̂.
//! Weights live in the log domain; the increment per observation is
//! y·h(s) − h(s)²/2, the Girsanov exponent of a unit-variance Gaussian
//! channel. Resampling is off by default so the weighted ensemble is the
//! plain importance-sampling estimator; an ESS-threshold multinomial
//! resampler is available behind a policy switch.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp};

use crate::config::{HFunction, ModelConfig};
use crate::error::{Error, Result};
use crate::observe::ObservationSeries;
use crate::rng;
use crate::signal::phi0_coeffs;
use crate::spectral::{SpectralBasis, TAU_MIN};

/// When to resample the ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResamplePolicy {
    /// Never resample (default; keeps the estimator unbiased and the run
    /// deterministic in the particle streams alone).
    Off,
    /// Multinomial resampling whenever ESS < frac * M, frac in (0,1].
    EssThreshold(f64),
}

/// One output row of the filter, in CSV column order.
#[derive(Debug, Clone, Copy)]
pub struct FilterRecord {
    pub j: usize,
    pub t: f64,
    pub posterior_mean: f64,
    pub ess: f64,
    pub log_norm_const: f64,
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub records: Vec<FilterRecord>,
    pub n_particles: usize,
    pub resampled_steps: usize,
}

impl FilterOutput {
    /// CSV dump with header `j,t,posterior_mean,ess,log_norm_const`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "j,t,posterior_mean,ess,log_norm_const")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.j, r.t, r.posterior_mean, r.ess, r.log_norm_const
            )?;
        }
        Ok(())
    }
}

/// Log-weight increment for one observation: y·h(s) − h(s)²/2.
pub fn log_weight_increment(y: f64, s: f64, h: &HFunction) -> f64 {
    let hs = h.apply(s);
    y * hs - 0.5 * hs * hs
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// The particle ensemble plus everything precomputed for one (θ̂, Δ) pair.
pub struct ParticleFilter {
    basis: Arc<SpectralBasis>,
    alpha: f64,
    lambda_hat: f64,
    delta: f64,
    h: HFunction,
    /// φ₀ basis coefficients.
    phi: Vec<f64>,
    /// ψⱼ(β̂), the kernel injection direction.
    psi_beta: Vec<f64>,
    /// e^{−(α+σⱼ)Δ}, the bulk one-step decay.
    decay: Vec<f64>,
    t: f64,
    step_index: usize,
    coeffs: Vec<Vec<f64>>,
    log_w: Vec<f64>,
    /// Next arrival time of each particle's jump stream (absolute time).
    next_jump: Vec<f64>,
    rngs: Vec<ChaCha12Rng>,
    resample_rng: ChaCha12Rng,
    policy: ResamplePolicy,
    /// Normalizing-constant mass folded in at past resample steps.
    log_z_base: f64,
    resampled_steps: usize,
}

impl ParticleFilter {
    pub fn new(
        config: &ModelConfig,
        theta_hat: (f64, f64),
        m: usize,
        policy: ResamplePolicy,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let (beta_hat, lambda_hat) = theta_hat;
        if !(beta_hat > 0.0 && beta_hat < 1.0) {
            return Err(Error::parameter(format!(
                "beta_hat = {beta_hat} must lie in (0,1)"
            )));
        }
        if !(lambda_hat >= 0.0 && lambda_hat <= config.m_bound) {
            return Err(Error::parameter(format!(
                "lambda_hat = {lambda_hat} must lie in [0, {}]",
                config.m_bound
            )));
        }
        if m < 1 {
            return Err(Error::parameter("need at least one particle"));
        }
        if let ResamplePolicy::EssThreshold(frac) = policy {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(Error::parameter(format!(
                    "resample threshold fraction {frac} must lie in (0,1]"
                )));
            }
        }
        let basis = Arc::new(SpectralBasis::build(config.a, config.b, config.truncation_j)?);
        let phi = phi0_coeffs(&basis, &config.phi0)?;
        let psi_beta = basis.psi_values(beta_hat);
        let decay: Vec<f64> = basis
            .sigma
            .iter()
            .map(|s| (-(config.alpha + s) * config.delta).exp())
            .collect();
        let u0 = basis.measure_coeffs(&config.u0)?;
        let mut rngs = Vec::with_capacity(m);
        let mut next_jump = Vec::with_capacity(m);
        for l in 0..m {
            let mut r = rng::stream(seed, rng::STREAM_PARTICLE_BASE + l as u64);
            next_jump.push(draw_arrival(0.0, lambda_hat, &mut r));
            rngs.push(r);
        }
        Ok(Self {
            basis,
            alpha: config.alpha,
            lambda_hat,
            delta: config.delta,
            h: config.h.clone(),
            phi,
            psi_beta,
            decay,
            t: 0.0,
            step_index: 0,
            coeffs: vec![u0; m],
            log_w: vec![0.0; m],
            next_jump,
            rngs,
            resample_rng: rng::stream(seed, rng::STREAM_RESAMPLE),
            policy,
            log_z_base: 0.0,
            resampled_steps: 0,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.coeffs.len()
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Effective sample size 1 / Σ ŵ² of the normalized weights.
    pub fn ess(&self) -> f64 {
        let lz = log_sum_exp(&self.log_w);
        let inv: f64 = self
            .log_w
            .iter()
            .map(|w| (2.0 * (w - lz)).exp())
            .sum();
        1.0 / inv
    }

    /// Running log normalizing constant log(Z_j) of the unnormalized filter.
    pub fn log_norm_const(&self) -> f64 {
        self.log_z_base + log_sum_exp(&self.log_w) - (self.coeffs.len() as f64).ln()
    }

    /// Weighted posterior mean of ⟨state, f⟩ for spectral coefficients f.
    pub fn posterior_functional(&self, f_coeffs: &[f64]) -> f64 {
        let lz = log_sum_exp(&self.log_w);
        let mut acc = 0.0;
        for (c, w) in self.coeffs.iter().zip(&self.log_w) {
            let s: f64 = c.iter().zip(f_coeffs).map(|(a, b)| a * b).sum();
            acc += (w - lz).exp() * s;
        }
        acc
    }

    /// Posterior mean of the observed functional ⟨U, φ₀⟩.
    pub fn posterior_mean(&self) -> f64 {
        self.posterior_functional(&self.phi)
    }

    /// Shift every log weight by a constant. The normalized ensemble and
    /// the ESS are unchanged; exposed for invariance checks.
    pub fn shift_log_weights(&mut self, c: f64) {
        for w in &mut self.log_w {
            *w += c;
        }
    }

    /// Spectral coefficients of particle `l`.
    pub fn particle_coeffs(&self, l: usize) -> &[f64] {
        &self.coeffs[l]
    }

    /// ⟨state, φ₀⟩ of every particle, in ensemble order.
    pub fn particle_functionals(&self) -> Vec<f64> {
        self.coeffs
            .iter()
            .map(|c| c.iter().zip(&self.phi).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Advance one observation interval and absorb observation `y`.
    pub fn step(&mut self, y: f64) -> FilterRecord {
        let t_next = (self.step_index + 1) as f64 * self.delta;
        let mut jumps = Vec::new();
        for l in 0..self.coeffs.len() {
            // this particle's jumps in (t, t_next]
            jumps.clear();
            while self.next_jump[l] <= t_next {
                let tau = self.next_jump[l];
                jumps.push(tau);
                self.next_jump[l] = draw_arrival(tau, self.lambda_hat, &mut self.rngs[l]);
            }
            let c = &mut self.coeffs[l];
            for j in 0..c.len() {
                c[j] *= self.decay[j];
            }
            // kicks enter at their exact value at t_next
            for &tau in &jumps {
                let lag = t_next - tau;
                let amp = (-self.alpha * lag).exp();
                let klag = lag.max(TAU_MIN);
                for j in 0..c.len() {
                    let ex = self.basis.sigma[j] * klag;
                    if ex > 800.0 {
                        break;
                    }
                    c[j] += amp * (-ex).exp() * self.psi_beta[j];
                }
            }
            let s: f64 = self.coeffs[l].iter().zip(&self.phi).map(|(a, b)| a * b).sum();
            self.log_w[l] += log_weight_increment(y, s, &self.h);
        }
        self.t = t_next;
        self.step_index += 1;
        let record = FilterRecord {
            j: self.step_index,
            t: self.t,
            posterior_mean: self.posterior_mean(),
            ess: self.ess(),
            log_norm_const: self.log_norm_const(),
        };
        if let ResamplePolicy::EssThreshold(frac) = self.policy {
            if record.ess < frac * self.coeffs.len() as f64 {
                self.resample();
            }
        }
        record
    }

    fn resample(&mut self) {
        let m = self.coeffs.len();
        let lz = log_sum_exp(&self.log_w);
        // fold the current mass into the running constant before equalizing
        self.log_z_base += lz - (m as f64).ln();
        let mut cum = Vec::with_capacity(m);
        let mut acc = 0.0;
        for w in &self.log_w {
            acc += (w - lz).exp();
            cum.push(acc);
        }
        let mut new_coeffs = Vec::with_capacity(m);
        let mut new_next = Vec::with_capacity(m);
        let mut new_rngs = Vec::with_capacity(m);
        for _ in 0..m {
            let u: f64 = self.resample_rng.random();
            let idx = cum.partition_point(|&c| c < u).min(m - 1);
            new_coeffs.push(self.coeffs[idx].clone());
            new_next.push(self.next_jump[idx]);
            new_rngs.push(self.rngs[idx].clone());
        }
        self.coeffs = new_coeffs;
        self.next_jump = new_next;
        self.rngs = new_rngs;
        self.log_w = vec![0.0; m];
        self.resampled_steps += 1;
    }
}

fn draw_arrival(now: f64, rate: f64, r: &mut ChaCha12Rng) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    now + Exp::new(rate).expect("positive rate").sample(r)
}

/// Run the filter over a full observation series.
pub fn run_filter(
    y: &ObservationSeries,
    config: &ModelConfig,
    theta_hat: (f64, f64),
    m: usize,
    policy: ResamplePolicy,
    seed: u64,
) -> Result<FilterOutput> {
    if (y.delta - config.delta).abs() > 1e-12 {
        return Err(Error::parameter(format!(
            "observation spacing {} does not match config delta {}",
            y.delta, config.delta
        )));
    }
    let mut pf = ParticleFilter::new(config, theta_hat, m, policy, seed)?;
    let mut records = Vec::with_capacity(y.len());
    for &obs in &y.y {
        records.push(pf.step(obs));
    }
    Ok(FilterOutput {
        records,
        n_particles: m,
        resampled_steps: pf.resampled_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{InitialMeasure, Phi0Spec};
    use crate::signal::SignalPath;
    use approx::assert_abs_diff_eq;

    fn config() -> ModelConfig {
        ModelConfig {
            a: 1.0,
            b: 2.0,
            alpha: 5.0,
            beta: 0.6,
            lambda: 10.0,
            m_bound: 20.0,
            delta: 0.01,
            h: HFunction::Linear { kappa: 3.0 },
            phi0: Phi0Spec::DiracAt(0.2),
            u0: InitialMeasure::zero(),
            truncation_j: 60,
            seed: 11,
            keep_truth: true,
        }
    }

    #[test]
    fn weight_increment_hand_values() {
        let h = HFunction::Linear { kappa: 1.0 };
        // y = 2, s = 1: 2*1 - 0.5 = 1.5
        assert_eq!(log_weight_increment(2.0, 1.0, &h), 1.5);
        // y = 0, s = 3: -4.5
        assert_eq!(log_weight_increment(0.0, 3.0, &h), -4.5);
        let h0 = HFunction::Linear { kappa: 0.0 };
        assert_eq!(log_weight_increment(5.0, 3.0, &h0), 0.0);
    }

    #[test]
    fn softmax_mean_hand_oracle() {
        // two particles with states s = (1, 3), log weights (0.2, -0.1):
        // mean = (e^0.2 * 1 + e^-0.1 * 3) / (e^0.2 + e^-0.1)
        let mut pf = ParticleFilter::new(
            &config(),
            (0.6, 10.0),
            2,
            ResamplePolicy::Off,
            1,
        )
        .unwrap();
        let phi = pf.phi.clone();
        let norm: f64 = phi.iter().map(|p| p * p).sum();
        pf.coeffs[0] = phi.iter().map(|p| p * 1.0 / norm).collect();
        pf.coeffs[1] = phi.iter().map(|p| p * 3.0 / norm).collect();
        pf.log_w = vec![0.2, -0.1];
        let expect = (0.2f64.exp() * 1.0 + (-0.1f64).exp() * 3.0)
            / (0.2f64.exp() + (-0.1f64).exp());
        assert_abs_diff_eq!(pf.posterior_mean(), expect, epsilon = 1e-12);

        let w = [0.2f64.exp(), (-0.1f64).exp()];
        let wn: Vec<f64> = w.iter().map(|x| x / (w[0] + w[1])).collect();
        let ess_expect = 1.0 / (wn[0] * wn[0] + wn[1] * wn[1]);
        assert_abs_diff_eq!(pf.ess(), ess_expect, epsilon = 1e-12);
    }

    #[test]
    fn weight_translation_invariance() {
        let mut pf =
            ParticleFilter::new(&config(), (0.6, 10.0), 4, ResamplePolicy::Off, 3).unwrap();
        pf.log_w = vec![0.5, -1.0, 2.0, 0.0];
        for (l, c) in pf.coeffs.iter_mut().enumerate() {
            c[0] = l as f64;
        }
        let before = (pf.posterior_mean(), pf.ess());
        for w in &mut pf.log_w {
            *w += 123.456;
        }
        let after = (pf.posterior_mean(), pf.ess());
        assert_abs_diff_eq!(before.0, after.0, epsilon = 1e-12);
        assert_abs_diff_eq!(before.1, after.1, epsilon = 1e-9);
    }

    #[test]
    fn particle_propagation_matches_lazy_signal() {
        // drive one particle 50 steps, then recompute its state from its
        // realized jump times with the lazy path evaluator
        let c = config();
        let mut pf =
            ParticleFilter::new(&c, (c.beta, c.lambda), 1, ResamplePolicy::Off, 17).unwrap();
        let mut jumps = Vec::new();
        let mut probe = rng::stream(17, rng::STREAM_PARTICLE_BASE);
        let mut t = draw_arrival(0.0, c.lambda, &mut probe);
        let horizon = 50.0 * c.delta;
        while t <= horizon {
            jumps.push(t);
            t = draw_arrival(t, c.lambda, &mut probe);
        }
        for _ in 0..50 {
            pf.step(0.0);
        }
        let sp = SignalPath::new(
            pf.basis.clone(),
            vec![0.0; c.truncation_j + 1],
            crate::signal::PoissonPath {
                rate: c.lambda,
                horizon,
                jump_times: jumps,
            },
            c.beta,
            c.alpha,
        )
        .unwrap();
        let want = sp.spectral_state(horizon);
        for (got, want) in pf.coeffs[0].iter().zip(&want) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn posterior_mean_within_particle_range() {
        let c = config();
        let mut r = rng::stream(c.seed, rng::STREAM_SIGNAL);
        let sp = SignalPath::sample(&c, 1.0, &mut r).unwrap();
        let obs =
            crate::observe::gen_observations(&sp, &c, 100, &mut rng::stream(c.seed, 1)).unwrap();
        let mut pf =
            ParticleFilter::new(&c, (0.6, 10.0), 32, ResamplePolicy::Off, 5).unwrap();
        for &y in &obs.y {
            let rec = pf.step(y);
            let states: Vec<f64> = pf
                .coeffs
                .iter()
                .map(|cf| cf.iter().zip(&pf.phi).map(|(a, b)| a * b).sum())
                .collect();
            let lo = states.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = states.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(rec.posterior_mean >= lo - 1e-12 && rec.posterior_mean <= hi + 1e-12);
            assert!(rec.ess >= 1.0 - 1e-9 && rec.ess <= 32.0 + 1e-9);
        }
    }

    #[test]
    fn degenerate_link_keeps_weights_flat() {
        let mut c = config();
        c.h = HFunction::Linear { kappa: 0.0 };
        let mut pf = ParticleFilter::new(&c, (0.6, 10.0), 8, ResamplePolicy::Off, 2).unwrap();
        for k in 0..20 {
            let rec = pf.step(k as f64);
            assert_abs_diff_eq!(rec.ess, 8.0, epsilon = 1e-9);
            assert_abs_diff_eq!(rec.log_norm_const, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_particle_filter() {
        let c = config();
        let mut pf = ParticleFilter::new(&c, (0.6, 10.0), 1, ResamplePolicy::Off, 9).unwrap();
        let rec = pf.step(1.0);
        assert_abs_diff_eq!(rec.ess, 1.0, epsilon = 1e-12);
        // with one particle the normalizing constant is its own weight
        let s: f64 = pf.coeffs[0].iter().zip(&pf.phi).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(
            rec.log_norm_const,
            log_weight_increment(1.0, s, &c.h),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_rate_particles_decay_deterministically() {
        let mut c = config();
        c.u0 = InitialMeasure::PointMasses(vec![(0.5, 1.0)]);
        let mut pf = ParticleFilter::new(&c, (0.6, 0.0), 3, ResamplePolicy::Off, 4).unwrap();
        let u0 = pf.coeffs[0].clone();
        let n_steps = 10;
        for _ in 0..n_steps {
            pf.step(0.0);
        }
        let t = n_steps as f64 * c.delta;
        for cf in &pf.coeffs {
            for (j, (got, init)) in cf.iter().zip(&u0).enumerate() {
                let want = init * (-(c.alpha + pf.basis.sigma[j]) * t).exp();
                assert_abs_diff_eq!(got, &want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn run_filter_is_deterministic_and_resampling_engages() {
        let c = config();
        let mut r = rng::stream(c.seed, rng::STREAM_SIGNAL);
        let sp = SignalPath::sample(&c, 1.5, &mut r).unwrap();
        let obs =
            crate::observe::gen_observations(&sp, &c, 150, &mut rng::stream(c.seed, 1)).unwrap();
        let a = run_filter(&obs, &c, (0.6, 10.0), 64, ResamplePolicy::Off, 21).unwrap();
        let b = run_filter(&obs, &c, (0.6, 10.0), 64, ResamplePolicy::Off, 21).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.posterior_mean.to_bits(), y.posterior_mean.to_bits());
            assert_eq!(x.log_norm_const.to_bits(), y.log_norm_const.to_bits());
        }
        assert_eq!(a.resampled_steps, 0);

        let res = run_filter(
            &obs,
            &c,
            (0.6, 10.0),
            64,
            ResamplePolicy::EssThreshold(1.0),
            21,
        )
        .unwrap();
        assert!(res.resampled_steps > 0);
        for rec in &res.records {
            assert!(rec.log_norm_const.is_finite());
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let c = config();
        assert!(ParticleFilter::new(&c, (1.5, 10.0), 4, ResamplePolicy::Off, 1).is_err());
        assert!(ParticleFilter::new(&c, (0.6, 30.0), 4, ResamplePolicy::Off, 1).is_err());
        assert!(ParticleFilter::new(&c, (0.6, 10.0), 0, ResamplePolicy::Off, 1).is_err());
        assert!(
            ParticleFilter::new(&c, (0.6, 10.0), 4, ResamplePolicy::EssThreshold(0.0), 1).is_err()
        );
        let obs = ObservationSeries {
            delta: 0.02,
            y: vec![0.0],
            truth_s: None,
        };
        assert!(run_filter(&obs, &c, (0.6, 10.0), 4, ResamplePolicy::Off, 1).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let c = config();
        let obs = ObservationSeries {
            delta: c.delta,
            y: vec![0.1, -0.2],
            truth_s: None,
        };
        let out = run_filter(&obs, &c, (0.6, 10.0), 4, ResamplePolicy::Off, 1).unwrap();
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("j,t,posterior_mean,ess,log_norm_const\n"));
        assert_eq!(s.lines().count(), 3);
    }
}
