//! Discrete observation generation: Y_i = h(⟨U_{t_i}, φ₀⟩) + ε_i with
//! standard normal noise and t_i = iΔ, i = 1..n.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{HFunction, ModelConfig};
use crate::error::{Error, Result};
use crate::signal::{phi0_coeffs, SignalEvolver, SignalPath};

/// A generated observation series. `truth_s` keeps the latent functionals
/// ⟨U_{t_i}, φ₀⟩ for diagnostics when the config opts in.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub delta: f64,
    pub y: Vec<f64>,
    pub truth_s: Option<Vec<f64>>,
}

impl ObservationSeries {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Truncate to the first `n` observations (prefix series).
    pub fn prefix(&self, n: usize) -> ObservationSeries {
        ObservationSeries {
            delta: self.delta,
            y: self.y[..n.min(self.y.len())].to_vec(),
            truth_s: self
                .truth_s
                .as_ref()
                .map(|s| s[..n.min(s.len())].to_vec()),
        }
    }

    /// CSV dump with header `i,t,y[,s_true]`, full double precision.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        match &self.truth_s {
            Some(truth) => {
                writeln!(w, "i,t,y,s_true")?;
                for (i, (y, s)) in self.y.iter().zip(truth).enumerate() {
                    let t = (i + 1) as f64 * self.delta;
                    writeln!(w, "{},{:.16e},{:.16e},{:.16e}", i + 1, t, y, s)?;
                }
            }
            None => {
                writeln!(w, "i,t,y")?;
                for (i, y) in self.y.iter().enumerate() {
                    let t = (i + 1) as f64 * self.delta;
                    writeln!(w, "{},{:.16e},{:.16e}", i + 1, t, y)?;
                }
            }
        }
        Ok(())
    }
}

/// The link function h applied to a functional value.
pub fn apply_h(h: &HFunction, z: f64) -> f64 {
    h.apply(z)
}

/// Generate `n` observations along the signal path, drawing the noise from
/// `rng` (independent of the path's jump stream).
pub fn gen_observations(
    sp: &SignalPath,
    config: &ModelConfig,
    n: usize,
    rng: &mut impl Rng,
) -> Result<ObservationSeries> {
    if n < 1 {
        return Err(Error::parameter("need at least one observation"));
    }
    let horizon = n as f64 * config.delta;
    if sp.path.horizon + 1e-12 < horizon {
        return Err(Error::parameter(format!(
            "signal path horizon {} shorter than observation horizon {horizon}",
            sp.path.horizon
        )));
    }
    let phi = phi0_coeffs(&sp.basis, &config.phi0)?;
    let mut ev = SignalEvolver::new(sp.basis.clone(), sp.alpha, sp.beta, sp.u0_coeffs.clone());
    let mut y = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 1..=n {
        let t = i as f64 * config.delta;
        let jumps: Vec<f64> = sp.path.jumps_in(ev.time(), t).to_vec();
        ev.advance_to(t, &jumps);
        let s = ev.functional_coeffs(&phi);
        let eps: f64 = rng.sample(StandardNormal);
        y.push(apply_h(&config.h, s) + eps);
        truth.push(s);
    }
    Ok(ObservationSeries {
        delta: config.delta,
        y,
        truth_s: config.keep_truth.then_some(truth),
    })
}
