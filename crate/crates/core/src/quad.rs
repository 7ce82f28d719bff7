//! Quadrature helpers: composite Simpson on uniform grids over [0,1] and a
//! small adaptive Simpson for one-off integrals.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default number of quadrature grid points (odd, so Simpson applies).
pub const DEFAULT_GRID_POINTS: usize = 201;

/// A real-valued function sampled on a uniform grid over [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    /// Wrap grid samples. The grid is uniform on [0,1]; an odd point count
    /// of at least 3 is required so composite Simpson applies directly.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 || values.len() % 2 == 0 {
            return Err(Error::parameter(format!(
                "grid function needs an odd number of points >= 3, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter("grid function contains non-finite values"));
        }
        Ok(Self { values })
    }

    /// Sample `f` at `n` uniform points on [0,1].
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = 1.0 / (n.saturating_sub(1).max(1)) as f64;
        Self::new((0..n).map(|i| f(i as f64 * h)).collect())
    }

    pub fn constant(n: usize, v: f64) -> Result<Self> {
        Self::new(vec![v; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees >= 3 points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Abscissa of grid node `i`.
    pub fn x(&self, i: usize) -> f64 {
        i as f64 / (self.values.len() - 1) as f64
    }

    /// Piecewise-linear interpolation at `x` in [0,1].
    pub fn interp(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::parameter(format!("x = {x} outside [0,1]")));
        }
        let n = self.values.len() - 1;
        let pos = x * n as f64;
        let i = (pos.floor() as usize).min(n - 1);
        let frac = pos - i as f64;
        Ok(self.values[i] * (1.0 - frac) + self.values[i + 1] * frac)
    }

    /// ∫₀¹ of this grid function by composite Simpson.
    pub fn integrate(&self) -> f64 {
        simpson(&self.values)
    }

    /// ∫₀¹ f(x)·w(x) dx where `w` is evaluated on the same grid.
    pub fn integrate_against(&self, w: impl Fn(f64) -> f64) -> f64 {
        let n = self.values.len() - 1;
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let coeff = simpson_coeff(i, n);
            acc += coeff * v * w(i as f64 * h);
        }
        acc * h / 3.0
    }
}

fn simpson_coeff(i: usize, n: usize) -> f64 {
    if i == 0 || i == n {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

/// Composite Simpson for uniform samples of [0,1]. Length must be odd >= 3.
pub fn simpson(values: &[f64]) -> f64 {
    debug_assert!(values.len() >= 3 && values.len() % 2 == 1);
    let n = values.len() - 1;
    let h = 1.0 / n as f64;
    let mut acc = 0.0;
    for (i, &v) in values.iter().enumerate() {
        acc += simpson_coeff(i, n) * v;
    }
    acc * h / 3.0
}

/// Adaptive Simpson on [lo, hi] with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
    let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    adapt_real(f, lo, hi, flo, fmid, fhi, whole, tol, 24)
}

#[allow(clippy::too_many_arguments)]
fn adapt_real(
    f: &impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    flo: f64,
    fmid: f64,
    fhi: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let mid = 0.5 * (lo + hi);
    let lmid = 0.5 * (lo + mid);
    let rmid = 0.5 * (mid + hi);
    let flm = f(lmid);
    let frm = f(rmid);
    let left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
    let right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adapt_real(f, lo, mid, flo, flm, fmid, left, tol / 2.0, depth - 1)
            + adapt_real(f, mid, hi, fmid, frm, fhi, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson for complex-valued integrands.
pub fn adaptive_simpson_complex(
    f: &impl Fn(f64) -> Complex64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Complex64 {
    let mid = 0.5 * (lo + hi);
    let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
    let whole = (flo + 4.0 * fmid + fhi) * ((hi - lo) / 6.0);
    adapt_complex(f, lo, hi, flo, fmid, fhi, whole, tol, 24)
}

#[allow(clippy::too_many_arguments)]
fn adapt_complex(
    f: &impl Fn(f64) -> Complex64,
    lo: f64,
    hi: f64,
    flo: Complex64,
    fmid: Complex64,
    fhi: Complex64,
    whole: Complex64,
    tol: f64,
    depth: u32,
) -> Complex64 {
    let mid = 0.5 * (lo + hi);
    let lmid = 0.5 * (lo + mid);
    let rmid = 0.5 * (mid + hi);
    let flm = f(lmid);
    let frm = f(rmid);
    let left = (flo + 4.0 * flm + fmid) * ((mid - lo) / 6.0);
    let right = (fmid + 4.0 * frm + fhi) * ((hi - mid) / 6.0);
    let delta = left + right - whole;
    if depth == 0 || delta.norm() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adapt_complex(f, lo, mid, flo, flm, fmid, left, tol / 2.0, depth - 1)
            + adapt_complex(f, mid, hi, fmid, frm, fhi, right, tol / 2.0, depth - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        // Simpson is exact through cubics.
        let g = GridFunction::from_fn(5, |x| x * x * x).unwrap();
        assert_relative_eq!(g.integrate(), 0.25, max_relative = 1e-14);
    }

    #[test]
    fn simpson_smooth_accuracy() {
        let g = GridFunction::from_fn(DEFAULT_GRID_POINTS, |x| (-2.0 * x).exp()).unwrap();
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        assert_relative_eq!(g.integrate(), exact, max_relative = 1e-9);
    }

    #[test]
    fn rejects_even_grid() {
        assert!(GridFunction::new(vec![0.0; 4]).is_err());
        assert!(GridFunction::new(vec![0.0; 2]).is_err());
    }

    #[test]
    fn interp_endpoints_and_midpoint() {
        let g = GridFunction::from_fn(101, |x| 3.0 * x).unwrap();
        assert_relative_eq!(g.interp(0.0).unwrap(), 0.0);
        assert_relative_eq!(g.interp(1.0).unwrap(), 3.0);
        assert_relative_eq!(g.interp(0.375).unwrap(), 1.125, max_relative = 1e-12);
        assert!(g.interp(1.5).is_err());
    }

    #[test]
    fn adaptive_matches_closed_form() {
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert_relative_eq!(v, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn adaptive_complex_unit_phase() {
        let v = adaptive_simpson_complex(&|x: f64| Complex64::new(0.0, x).exp(), 0.0, 1.0, 1e-12);
        // ∫₀¹ e^{ix} dx = sin(1) + i(1 - cos(1))
        assert_relative_eq!(v.re, 1.0f64.sin(), max_relative = 1e-10);
        assert_relative_eq!(v.im, 1.0 - 1.0f64.cos(), max_relative = 1e-10);
    }
}
