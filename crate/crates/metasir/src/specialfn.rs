//! Special-function kernel: the single Gauss hypergeometric shape used by
//! every moment formula, binomial coefficients at complex order, and the
//! regularized incomplete beta function.
//!
//! The only ₂F₁ shape needed is ₂F₁(n, n−δ; n−δ+1; −z) with δ ∈ (0,1) and
//! z ≥ 0, equal to (n−δ)∫₀¹ t^{n−δ−1}(1+zt)^{−n} dt. The raw power series
//! at −z diverges for z > 1, so evaluation goes through the Pfaff
//! transformation w = z/(1+z) which maps the argument into [0, 1).

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Truncation policy for the infinite sums.
#[derive(Debug, Clone, Copy)]
pub struct SeriesControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_terms: usize,
}

impl Default for SeriesControl {
    fn default() -> Self {
        SeriesControl {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_terms: 500,
        }
    }
}

impl SeriesControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) || self.max_terms < 1 {
            return Err(Error::Domain(format!(
                "SeriesControl requires rel_tol > 0, abs_tol > 0, max_terms >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// A wider budget for arguments where the Pfaff series converges slowly
    /// (w = z/(1+z) close to 1).
    pub fn wide() -> Self {
        SeriesControl {
            max_terms: 8192,
            ..Default::default()
        }
    }
}

/// ₂F₁(n, n−δ; n−δ+1; −z) for n > 0, δ ∈ (0,1), z ≥ 0.
///
/// After Pfaff, F = (1+z)^{−n} Σ_k [(n)_k / (n+1−δ)_k] w^k with
/// w = z/(1+z); all terms are positive and the ratio tends to w < 1.
pub fn gauss_2f1(n: f64, delta: f64, z: f64, ctrl: &SeriesControl) -> Result<f64> {
    ctrl.validate()?;
    if !(n > 0.0) {
        return Err(Error::Domain(format!("gauss_2f1 requires n > 0, got {n}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!(
            "gauss_2f1 requires delta in (0,1), got {delta}"
        )));
    }
    if !(z >= 0.0) {
        return Err(Error::Domain(format!("gauss_2f1 requires z >= 0, got {z}")));
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    let w = z / (1.0 + z);
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for k in 0..ctrl.max_terms {
        let kf = k as f64;
        term *= (n + kf) / (n + 1.0 - delta + kf) * w;
        sum += term;
        if term < ctrl.rel_tol * sum + ctrl.abs_tol {
            return Ok(sum * (1.0 + z).powf(-n));
        }
    }
    Err(Error::SeriesNonConvergence {
        max_terms: ctrl.max_terms,
        last_term: term,
    })
}

/// Quadrature evaluation of the integral representation
/// (n−δ)∫₀¹ t^{n−δ−1}(1+zt)^{−n} dt, the independent oracle for
/// [`gauss_2f1`]. The substitution t = e^{−y} spreads the boundary layer
/// at t → 0 (width (1/z)^{n−δ}, far below resolvable scale for large n·ln z)
/// over a smooth exponential tail:
/// F = (n−δ)∫₀^∞ e^{−(n−δ)y} (1 + z e^{−y})^{−n} dy.
pub fn gauss_2f1_quadrature(n: f64, delta: f64, z: f64) -> Result<f64> {
    if !(n > 0.0 && delta > 0.0 && delta < 1.0 && z >= 0.0) {
        return Err(Error::Domain(format!(
            "gauss_2f1_quadrature domain violation: n={n}, delta={delta}, z={z}"
        )));
    }
    let c = n - delta;
    crate::quad::integrate_semi_infinite(
        &|y: f64| c * (-c * y).exp() * (1.0 + z * (-y).exp()).powf(-n),
        0.0,
        1e-11,
        1e-250,
    )
}

/// Generalized binomial coefficient binom(b, n) = ∏_{k=0}^{n−1} (b−k)/(k+1)
/// at complex order b. Total function; exact for integer b ≥ n.
pub fn gen_binomial(b: Complex64, n: usize) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    for k in 0..n {
        acc *= (b - k as f64) / (k as f64 + 1.0);
    }
    acc
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::Domain(format!(
            "reg_inc_beta requires a > 0 and b > 0 (got a={a}, b={b})"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "reg_inc_beta requires x in [0,1], got {x}"
        )));
    }
    Ok(statrs::function::beta::beta_reg(a, b, x))
}
