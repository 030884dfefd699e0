//! Closed-form moment machinery for the conditional success probability.
//!
//! All moments reduce to two series V₁, V₂ (the interference Laplace
//! exponents of the exclusion-ball geometry at unit scale and at R^α
//! scale). The CCU moment is (1 + V₂)⁻¹; the CEU moments follow from the
//! dominant-interferer ring decomposition whose radial integral telescopes
//! to
//!
//!   M_{b,e1} = (1/(1−R²)) (1/(1+V₁) − R²/(1+V₂))            (ring ≥ 1 point)
//!   M_{b,e2} = (1/(1−R²)) (1/(1+V₁) − R²/(1+R²V₁))          (ring unconditioned)
//!
//! Mean local delays use the b = −1 exponents, which carry the (1−q)
//! argument in the hypergeometric factor and a negative sign: the delay is
//! finite exactly while every 1−|V| denominator stays positive, which
//! yields the critical-value equations solved by [`critical_activity`] and
//! [`critical_theta`].
//!
//! For imaginary orders b = jt with |t| large the binomial series suffers
//! catastrophic cancellation (terms peak near e^{ρ|t|}); the evaluator
//! switches to direct quadrature of the underlying exponent integral
//! V(b) = ∫₁^∞ (1 − g(w)^b) dw, whose integrand is uniformly bounded.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{NetworkParams, UserClass};
use crate::quad;
use crate::specialfn::{gauss_2f1, SeriesControl};

/// Order of a conditional-success-probability moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentOrder(pub Complex64);

impl MomentOrder {
    pub fn real(b: f64) -> Self {
        MomentOrder(Complex64::new(b, 0.0))
    }
    /// b = j·t, the Gil-Pelaez order.
    pub fn imaginary(t: f64) -> Self {
        MomentOrder(Complex64::new(0.0, t))
    }
}

/// Marginal transmit-activity model with the reserved-band thinning hooks.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ActivityModel {
    /// Marginal probability that an interfering BS transmits in a slot.
    pub q: f64,
    pub thinning: ThinningMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ThinningMode {
    /// Interferers keep density q·λ.
    None,
    /// Band reserved for cell-center traffic: effective activity q·R².
    ReservedCellCenter,
    /// Band reserved for cell-edge traffic: effective activity q·(1−R²).
    ReservedCellEdge,
}

impl ActivityModel {
    pub fn fixed(q: f64) -> Self {
        ActivityModel {
            q,
            thinning: ThinningMode::None,
        }
    }

    pub fn effective_q(&self, params: &NetworkParams) -> f64 {
        let rr = params.ratio_threshold * params.ratio_threshold;
        let factor = match self.thinning {
            ThinningMode::None => 1.0,
            ThinningMode::ReservedCellCenter => rr,
            ThinningMode::ReservedCellEdge => 1.0 - rr,
        };
        self.q * factor
    }

    pub fn validate(&self, params: &NetworkParams) -> Result<()> {
        let qe = self.effective_q(params);
        if !(0.0..=1.0).contains(&self.q) || !(0.0..=1.0).contains(&qe) {
            return Err(Error::Domain(format!(
                "activity must give effective q in [0,1], got q={} effective {qe}",
                self.q
            )));
        }
        Ok(())
    }
}

/// A computed moment together with truncation diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct MomentResult {
    pub value: Complex64,
    pub terms_used: usize,
    pub truncation_error_bound: f64,
}

/// Which exclusion scale the V series carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerScale {
    /// V₁: exclusion radius equal to the serving distance.
    Unit,
    /// V₂: exclusion radius r/R, i.e. θ scaled by R^α.
    RatioAlpha,
}

fn scale_factor(scale: InnerScale, params: &NetworkParams) -> f64 {
    match scale {
        InnerScale::Unit => 1.0,
        InnerScale::RatioAlpha => params.ratio_alpha(),
    }
}

/// Interference exponent series
/// V(θ,b) = δ Σ_{n≥1} binom(b,n)(−1)^{n+1} (qθs)ⁿ/(n−δ) ₂F₁(n, n−δ; n−δ+1; −θs).
///
/// The sum starts at n = 1: the binomial expansion of 1 − (·)^b has no
/// constant term. For b = 1 the series reduces to the single closed-form
/// term qθsδ/(1−δ) ₂F₁(1, 1−δ; 2−δ; −θs).
pub fn v_series(
    theta: f64,
    b: Complex64,
    q: f64,
    scale: InnerScale,
    params: &NetworkParams,
    ctrl: &SeriesControl,
) -> Result<MomentResult> {
    let s = scale_factor(scale, params);
    v_value(theta * s, params.delta(), q, b, ctrl)
}

/// Cancellation threshold for the series route: terms peak near
/// exp(ρ·|Im b|), so beyond this the direct sum loses all f64 precision.
const SERIES_LOG_PEAK_LIMIT: f64 = 23.0;

pub(crate) fn v_value(
    theta_s: f64,
    delta: f64,
    q: f64,
    b: Complex64,
    ctrl: &SeriesControl,
) -> Result<MomentResult> {
    ctrl.validate()?;
    if !(theta_s >= 0.0) {
        return Err(Error::Domain(format!("theta must be >= 0, got {theta_s}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("q must be in [0,1], got {q}")));
    }
    if q == 0.0 || theta_s == 0.0 || b.norm() == 0.0 {
        return Ok(MomentResult {
            value: Complex64::new(0.0, 0.0),
            terms_used: 0,
            truncation_error_bound: 0.0,
        });
    }
    let rho = q * theta_s / (1.0 + theta_s);
    let is_small_int = b.im == 0.0 && b.re > 0.0 && b.re.fract() == 0.0 && b.re < 64.0;
    if !is_small_int && b.im.abs() * rho > SERIES_LOG_PEAK_LIMIT {
        return v_integral(theta_s, delta, q, b);
    }
    v_series_sum(theta_s, delta, q, b, ctrl)
}

fn v_series_sum(
    theta_s: f64,
    delta: f64,
    q: f64,
    b: Complex64,
    ctrl: &SeriesControl,
) -> Result<MomentResult> {
    let ln_rho = (q * theta_s).ln() - (1.0 + theta_s).ln();
    let mut binom = Complex64::new(1.0, 0.0);
    let mut sum = Complex64::new(0.0, 0.0);
    let mut max_term = 0.0_f64;
    let mut quiet = 0usize;
    let n_min = b.norm().ceil() as usize + 3;
    let mut last = f64::INFINITY;
    for n in 1..=ctrl.max_terms {
        let nf = n as f64;
        binom *= (b - (nf - 1.0)) / nf;
        if binom.norm() == 0.0 {
            // integer order: the series terminates exactly
            return Ok(MomentResult {
                value: sum,
                terms_used: n - 1,
                truncation_error_bound: max_term * 1e-15,
            });
        }
        // (qθs)ⁿ ₂F₁(n,·;·;−θs) = e^{n ln ρ} · S_n with S_n the Pfaff sum in [1, 1+θs]
        let pfaff = pfaff_sum(nf, delta, theta_s, ctrl)?;
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        let term = binom * sign * delta / (nf - delta) * (nf * ln_rho).exp() * pfaff;
        sum += term;
        let t = term.norm();
        max_term = max_term.max(t);
        if t < ctrl.rel_tol * sum.norm() + ctrl.abs_tol && n >= n_min {
            quiet += 1;
            if quiet >= 3 {
                return Ok(MomentResult {
                    value: sum,
                    terms_used: n,
                    truncation_error_bound: t + max_term * 1e-15,
                });
            }
        } else {
            quiet = 0;
        }
        last = t;
    }
    Err(Error::SeriesNonConvergence {
        max_terms: ctrl.max_terms,
        last_term: last,
    })
}

/// Pfaff-transformed hypergeometric sum S = (1+z)^n ₂F₁(n, n−δ; n−δ+1; −z),
/// a positive sum bounded by 1+z.
fn pfaff_sum(n: f64, delta: f64, z: f64, ctrl: &SeriesControl) -> Result<f64> {
    if z == 0.0 {
        return Ok(1.0);
    }
    let w = z / (1.0 + z);
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for k in 0..ctrl.max_terms.max(4096) {
        let kf = k as f64;
        term *= (n + kf) / (n + 1.0 - delta + kf) * w;
        sum += term;
        if term < ctrl.rel_tol * sum + ctrl.abs_tol {
            return Ok(sum);
        }
    }
    Err(Error::SeriesNonConvergence {
        max_terms: ctrl.max_terms,
        last_term: term,
    })
}

/// Direct quadrature of V(b) = ∫₁^∞ (1 − g(w)^b) dw with
/// g(w) = 1 − qθs·v/(1 + θs·v), v = w^{−1/δ}. The integrand has modulus
/// ≤ 2 for purely imaginary b, so no cancellation occurs; the [1, W]
/// stretch is split at equal phase increments of b·ln g to keep each
/// panel mildly oscillatory.
fn v_integral(theta_s: f64, delta: f64, q: f64, b: Complex64) -> Result<MomentResult> {
    let g = |w: f64| -> f64 {
        let v = w.powf(-1.0 / delta);
        1.0 - q * theta_s * v / (1.0 + theta_s * v)
    };
    let f = |w: f64| -> Complex64 {
        let gv = g(w);
        let z = b * gv.ln();
        if z.norm() < 1e-4 {
            // 1 − e^z by series, avoiding cancellation in the far tail
            -(z + z * z * 0.5 + z * z * z / 6.0)
        } else {
            Complex64::new(1.0, 0.0) - z.exp()
        }
    };
    let bn = b.norm().max(1.0);
    // beyond W the exponent |b ln g| ≤ 0.1 and the integrand is smooth
    let w_max = (10.0 * bn * q * theta_s).powf(delta).max(4.0);
    let ln_g1 = g(1.0).ln(); // most negative value of ln g
    let n_seg = ((b.im.abs() * ln_g1.abs() / std::f64::consts::PI).ceil() as usize + 1).min(4000);
    let mut total = Complex64::new(0.0, 0.0);
    let mut lo = 1.0_f64;
    for k in 1..=n_seg {
        let hi = if k == n_seg {
            w_max
        } else {
            // w at which ln g has shrunk to (1 − k/n) of its value at 1
            let target = (ln_g1 * (1.0 - k as f64 / n_seg as f64)).exp();
            let v = (1.0 - target) / (theta_s * (target - (1.0 - q)).max(1e-300));
            v.powf(-delta).clamp(lo, w_max)
        };
        if hi > lo {
            total += quad::integrate(&f, lo, hi, 1e-8, 1e-11)?;
            lo = hi;
        }
    }
    // tail: substitute w = W/u², u ∈ (0,1]
    let tail = quad::integrate(
        &|u: f64| f(w_max / (u * u)) * (2.0 * w_max / (u * u * u)),
        1e-9,
        1.0,
        1e-8,
        1e-11,
    )?;
    Ok(MomentResult {
        value: total + tail,
        terms_used: 0,
        truncation_error_bound: 1e-8 * (total + tail).norm(),
    })
}

fn moment_from_value(value: Complex64, v: &MomentResult) -> MomentResult {
    MomentResult {
        value,
        terms_used: v.terms_used,
        truncation_error_bound: v.truncation_error_bound,
    }
}

/// b-th moment of the conditional success probability for a CCU:
/// M_{b,c} = (1 + V₂(θ, b))⁻¹.
pub fn moment_ccu(
    b: MomentOrder,
    params: &NetworkParams,
    activity: &ActivityModel,
    ctrl: &SeriesControl,
) -> Result<MomentResult> {
    params.validate()?;
    activity.validate(params)?;
    let q = activity.effective_q(params);
    let v2 = v_series(params.sir_threshold, b.0, q, InnerScale::RatioAlpha, params, ctrl)?;
    Ok(moment_from_value((Complex64::new(1.0, 0.0) + v2.value).inv(), &v2))
}

/// CEU moment conditioned on at least one BS in the dominant-interferer
/// ring [r_e, r_e/R): the radial integral of the ring-conditioned PGFL
/// telescopes to (1/(1−R²))(1/(1+V₁) − R²/(1+V₂)).
pub fn moment_ceu_dominant_active(
    b: MomentOrder,
    params: &NetworkParams,
    activity: &ActivityModel,
    ctrl: &SeriesControl,
) -> Result<MomentResult> {
    params.validate()?;
    activity.validate(params)?;
    let q = activity.effective_q(params);
    let theta = params.sir_threshold;
    let v1 = v_series(theta, b.0, q, InnerScale::Unit, params, ctrl)?;
    let v2 = v_series(theta, b.0, q, InnerScale::RatioAlpha, params, ctrl)?;
    let rr = params.ratio_threshold * params.ratio_threshold;
    let one = Complex64::new(1.0, 0.0);
    let value = ((one + v1.value).inv() - rr * (one + v2.value).inv()) / (1.0 - rr);
    check_real_moment(b, value, "moment_ceu_dominant_active")?;
    Ok(MomentResult {
        value,
        terms_used: v1.terms_used + v2.terms_used,
        truncation_error_bound: v1.truncation_error_bound + v2.truncation_error_bound,
    })
}

/// CEU moment with the ring conditioning relaxed (dominant interferer
/// silent): (1/(1−R²))(1/(1+V₁) − R²/(1+R²V₁)).
pub fn moment_ceu_dominant_inactive(
    b: MomentOrder,
    params: &NetworkParams,
    activity: &ActivityModel,
    ctrl: &SeriesControl,
) -> Result<MomentResult> {
    params.validate()?;
    activity.validate(params)?;
    let q = activity.effective_q(params);
    let v1 = v_series(params.sir_threshold, b.0, q, InnerScale::Unit, params, ctrl)?;
    let rr = params.ratio_threshold * params.ratio_threshold;
    let one = Complex64::new(1.0, 0.0);
    let value = ((one + v1.value).inv() - rr * (one + rr * v1.value).inv()) / (1.0 - rr);
    check_real_moment(b, value, "moment_ceu_dominant_inactive")?;
    Ok(moment_from_value(value, &v1))
}

/// Unconditional CEU moment.
///
/// A cell-edge user has, by definition, at least one BS in the ring
/// [r_e, r_e/R) — its dominant interferer — so the ring-conditioned
/// moment of [`moment_ceu_dominant_active`] already is the unconditional
/// CEU moment, and it is the quantity the simulator reproduces. The
/// printed convex mixture q·M_{b,e1} + (1−q)·M_{b,e2} is kept available
/// in [`moment_ceu_mixture`] for comparison; it coincides with this value
/// at q ∈ {0, 1} and drifts a few percent in between.
pub fn moment_ceu(
    b: MomentOrder,
    params: &NetworkParams,
    activity: &ActivityModel,
    ctrl: &SeriesControl,
) -> Result<MomentResult> {
    moment_ceu_dominant_active(b, params, activity, ctrl)
}

/// The printed mixture q·M_{b,e1} + (1−q)·M_{b,e2} (weight = effective
/// activity of the dominant interferer).
pub fn moment_ceu_mixture(
    b: MomentOrder,
    params: &NetworkParams,
    activity: &ActivityModel,
    ctrl: &SeriesControl,
) -> Result<MomentResult> {
    let q = activity.effective_q(params);
    let e1 = moment_ceu_dominant_active(b, params, activity, ctrl)?;
    let e2 = moment_ceu_dominant_inactive(b, params, activity, ctrl)?;
    Ok(MomentResult {
        value: q * e1.value + (1.0 - q) * e2.value,
        terms_used: e1.terms_used + e2.terms_used,
        truncation_error_bound: e1.truncation_error_bound + e2.truncation_error_bound,
    })
}

fn check_real_moment(b: MomentOrder, value: Complex64, what: &str) -> Result<()> {
    if b.0.im == 0.0 && b.0.re > 0.0 {
        if value.re < -1e-9 || value.re > 1.0 + 1e-9 || value.im.abs() > 1e-9 {
            return Err(Error::InternalConsistency(format!(
                "{what}: real-order moment out of (0,1]: {value}"
            )));
        }
    }
    Ok(())
}

/// Direct PGFL-route cross-check for the CCU moment: outer quadrature of
/// the serving-distance law against the numerically integrated exponent,
/// bypassing the binomial series entirely.
pub fn moment_ccu_quadrature(
    b: f64,
    params: &NetworkParams,
    activity: &ActivityModel,
) -> Result<f64> {
    params.validate()?;
    activity.validate(params)?;
    let q = activity.effective_q(params);
    if q == 0.0 {
        return Ok(1.0);
    }
    let theta = params.sir_threshold;
    let alpha = params.pathloss_exponent;
    let lam = params.bs_density;
    let ratio = params.ratio_threshold;
    // PGFL exponent E(r) = 2πλ ∫_{r/R}^∞ (1 − A(x)^b) x dx, mapped by
    // x = (r/R) e^y so every scale of the tail is equally resolved; the
    // integrand decays like e^{−(α−2)y}, cut where it is below 1e-17.
    let exponent = |r: f64| -> Result<f64> {
        let r0 = r / ratio;
        let y_max = 40.0 / (alpha - 2.0);
        let inner = quad::integrate_real(
            &|y: f64| {
                // a = 1 − u with u = qθs/(e^{αy} + θs); keep 1 − a^b as
                // −expm1(b·ln1p(−u)) so the e^{−αy} tail is not lost to
                // cancellation against 1
                let ts = theta * ratio.powf(alpha);
                let u = q * ts / ((alpha * y).exp() + ts);
                -(b * (-u).ln_1p()).exp_m1() * r0 * r0 * (2.0 * y).exp()
            },
            0.0,
            y_max,
            1e-9,
            1e-16,
        )?;
        Ok(2.0 * std::f64::consts::PI * lam * inner)
    };
    let integrand = |r: f64| -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let pdf = crate::geometry::link_distance_pdf(r, params, UserClass::CellCenter);
        if pdf == 0.0 {
            return 0.0;
        }
        match exponent(r) {
            Ok(e) => pdf * (-e).exp(),
            Err(_) => f64::NAN,
        }
    };
    let v = quad::integrate_semi_infinite(&integrand, 0.0, 1e-9, 1e-12)?;
    if !v.is_finite() {
        return Err(Error::QuadratureNonConvergence {
            achieved: f64::INFINITY,
            requested: 1e-9,
        });
    }
    Ok(v)
}

/// The delay-divergence driver term |V(θ,−1)| at scale s:
/// T(s) = q δ θ s/(1−δ) ₂F₁(1, 1−δ; 2−δ; −(1−q)θs).
fn delay_term(theta_s: f64, delta: f64, q: f64, ctrl: &SeriesControl) -> Result<f64> {
    if q == 0.0 || theta_s == 0.0 {
        return Ok(0.0);
    }
    let f = gauss_2f1(1.0, delta, (1.0 - q) * theta_s, ctrl)?;
    Ok(q * delta * theta_s / (1.0 - delta) * f)
}

/// Mean local delay M_{−1}. Returns +∞ past the phase transition.
pub fn mean_local_delay(
    params: &NetworkParams,
    activity: &ActivityModel,
    class: UserClass,
) -> Result<f64> {
    params.validate()?;
    activity.validate(params)?;
    let q = activity.effective_q(params);
    if q == 0.0 {
        return Ok(1.0);
    }
    let ctrl = SeriesControl::wide();
    let delta = params.delta();
    let theta = params.sir_threshold;
    let t2 = delay_term(theta * params.ratio_alpha(), delta, q, &ctrl)?;
    match class {
        UserClass::CellCenter => {
            if t2 >= 1.0 {
                Ok(f64::INFINITY)
            } else {
                Ok(1.0 / (1.0 - t2))
            }
        }
        UserClass::CellEdge => {
            let t1 = delay_term(theta, delta, q, &ctrl)?;
            if t1 >= 1.0 {
                return Ok(f64::INFINITY);
            }
            let rr = params.ratio_threshold * params.ratio_threshold;
            Ok((1.0 / (1.0 - t1) - rr / (1.0 - t2)) / (1.0 - rr))
        }
    }
}

/// Outcome of a critical-value search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criticality {
    /// Smallest parameter value at which the mean local delay diverges.
    Transition(f64),
    /// The delay stays finite over the whole admissible range.
    FiniteEverywhere,
}

const ROOT_TOL: f64 = 1e-6;

fn class_scale(params: &NetworkParams, class: UserClass) -> f64 {
    match class {
        UserClass::CellCenter => params.ratio_alpha(),
        UserClass::CellEdge => 1.0,
    }
}

/// Critical active probability q*: the root of
/// q θ δ s/(1−δ) ₂F₁(1, 1−δ; 2−δ; −(1−q)θs) = 1 on (0, 1], where
/// s = R^α for a CCU and 1 for a CEU. The left side is increasing in q.
pub fn critical_activity(params: &NetworkParams, class: UserClass) -> Result<Criticality> {
    params.validate()?;
    let ctrl = SeriesControl::wide();
    let delta = params.delta();
    let theta_s = params.sir_threshold * class_scale(params, class);
    let h = |q: f64| delay_term(theta_s, delta, q, &ctrl);
    if h(1.0)? < 1.0 {
        return Ok(Criticality::FiniteEverywhere);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if h(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Criticality::Transition(0.5 * (lo + hi)))
}

/// Critical SIR threshold θ* at fixed q (linear scale); the same equation
/// solved in θ, whose left side is also increasing.
pub fn critical_theta(params: &NetworkParams, q: f64, class: UserClass) -> Result<Criticality> {
    params.validate()?;
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("q must be in [0,1], got {q}")));
    }
    if q == 0.0 {
        return Ok(Criticality::FiniteEverywhere);
    }
    let ctrl = SeriesControl::wide();
    let delta = params.delta();
    let s = class_scale(params, class);
    let h = |theta: f64| delay_term(theta * s, delta, q, &ctrl);
    let mut hi = 1.0_f64;
    while h(hi)? < 1.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(Criticality::FiniteEverywhere);
        }
    }
    let mut lo = 0.0_f64;
    while (hi - lo) > ROOT_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if h(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Criticality::Transition(0.5 * (lo + hi)))
}

/// Precomputed per-order-independent series coefficients so that the
/// Gil-Pelaez inversion can evaluate M_{jt} for many t cheaply: only the
/// binomial factor depends on the order.
struct VCoefficients {
    theta_s: f64,
    delta: f64,
    q: f64,
    rho: f64,
    /// ln |a_n| for a_n = (−1)^{n+1} δ e^{n ln ρ} S_n/(n−δ), n starting at 1,
    /// stored in log form because the binomial factor it multiplies grows
    /// like e^{ρ|b|} while a_n itself can underflow long before the products
    /// become negligible.
    ln_abs: Vec<f64>,
}

impl VCoefficients {
    fn build(theta_s: f64, delta: f64, q: f64, ctrl: &SeriesControl) -> Result<Self> {
        let rho = if theta_s > 0.0 {
            q * theta_s / (1.0 + theta_s)
        } else {
            0.0
        };
        let mut ln_abs = Vec::new();
        if q > 0.0 && theta_s > 0.0 {
            // The table must cover every order the series route accepts:
            // |b| up to t_max = LIMIT/ρ. The n-th term magnitude is
            // |binom(b,n)| e^{ln|a_n|}; terms peak near n ≈ ρ|b| ≤ LIMIT and
            // decay monotonically beyond, so extend until the bound at
            // |b| = t_max has dropped below 1e-20 of the peak scale.
            let t_max = SERIES_LOG_PEAK_LIMIT / rho;
            let mut ln_binom_at_tmax = 0.0;
            for n in 1..=ctrl.max_terms.max(2048).max(400) {
                let nf = n as f64;
                let s_n = pfaff_sum(nf, delta, theta_s, ctrl)?;
                let la = delta.ln() + nf * rho.ln() - (nf - delta).ln() + s_n.ln();
                ln_abs.push(la);
                // |binom(jt_max, n)| ≈ ∏ √(t_max² + k²)/(k+1)
                let k = nf - 1.0;
                ln_binom_at_tmax += 0.5 * (t_max * t_max + k * k).ln() - nf.ln();
                if nf > rho * t_max + 8.0 && la + ln_binom_at_tmax < -46.0 {
                    break;
                }
            }
        }
        Ok(VCoefficients {
            theta_s,
            delta,
            q,
            rho,
            ln_abs,
        })
    }

    fn eval(&self, b: Complex64) -> Result<Complex64> {
        if self.q == 0.0 || self.theta_s == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        if b.norm() * self.rho > SERIES_LOG_PEAK_LIMIT {
            return v_integral(self.theta_s, self.delta, self.q, b).map(|m| m.value);
        }
        // Scaled binomial recursion: binom(b,n) = binom_dir · e^{scale},
        // renormalized whenever the direction factor leaves [1e-100, 1e100].
        let mut binom = Complex64::new(1.0, 0.0);
        let mut scale = 0.0f64;
        let mut sum = Complex64::new(0.0, 0.0);
        // Terms peak near n ≈ ρ|b| and decay monotonically beyond
        // (|T_{n+1}/T_n| ≈ ρ√(n²+|b|²)/(n+1) < 1 there), so a streak of
        // negligible terms past the peak certifies convergence.
        let n_min = (self.rho * b.norm()).ceil() as usize + 8;
        let mut quiet = 0usize;
        for (i, &la) in self.ln_abs.iter().enumerate() {
            let nf = (i + 1) as f64;
            binom *= (b - (nf - 1.0)) / nf;
            let mag = binom.norm();
            if mag > 1e100 {
                binom *= 1e-100;
                scale += 100.0 * std::f64::consts::LN_10;
            } else if mag < 1e-100 && mag > 0.0 {
                binom *= 1e100;
                scale -= 100.0 * std::f64::consts::LN_10;
            }
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let term = binom * (sign * (la + scale).exp());
            sum += term;
            if term.norm() < 1e-12 * sum.norm() + 1e-16 && i + 1 >= n_min {
                quiet += 1;
                if quiet >= 3 {
                    return Ok(sum);
                }
            } else {
                quiet = 0;
            }
        }
        // coefficient table exhausted before the terms settled
        v_integral(self.theta_s, self.delta, self.q, b).map(|m| m.value)
    }
}

/// Class-specific evaluator of t ↦ M_{jt} used by the Gil-Pelaez
/// inversion. Immutable after construction, safe to share across workers.
pub struct MomentEvaluator {
    class: UserClass,
    rr: f64,
    q: f64,
    delta: f64,
    v1: VCoefficients,
    v2: VCoefficients,
}

impl MomentEvaluator {
    pub fn new(
        params: &NetworkParams,
        activity: &ActivityModel,
        class: UserClass,
        ctrl: &SeriesControl,
    ) -> Result<Self> {
        params.validate()?;
        activity.validate(params)?;
        let q = activity.effective_q(params);
        let delta = params.delta();
        let theta = params.sir_threshold;
        Ok(MomentEvaluator {
            class,
            rr: params.ratio_threshold * params.ratio_threshold,
            q,
            delta,
            v1: VCoefficients::build(theta, delta, q, ctrl)?,
            v2: VCoefficients::build(theta * params.ratio_alpha(), delta, q, ctrl)?,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Largest |Im b| the cached binomial series can reach before
    /// cancellation sets in; beyond it every evaluation pays for direct
    /// quadrature of the exponent integral.
    pub fn series_t_limit(&self) -> f64 {
        let rho = match self.class {
            UserClass::CellCenter => self.v2.rho,
            UserClass::CellEdge => self.v1.rho.max(self.v2.rho),
        };
        if rho == 0.0 {
            f64::INFINITY
        } else {
            SERIES_LOG_PEAK_LIMIT / rho
        }
    }

    /// Smallest interference strength qθs over the exclusion scales this
    /// class combines; 1/(qθs·t) controls the error of the large-t
    /// moment asymptotic M_{jt} ≈ K (jt)^{−δ}.
    pub fn min_interference_scale(&self) -> f64 {
        // θs₂ ≤ θs₁ always (R < 1)
        self.q * self.v2.theta_s
    }

    /// M_b at arbitrary complex order.
    pub fn moment(&self, b: Complex64) -> Result<Complex64> {
        if self.q == 0.0 {
            return Ok(Complex64::new(1.0, 0.0));
        }
        let one = Complex64::new(1.0, 0.0);
        match self.class {
            UserClass::CellCenter => {
                let v2 = self.v2.eval(b)?;
                Ok((one + v2).inv())
            }
            UserClass::CellEdge => {
                let v1 = self.v1.eval(b)?;
                let v2 = self.v2.eval(b)?;
                Ok(((one + v1).inv() - self.rr * (one + v2).inv()) / (1.0 - self.rr))
            }
        }
    }

    /// M_{jt}, the characteristic-type function fed to Gil-Pelaez.
    pub fn moment_imaginary(&self, t: f64) -> Result<Complex64> {
        self.moment(Complex64::new(0.0, t))
    }
}
