//! The meta distribution F̄(x) = P(P > x) of the conditional success
//! probability, recovered from the moment sequence two ways:
//!
//! * exact Gil-Pelaez inversion
//!   F̄(x) = 1/2 + (1/π) ∫₀^∞ Im(e^{−jt ln x} M_{jt}) / t dt,
//!   computed by Longman's method: the axis is cut into half-period
//!   segments of the e^{−jt ln x} factor, each integrated adaptively, and
//!   the alternating segment series is summed with repeated-averaging
//!   (Euler) acceleration so the slowly decaying oscillatory tail
//!   converges in a few dozen segments;
//! * the two-moment beta approximation matching M₁ and M₂.
//!
//! The same curves drive the traffic fixed point: with per-user arrival
//! rate ξ and cell load N, the marginal BS activity solves
//! q = E[min(1, Nξ/P)] where P follows the meta distribution at activity
//! q. [`fixed_point_solve`] iterates this map (damped or as the plain
//! temporal recursion) and reports whether the system saturates.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{cell_load_pmf, NetworkParams, UserClass};
use crate::moments::{moment_ccu, moment_ceu, ActivityModel, MomentEvaluator, MomentOrder};
use crate::quad;
use crate::specialfn::{reg_inc_beta, SeriesControl};

/// How a meta-distribution curve is produced from the moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InversionMethod {
    GilPelaez,
    BetaApprox,
}

/// A CCDF curve x ↦ F̄(x) on [0, 1], stored at ascending reliability
/// thresholds with the exact boundary points (0, 1) and (1, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct MetaCurve {
    xs: Vec<f64>,
    values: Vec<f64>,
}

impl MetaCurve {
    /// Builds a curve from interior samples, clamping to [0, 1], enforcing
    /// monotonicity and attaching the boundary points.
    pub fn from_samples(xs: &[f64], values: &[f64]) -> Result<MetaCurve> {
        if xs.len() != values.len() {
            return Err(Error::Domain("xs and values must have equal length".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) || xs.iter().any(|&x| !(0.0 < x && x < 1.0)) {
            return Err(Error::Domain(
                "curve grid must be strictly increasing inside (0,1)".into(),
            ));
        }
        let mut out_x = Vec::with_capacity(xs.len() + 2);
        let mut out_v = Vec::with_capacity(xs.len() + 2);
        out_x.push(0.0);
        out_v.push(1.0);
        let mut prev = 1.0_f64;
        for (&x, &v) in xs.iter().zip(values) {
            if !v.is_finite() {
                return Err(Error::Evaluation(format!("non-finite ccdf value at x={x}")));
            }
            let v = v.clamp(0.0, 1.0).min(prev);
            out_x.push(x);
            out_v.push(v);
            prev = v;
        }
        out_x.push(1.0);
        out_v.push(0.0);
        Ok(MetaCurve { xs: out_x, values: out_v })
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.values.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear interpolation of F̄ at x ∈ [0, 1].
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if x >= 1.0 {
            return 0.0;
        }
        let i = self.xs.partition_point(|&g| g <= x);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }

    /// Trapezoidal ∫₀¹ F̄(x) dx, which recovers the mean success
    /// probability M₁.
    pub fn integral(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, v)| 0.5 * (v[0] + v[1]) * (x[1] - x[0]))
            .sum()
    }

    /// Largest pointwise gap against another curve, measured on the union
    /// of both grids.
    pub fn sup_gap(&self, other: &MetaCurve) -> f64 {
        self.xs
            .iter()
            .chain(other.xs.iter())
            .map(|&x| (self.eval(x) - other.eval(x)).abs())
            .fold(0.0, f64::max)
    }

    /// Serializes as `x,ccdf` CSV.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,ccdf")?;
        for (x, v) in self.points() {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    }

    /// Parses the `x,ccdf` CSV format produced by [`MetaCurve::write_csv`].
    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<MetaCurve> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with('x')) {
                continue;
            }
            let (a, b) = line.split_once(',').ok_or_else(|| {
                Error::Config(format!("curve CSV line {} is not `x,ccdf`: {line}", i + 1))
            })?;
            let x: f64 = a.trim().parse().map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
            let v: f64 = b.trim().parse().map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
            xs.push(x);
            vs.push(v);
        }
        if xs.first() != Some(&0.0) || xs.last() != Some(&1.0) {
            return Err(Error::Config("curve CSV must span [0,1]".into()));
        }
        MetaCurve::from_samples(&xs[1..xs.len() - 1], &vs[1..vs.len() - 1])
    }
}

/// Default reliability grid: 0.01, 0.02, …, 0.99.
pub fn default_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

const GP_ABS_TOL: f64 = 2e-5;
const GP_MAX_SEGMENTS: usize = 600;
const GP_EULER_WINDOW: usize = 24;

/// Sums alternating half-period segments of an oscillatory integrand
/// starting at `t_start`, with Euler acceleration of the tail. `rate` is
/// the oscillation rate (rad per unit t), so segments span π/rate.
fn oscillatory_sum<F>(seg_integrand: &F, t_start: f64, rate: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let h = (std::f64::consts::PI / rate.max(1e-3)).min(500.0);
    let seg = |k: usize| -> Result<f64> {
        let (a, b) = (t_start + k as f64 * h, t_start + (k + 1) as f64 * h);
        let failed = std::cell::RefCell::new(None);
        let v = quad::integrate(
            &|t| match seg_integrand(t) {
                Ok(v) => Complex64::new(v, 0.0),
                Err(e) => {
                    *failed.borrow_mut() = Some(e);
                    Complex64::new(f64::NAN, 0.0)
                }
            },
            a,
            b,
            1e-6,
            1e-9,
        );
        match (v, failed.into_inner()) {
            (_, Some(e)) => Err(e),
            (Ok(v), None) => Ok(v.re),
            (Err(e), None) => Err(e),
        }
    };
    let mut direct = seg(0)?;
    let mut window: Vec<f64> = Vec::new();
    let mut prev_est = f64::INFINITY;
    for k in 1..GP_MAX_SEGMENTS {
        let s = seg(k)?;
        if window.len() == GP_EULER_WINDOW {
            direct += window.remove(0);
        }
        window.push(s);
        if window.len() >= 6 {
            let est = euler_sum(&window);
            if (est - prev_est).abs() < GP_ABS_TOL
                && window.iter().rev().take(2).all(|v| v.abs() < 0.3)
            {
                return Ok(direct + est);
            }
            prev_est = est;
        }
    }
    Err(Error::QuadratureNonConvergence {
        achieved: (euler_sum(&window) - prev_est).abs(),
        requested: GP_ABS_TOL,
    })
}

/// Gil-Pelaez inversion of an arbitrary moment function t ↦ M_{jt} at one
/// reliability threshold x ∈ (0, 1).
///
/// The integrand oscillates at rate |ln x − d(arg M)/dt|; the drift is
/// estimated from a small-t probe so the half-period segmentation
/// alternates properly. For the class evaluators prefer
/// [`meta_distribution`], which exploits the known (jt)^{−δ} tail.
pub fn gil_pelaez_ccdf<M>(moment: &M, x: f64) -> Result<f64>
where
    M: Fn(f64) -> Result<Complex64> + ?Sized,
{
    if !(0.0 < x && x < 1.0) {
        return Err(Error::Domain(format!("x must lie in (0,1), got {x}")));
    }
    let lx = x.ln();
    let eps = 0.05;
    let drift = moment(eps)?.arg() / eps;
    let rate = (lx - drift).abs().max(lx.abs() * 0.2);
    let integrand = |t: f64| -> Result<f64> {
        let m = moment(t)?;
        Ok((Complex64::new(0.0, -t * lx).exp() * m).im / t)
    };
    let integral = oscillatory_sum(&integrand, 0.0, rate)?;
    Ok((0.5 + integral / std::f64::consts::PI).clamp(0.0, 1.0))
}

/// Gil-Pelaez inversion specialized to the class moment evaluators.
///
/// Head [0, t₀]: direct adaptive integration where the cached binomial
/// series is valid and cheap. Tail [t₀, ∞): the moment obeys
/// M_{jt} = K (jt)^{−δ} (1 + O(1/(qθs·t))) — the constant in 1 + V cancels
/// exactly — so K is fitted once at t₀ and the tail integrand costs a few
/// flops, summed over exact half-periods of e^{−jt ln x} with Euler
/// acceleration.
fn gil_pelaez_ccdf_class(ev: &MomentEvaluator, tail: &TailFit, x: f64) -> Result<f64> {
    if !(0.0 < x && x < 1.0) {
        return Err(Error::Domain(format!("x must lie in (0,1), got {x}")));
    }
    let lx = x.ln();
    let t0 = tail.t0;
    // head: chunked adaptive quadrature; the integrand is finite at t → 0
    let failed = std::cell::RefCell::new(None);
    let head_f = |t: f64| -> Complex64 {
        match ev.moment_imaginary(t) {
            Ok(m) => Complex64::new((Complex64::new(0.0, -t * lx).exp() * m).im / t, 0.0),
            Err(e) => {
                *failed.borrow_mut() = Some(e);
                Complex64::new(f64::NAN, 0.0)
            }
        }
    };
    let mut head = 0.0;
    let n_chunks = (t0 / 10.0).ceil().max(1.0) as usize;
    for i in 0..n_chunks {
        let a = t0 * i as f64 / n_chunks as f64;
        let b = t0 * (i + 1) as f64 / n_chunks as f64;
        let v = quad::integrate(&head_f, a, b, 1e-6, 1e-9);
        if let Some(e) = failed.borrow_mut().take() {
            return Err(e);
        }
        head += v?.re;
    }
    // tail: Im(e^{−jt lx} K (jt)^{−δ}) / t, oscillating exactly at |ln x|
    let kp = tail.k * Complex64::new(0.0, -tail.delta * std::f64::consts::FRAC_PI_2).exp();
    let delta = tail.delta;
    let tail_f = |t: f64| -> Result<f64> {
        Ok((Complex64::new(0.0, -t * lx).exp() * kp).im * t.powf(-1.0 - delta))
    };
    let tail_sum = oscillatory_sum(&tail_f, t0, lx.abs())?;
    Ok((0.5 + (head + tail_sum) / std::f64::consts::PI).clamp(0.0, 1.0))
}

/// Fitted large-t tail M_{jt} ≈ K (jt)^{−δ} beyond t₀.
struct TailFit {
    t0: f64,
    k: Complex64,
    delta: f64,
}

impl TailFit {
    fn fit(ev: &MomentEvaluator) -> Result<TailFit> {
        let delta = ev.delta();
        // onset: deep enough for the 1/(qθs·t) correction, but within the
        // cheap series range whenever the two overlap (they almost always
        // do: the series holds to 23(1+θs)/(qθs) > 30/(qθs))
        let need = 30.0 / ev.min_interference_scale().max(1e-9);
        let t0 = need.max(50.0).min(ev.series_t_limit() * 0.98).min(5e4);
        let m = ev.moment_imaginary(t0)?;
        let k = m * Complex64::new(0.0, t0).powc(Complex64::new(delta, 0.0));
        Ok(TailFit { t0, k, delta })
    }
}

/// Euler (repeated-averaging) acceleration of Σ a_j for an alternating
/// tail: transforms the sequence of partial sums and returns the deepest
/// average.
fn euler_sum(terms: &[f64]) -> f64 {
    let mut p: Vec<f64> = terms
        .iter()
        .scan(0.0, |acc, &t| {
            *acc += t;
            Some(*acc)
        })
        .collect();
    let n = p.len();
    for i in 1..n {
        for j in 0..n - i {
            p[j] = 0.5 * (p[j] + p[j + 1]);
        }
    }
    p[0]
}

/// Two-parameter beta fit matching the first two moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaApprox {
    /// Proper beta(a, b) distribution.
    Fit { shape_a: f64, shape_b: f64 },
    /// Zero-variance limit M₂ = M₁²: all mass at M₁.
    DegenerateStep(f64),
}

impl BetaApprox {
    pub fn ccdf(&self, x: f64) -> Result<f64> {
        match *self {
            BetaApprox::Fit { shape_a, shape_b } => {
                Ok(1.0 - reg_inc_beta(x.clamp(0.0, 1.0), shape_a, shape_b)?)
            }
            BetaApprox::DegenerateStep(p) => Ok(if x < p { 1.0 } else { 0.0 }),
        }
    }
}

/// Fits beta shape parameters from (M₁, M₂); requires the moment pair of a
/// non-degenerate (0,1)-valued variable: 0 < M₁ < 1 and M₁² ≤ M₂ ≤ M₁.
pub fn beta_approximation(m1: f64, m2: f64) -> Result<BetaApprox> {
    if !(0.0 < m1 && m1 < 1.0) {
        return Err(Error::Domain(format!("M1 must lie in (0,1), got {m1}")));
    }
    if m2 > m1 + 1e-12 || m2 < m1 * m1 - 1e-12 {
        return Err(Error::Domain(format!(
            "(M1, M2) = ({m1}, {m2}) is not a valid moment pair"
        )));
    }
    let var = m2 - m1 * m1;
    if var < 1e-12 {
        return Ok(BetaApprox::DegenerateStep(m1));
    }
    let shape_b = (m1 - m2) * (1.0 - m1) / var;
    let shape_a = m1 * shape_b / (1.0 - m1);
    Ok(BetaApprox::Fit { shape_a, shape_b })
}

fn class_moment(
    b: f64,
    params: &NetworkParams,
    activity: &ActivityModel,
    class: UserClass,
    ctrl: &SeriesControl,
) -> Result<f64> {
    let b = MomentOrder::real(b);
    let m = match class {
        UserClass::CellCenter => moment_ccu(b, params, activity, ctrl)?,
        UserClass::CellEdge => moment_ceu(b, params, activity, ctrl)?,
    };
    Ok(m.value.re)
}

/// Meta-distribution CCDF on the default grid.
pub fn meta_distribution(
    params: &NetworkParams,
    activity: &ActivityModel,
    class: UserClass,
    method: InversionMethod,
) -> Result<MetaCurve> {
    meta_distribution_on(params, activity, class, method, &default_grid())
}

/// Meta-distribution CCDF on a caller-supplied grid of interior
/// reliability thresholds.
pub fn meta_distribution_on(
    params: &NetworkParams,
    activity: &ActivityModel,
    class: UserClass,
    method: InversionMethod,
    grid: &[f64],
) -> Result<MetaCurve> {
    params.validate()?;
    activity.validate(params)?;
    let ctrl = SeriesControl::default();
    if activity.effective_q(params) == 0.0 {
        // no interference: P ≡ 1
        let ones = vec![1.0; grid.len()];
        return MetaCurve::from_samples(grid, &ones);
    }
    let values: Vec<f64> = match method {
        InversionMethod::BetaApprox => {
            let m1 = class_moment(1.0, params, activity, class, &ctrl)?;
            let m2 = class_moment(2.0, params, activity, class, &ctrl)?;
            let fit = beta_approximation(m1, m2)?;
            grid.iter().map(|&x| fit.ccdf(x)).collect::<Result<_>>()?
        }
        InversionMethod::GilPelaez => {
            let ev = MomentEvaluator::new(params, activity, class, &ctrl)?;
            let tail = TailFit::fit(&ev)?;
            grid.par_iter()
                .map(|&x| gil_pelaez_ccdf_class(&ev, &tail, x))
                .collect::<Result<_>>()?
        }
    };
    MetaCurve::from_samples(grid, &values)
}

/// E[min(1, Nξ / P)] under the load pmf of N and P ~ the given curve.
/// This is the Little's-law stationary activity of a BS whose queue
/// receives Nξ packets per slot and serves with success probability P.
pub fn mean_active_probability(curve: &MetaCurve, xi: f64, load_ratio: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::Domain(format!("xi must lie in [0,1], got {xi}")));
    }
    if !(load_ratio > 0.0) {
        return Err(Error::Domain(format!(
            "load ratio must be positive, got {load_ratio}"
        )));
    }
    if xi == 0.0 {
        return Ok(0.0);
    }
    // condition the load on serving at least one user
    let norm = 1.0 - cell_load_pmf(0, load_ratio);
    let mut acc = 0.0;
    let mut weight_seen = 0.0;
    for nu in 1..=100_000u64 {
        let w = cell_load_pmf(nu, load_ratio) / norm;
        if w < 1e-12 && weight_seen > 0.999_999 {
            break;
        }
        weight_seen += w;
        acc += w * activity_bracket(curve, nu as f64 * xi);
    }
    Ok((acc + (1.0 - weight_seen).max(0.0)).clamp(0.0, 1.0))
}

/// E[min(1, a/P)] for P distributed along the curve: the Stieltjes sum
/// 1 − F̄(a) + ∫_a^1 (a/s) dF_P(s) evaluated on the curve's own grid.
fn activity_bracket(curve: &MetaCurve, a: f64) -> f64 {
    if a >= 1.0 {
        return 1.0;
    }
    // mass with P ≤ a is served at full activity
    let mut acc = 1.0 - curve.eval(a);
    let mut s_prev = a;
    let mut v_prev = curve.eval(a);
    for (x, v) in curve.points() {
        if x <= a {
            continue;
        }
        let mass = (v_prev - v).max(0.0);
        let s_mid = 0.5 * (s_prev + x);
        acc += mass * (a / s_mid).min(1.0);
        s_prev = x;
        v_prev = v;
    }
    acc.clamp(0.0, 1.0)
}

/// Iteration scheme for the traffic fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum UpdateMode {
    /// Damped Picard iteration q ← (q + E[q])/2.
    Simultaneous,
    /// Plain temporal recursion q ← E[q], mirroring slot-by-slot evolution.
    RecursiveTemporal,
}

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub q_star: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// q* pinned at 1: queues grow without bound (unstable regime).
    pub saturated: bool,
    /// Meta-distribution curve at the fixed-point activity.
    pub curve: MetaCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityVerdict {
    Stable,
    Unstable,
    Undetermined,
}

pub fn stability_verdict(result: &FixedPointResult) -> StabilityVerdict {
    if result.saturated {
        StabilityVerdict::Unstable
    } else if result.converged {
        StabilityVerdict::Stable
    } else {
        StabilityVerdict::Undetermined
    }
}

const FP_TOL: f64 = 1e-5;
const FP_MAX_ITER: usize = 200;
const FP_SATURATION: f64 = 1.0 - 1e-5;

/// Solves q = E[min(1, Nξ/P(q))] for the stationary BS activity.
pub fn fixed_point_solve(
    params: &NetworkParams,
    xi: f64,
    class: UserClass,
    method: InversionMethod,
    mode: UpdateMode,
) -> Result<FixedPointResult> {
    params.validate()?;
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::Domain(format!("xi must lie in [0,1], got {xi}")));
    }
    let rho = params.user_density / params.bs_density;
    let mut q = xi.max(1e-3).min(1.0);
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=FP_MAX_ITER {
        iterations = k;
        let curve = meta_distribution(params, &ActivityModel::fixed(q), class, method)?;
        let target = mean_active_probability(&curve, xi, rho)?;
        let next = match mode {
            UpdateMode::Simultaneous => 0.5 * q + 0.5 * target,
            UpdateMode::RecursiveTemporal => target,
        };
        residual = (next - q).abs();
        q = next.clamp(0.0, 1.0);
        if residual < FP_TOL {
            converged = true;
            break;
        }
    }
    let curve = meta_distribution(params, &ActivityModel::fixed(q), class, method)?;
    Ok(FixedPointResult {
        q_star: q,
        iterations,
        residual,
        converged,
        saturated: q >= FP_SATURATION,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_5db() -> NetworkParams {
        NetworkParams::default().with_sir_db(5.0)
    }

    #[test]
    fn gil_pelaez_recovers_degenerate_step() {
        // P ≡ p gives M_{jt} = p^{jt}; the inversion must reproduce the
        // unit step at p away from the jump.
        let p = 0.3_f64;
        let m = |t: f64| -> Result<Complex64> { Ok(Complex64::new(0.0, t * p.ln()).exp()) };
        for (x, want) in [(0.05, 1.0), (0.15, 1.0), (0.6, 0.0), (0.9, 0.0)] {
            let got = gil_pelaez_ccdf(&m, x).unwrap();
            assert!((got - want).abs() < 2e-3, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn curve_mean_matches_first_moment() {
        let p = params_5db();
        let a = ActivityModel::fixed(0.7);
        let ctrl = SeriesControl::default();
        for class in [UserClass::CellCenter, UserClass::CellEdge] {
            let curve = meta_distribution(&p, &a, class, InversionMethod::GilPelaez).unwrap();
            let m1 = class_moment(1.0, &p, &a, class, &ctrl).unwrap();
            assert!(
                (curve.integral() - m1).abs() < 5e-3,
                "{class}: {} vs {m1}",
                curve.integral()
            );
        }
    }

    #[test]
    fn beta_approximation_tracks_exact_inversion() {
        let p = params_5db();
        let a = ActivityModel::fixed(0.7);
        for class in [UserClass::CellCenter, UserClass::CellEdge] {
            let gp = meta_distribution(&p, &a, class, InversionMethod::GilPelaez).unwrap();
            let beta = meta_distribution(&p, &a, class, InversionMethod::BetaApprox).unwrap();
            let gap = gp.sup_gap(&beta);
            assert!(gap <= 0.05, "{class}: sup gap {gap}");
        }
    }

    #[test]
    fn beta_fit_reproduces_its_moments() {
        let (m1, m2) = (0.6629390901438809, 0.5023160388177201);
        match beta_approximation(m1, m2).unwrap() {
            BetaApprox::Fit { shape_a, shape_b } => {
                let mean = shape_a / (shape_a + shape_b);
                let var = shape_a * shape_b
                    / ((shape_a + shape_b).powi(2) * (shape_a + shape_b + 1.0));
                assert!((mean - m1).abs() < 1e-12);
                assert!((var - (m2 - m1 * m1)).abs() < 1e-12);
            }
            other => panic!("expected fit, got {other:?}"),
        }
        assert_eq!(
            beta_approximation(0.4, 0.16).unwrap(),
            BetaApprox::DegenerateStep(0.4)
        );
        assert!(beta_approximation(0.4, 0.5).is_err());
        assert!(beta_approximation(0.4, 0.1).is_err());
        assert!(beta_approximation(1.0, 1.0).is_err());
    }

    #[test]
    fn curves_order_by_class_activity_and_threshold() {
        let a = ActivityModel::fixed(0.7);
        let p = params_5db();
        let ccu = meta_distribution(&p, &a, UserClass::CellCenter, InversionMethod::GilPelaez).unwrap();
        let ceu = meta_distribution(&p, &a, UserClass::CellEdge, InversionMethod::GilPelaez).unwrap();
        for (x, v) in ccu.points() {
            assert!(v >= ceu.eval(x) - 1e-4, "class order violated at {x}");
        }
        let quiet = meta_distribution(&p, &ActivityModel::fixed(0.3), UserClass::CellEdge, InversionMethod::GilPelaez).unwrap();
        for (x, v) in quiet.points() {
            assert!(v >= ceu.eval(x) - 1e-4, "activity order violated at {x}");
        }
        let harsher = meta_distribution(&p.with_sir_db(10.0), &a, UserClass::CellEdge, InversionMethod::GilPelaez).unwrap();
        for (x, v) in harsher.points() {
            assert!(v <= ceu.eval(x) + 1e-4, "threshold order violated at {x}");
        }
    }

    #[test]
    fn curve_shape_invariants() {
        let p = params_5db();
        let a = ActivityModel::fixed(0.7);
        let c = meta_distribution(&p, &a, UserClass::CellEdge, InversionMethod::GilPelaez).unwrap();
        let pts: Vec<(f64, f64)> = c.points().collect();
        assert_eq!(pts.first().unwrap(), &(0.0, 1.0));
        assert_eq!(pts.last().unwrap(), &(1.0, 0.0));
        assert!(pts.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
        assert!(pts.iter().all(|&(_, v)| (0.0..=1.0).contains(&v)));
        // idle network: curve pinned at 1
        let idle = meta_distribution(&p, &ActivityModel::fixed(0.0), UserClass::CellEdge, InversionMethod::BetaApprox).unwrap();
        assert!((idle.eval(0.99) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curve_csv_round_trip() {
        let p = params_5db();
        let a = ActivityModel::fixed(0.7);
        let c = meta_distribution(&p, &a, UserClass::CellCenter, InversionMethod::BetaApprox).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = MetaCurve::read_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(c.len(), back.len());
        for ((x0, v0), (x1, v1)) in c.points().zip(back.points()) {
            assert_eq!(x0, x1);
            assert!((v0 - v1).abs() < 1e-14);
        }
    }

    #[test]
    fn activity_expectation_limits_and_monotonicity() {
        let p = params_5db();
        let a = ActivityModel::fixed(0.7);
        let rho = p.user_density / p.bs_density;
        let curve = meta_distribution(&p, &a, UserClass::CellCenter, InversionMethod::BetaApprox).unwrap();
        assert_eq!(mean_active_probability(&curve, 0.0, rho).unwrap(), 0.0);
        assert!((mean_active_probability(&curve, 1.0, rho).unwrap() - 1.0).abs() < 1e-9);
        let mut prev = -1.0;
        for xi in [0.01, 0.05, 0.2, 0.5, 0.9] {
            let e = mean_active_probability(&curve, xi, rho).unwrap();
            assert!(e > prev && (0.0..=1.0).contains(&e), "xi={xi}: {e}");
            prev = e;
        }
        // heavier cells transmit more
        let lo = mean_active_probability(&curve, 0.2, 1.0).unwrap();
        let hi = mean_active_probability(&curve, 0.2, 10.0).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn fixed_point_is_consistent_and_monotone_in_arrivals() {
        let p = params_5db();
        let rho = p.user_density / p.bs_density;
        let mut prev = 0.0;
        for xi in [0.05, 0.2, 0.4] {
            let r = fixed_point_solve(
                &p,
                xi,
                UserClass::CellCenter,
                InversionMethod::BetaApprox,
                UpdateMode::Simultaneous,
            )
            .unwrap();
            assert!(r.converged, "xi={xi} did not converge");
            // self-consistency of the reported fixed point
            let echo = mean_active_probability(&r.curve, xi, rho).unwrap();
            assert!((echo - r.q_star).abs() < 5e-4, "xi={xi}: {echo} vs {}", r.q_star);
            assert!(r.q_star >= xi - 1e-9, "activity below arrival rate");
            assert!(r.q_star > prev);
            prev = r.q_star;
        }
    }

    #[test]
    fn fixed_point_saturates_under_overload() {
        let p = params_5db();
        let r = fixed_point_solve(
            &p,
            1.0,
            UserClass::CellEdge,
            InversionMethod::BetaApprox,
            UpdateMode::Simultaneous,
        )
        .unwrap();
        assert!(r.saturated);
        assert_eq!(stability_verdict(&r), StabilityVerdict::Unstable);
        let r = fixed_point_solve(
            &p,
            0.05,
            UserClass::CellCenter,
            InversionMethod::BetaApprox,
            UpdateMode::Simultaneous,
        )
        .unwrap();
        assert_eq!(stability_verdict(&r), StabilityVerdict::Stable);
    }

    #[test]
    fn recursive_and_damped_modes_agree_on_stable_load() {
        let p = params_5db();
        let a = fixed_point_solve(&p, 0.1, UserClass::CellCenter, InversionMethod::BetaApprox, UpdateMode::Simultaneous).unwrap();
        let b = fixed_point_solve(&p, 0.1, UserClass::CellCenter, InversionMethod::BetaApprox, UpdateMode::RecursiveTemporal).unwrap();
        assert!(a.converged && b.converged);
        assert!((a.q_star - b.q_star).abs() < 5e-4, "{} vs {}", a.q_star, b.q_star);
    }
}
