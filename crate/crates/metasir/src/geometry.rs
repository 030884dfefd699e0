//! Spatial layer: PPP sampling on a torus, nearest-BS association,
//! cell-center/edge classification, conditional link-distance laws and the
//! per-cell load PMF.
//!
//! The window wraps around (torus metric) so the typical-user statistics
//! are not biased by border cells. A user is cell-center (CCU) when the
//! ratio of its serving distance to the dominant-interferer (second
//! nearest BS) distance is below the threshold R, cell-edge (CEU)
//! otherwise; the CCU probability is exactly R².

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Spatial and channel constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkParams {
    /// BS density λ (points/m²).
    pub bs_density: f64,
    /// User density λ_u (points/m²).
    pub user_density: f64,
    /// Path loss exponent α (> 2).
    pub pathloss_exponent: f64,
    /// CCU/CEU ratio threshold R ∈ (0,1).
    pub ratio_threshold: f64,
    /// SIR threshold θ, linear scale.
    pub sir_threshold: f64,
    /// Transmit power (dBm). Carried for configuration completeness; the
    /// interference-limited SIR does not depend on it.
    pub tx_power_dbm: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            bs_density: 1e-4,
            user_density: 3e-4,
            pathloss_exponent: 3.0,
            ratio_threshold: 0.5,
            sir_threshold: 1.0,
            tx_power_dbm: 23.0,
        }
    }
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.bs_density > 0.0) {
            problems.push(format!("bs_density must be > 0 (got {})", self.bs_density));
        }
        if !(self.user_density > 0.0) {
            problems.push(format!("user_density must be > 0 (got {})", self.user_density));
        }
        if !(self.pathloss_exponent > 2.0) {
            problems.push(format!(
                "pathloss_exponent must be > 2 so that delta = 2/alpha < 1 (got {})",
                self.pathloss_exponent
            ));
        }
        if !(self.ratio_threshold > 0.0 && self.ratio_threshold < 1.0) {
            problems.push(format!(
                "ratio_threshold must be in (0,1) (got {})",
                self.ratio_threshold
            ));
        }
        if !(self.sir_threshold > 0.0) {
            problems.push(format!("sir_threshold must be > 0 (got {})", self.sir_threshold));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// δ = 2/α.
    pub fn delta(&self) -> f64 {
        2.0 / self.pathloss_exponent
    }

    /// R^α, the inner scale of the CCU exclusion ball.
    pub fn ratio_alpha(&self) -> f64 {
        self.ratio_threshold.powf(self.pathloss_exponent)
    }

    pub fn with_sir_db(mut self, theta_db: f64) -> Self {
        self.sir_threshold = db_to_linear(theta_db);
        self
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum UserClass {
    CellCenter,
    CellEdge,
}

impl std::fmt::Display for UserClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UserClass::CellCenter => write!(f, "ccu"),
            UserClass::CellEdge => write!(f, "ceu"),
        }
    }
}

/// One PPP realization with association and classification.
#[derive(Debug, Clone)]
pub struct GeometrySnapshot {
    pub bs: Vec<[f64; 2]>,
    pub users: Vec<[f64; 2]>,
    /// user → index of the nearest BS (torus metric).
    pub association: Vec<usize>,
    /// serving distance R_m per user.
    pub link_distance: Vec<f64>,
    /// dominant-interferer (second nearest BS) distance R_d per user.
    pub dominant_distance: Vec<f64>,
    pub class: Vec<UserClass>,
    /// torus side length (m).
    pub side: f64,
}

/// Squared torus distance on a square window of the given side.
pub fn torus_dist_sq(a: [f64; 2], b: [f64; 2], side: f64) -> f64 {
    let mut dx = (a[0] - b[0]).abs();
    let mut dy = (a[1] - b[1]).abs();
    if dx > side / 2.0 {
        dx = side - dx;
    }
    if dy > side / 2.0 {
        dy = side - dy;
    }
    dx * dx + dy * dy
}

/// Sample a network realization. Deterministic for a given seed.
pub fn sample_network(params: &NetworkParams, window_side: f64, rng_seed: u64) -> Result<GeometrySnapshot> {
    params.validate()?;
    if !(window_side > 0.0) {
        return Err(Error::Domain(format!("window_side must be > 0, got {window_side}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let area = window_side * window_side;
    let n_bs = Poisson::new(params.bs_density * area)
        .map_err(|e| Error::Domain(e.to_string()))?
        .sample(&mut rng) as usize;
    if n_bs == 0 {
        return Err(Error::EmptyProcess { seed: rng_seed });
    }
    let n_users = Poisson::new(params.user_density * area)
        .map_err(|e| Error::Domain(e.to_string()))?
        .sample(&mut rng) as usize;
    let mut bs = Vec::with_capacity(n_bs);
    for _ in 0..n_bs {
        bs.push([rng.gen::<f64>() * window_side, rng.gen::<f64>() * window_side]);
    }
    let mut users = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        users.push([rng.gen::<f64>() * window_side, rng.gen::<f64>() * window_side]);
    }

    let mut association = Vec::with_capacity(n_users);
    let mut link_distance = Vec::with_capacity(n_users);
    let mut dominant_distance = Vec::with_capacity(n_users);
    let mut class = Vec::with_capacity(n_users);
    for u in &users {
        let (mut best, mut second) = (f64::INFINITY, f64::INFINITY);
        let mut best_idx = 0usize;
        for (i, b) in bs.iter().enumerate() {
            let d2 = torus_dist_sq(*u, *b, window_side);
            if d2 < best {
                second = best;
                best = d2;
                best_idx = i;
            } else if d2 < second {
                second = d2;
            }
        }
        let rm = best.sqrt();
        let rd = second.sqrt();
        association.push(best_idx);
        link_distance.push(rm);
        dominant_distance.push(rd);
        class.push(if rm / rd < params.ratio_threshold {
            UserClass::CellCenter
        } else {
            UserClass::CellEdge
        });
    }

    Ok(GeometrySnapshot {
        bs,
        users,
        association,
        link_distance,
        dominant_distance,
        class,
        side: window_side,
    })
}

/// P(typical user is CCU) = R².
pub fn ccu_probability(ratio_threshold: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&ratio_threshold));
    ratio_threshold * ratio_threshold
}

/// Conditional serving-distance PDF f_{R_c} / f_{R_e}.
pub fn link_distance_pdf(r: f64, params: &NetworkParams, class: UserClass) -> f64 {
    if r < 0.0 {
        return 0.0;
    }
    let lam = params.bs_density;
    let rr = params.ratio_threshold * params.ratio_threshold;
    let u = std::f64::consts::PI * lam * r * r;
    match class {
        UserClass::CellCenter => 2.0 * std::f64::consts::PI * lam * r / rr * (-u / rr).exp(),
        UserClass::CellEdge => {
            2.0 * std::f64::consts::PI * lam * r / (1.0 - rr) * ((-u).exp() - (-u / rr).exp())
        }
    }
}

/// Conditional serving-distance CCDF. The CEU branch is the integral of
/// the CEU PDF (the printed CEU CCDF in the source material is
/// inconsistent with its own PDF; the PDF integrates to one and matches
/// simulation, so it is the ground truth here).
pub fn link_distance_ccdf(r: f64, params: &NetworkParams, class: UserClass) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    let lam = params.bs_density;
    let rr = params.ratio_threshold * params.ratio_threshold;
    let u = std::f64::consts::PI * lam * r * r;
    match class {
        UserClass::CellCenter => (-u / rr).exp(),
        UserClass::CellEdge => ((-u).exp() - rr * (-u / rr).exp()) / (1.0 - rr),
    }
}

/// PMF of the number of users in the Voronoi cell of a BS chosen
/// uniformly: g_N(ν) = 3.5^{3.5} Γ(ν+3.5) ρ^ν / (ν! Γ(3.5) (ρ+3.5)^{ν+3.5})
/// with ρ = λ_u/λ.
pub fn cell_load_pmf(nu: u64, ratio: f64) -> f64 {
    debug_assert!(ratio > 0.0);
    const K: f64 = 3.5;
    let nu_f = nu as f64;
    let log_p = K * K.ln() + ln_gamma(nu_f + K) - ln_gamma(nu_f + 1.0) - ln_gamma(K)
        + nu_f * ratio.ln()
        - (nu_f + K) * (ratio + K).ln();
    log_p.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate_semi_infinite;

    fn params() -> NetworkParams {
        NetworkParams::default()
    }

    #[test]
    fn ccu_probability_examples() {
        assert_eq!(ccu_probability(0.5), 0.25);
        assert_eq!(ccu_probability(1.0), 1.0);
        assert_eq!(ccu_probability(0.0), 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params();
        p.bs_density = 0.0;
        assert!(p.validate().is_err());
        assert!(sample_network(&p, 2000.0, 1).is_err());
    }

    #[test]
    fn pdf_vanishes_at_origin_and_normalizes() {
        let p = params();
        for class in [UserClass::CellCenter, UserClass::CellEdge] {
            assert_eq!(link_distance_pdf(0.0, &p, class), 0.0);
            let mass =
                integrate_semi_infinite(&|r| link_distance_pdf(r, &p, class), 0.0, 1e-10, 1e-12)
                    .unwrap();
            assert!((mass - 1.0).abs() < 1e-8, "{class}: {mass}");
        }
    }

    #[test]
    fn ccdf_boundaries_and_derivative() {
        let p = params();
        for class in [UserClass::CellCenter, UserClass::CellEdge] {
            assert_eq!(link_distance_ccdf(0.0, &p, class), 1.0);
            // -d/dr CCDF == PDF (central difference)
            for r in [10.0, 40.0, 80.0, 150.0] {
                let h = 1e-3;
                let num = -(link_distance_ccdf(r + h, &p, class)
                    - link_distance_ccdf(r - h, &p, class))
                    / (2.0 * h);
                let pdf = link_distance_pdf(r, &p, class);
                assert!((num - pdf).abs() < 1e-8 * pdf.max(1e-6), "{class} r={r}");
            }
        }
        // CCU CCDF hits e^{-1} at r = R (πλ)^{-1/2}
        let r = p.ratio_threshold / (std::f64::consts::PI * p.bs_density).sqrt();
        let v = link_distance_ccdf(r, &p, UserClass::CellCenter);
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn ceu_pdf_nonnegative_on_dense_grid() {
        let p = params();
        for i in 0..5000 {
            let r = i as f64 * 0.1;
            assert!(link_distance_pdf(r, &p, UserClass::CellEdge) >= 0.0, "r={r}");
        }
    }

    #[test]
    fn load_pmf_normalizes_with_mean_ratio() {
        let ratio = 3.0;
        let mut mass = 0.0;
        let mut mean = 0.0;
        let mut nu = 0u64;
        loop {
            let g = cell_load_pmf(nu, ratio);
            mass += g;
            mean += nu as f64 * g;
            if g < 1e-12 && nu as f64 > 2.0 * ratio {
                break;
            }
            nu += 1;
        }
        assert!((mass - 1.0).abs() < 1e-9, "{mass}");
        assert!((mean - ratio).abs() < 1e-6, "{mean}");
        // ν = 0 value, frozen from arbitrary-precision evaluation
        assert!((cell_load_pmf(0, 3.0) - 0.114562216339068).abs() < 1e-12);
        // decreasing tail beyond 2·ratio
        let start = (2.0 * ratio).ceil() as u64;
        for nu in start..start + 40 {
            assert!(cell_load_pmf(nu + 1, ratio) < cell_load_pmf(nu, ratio));
        }
    }

    #[test]
    fn snapshot_classification_replays_definition() {
        let p = params();
        let snap = sample_network(&p, 1500.0, 42).unwrap();
        assert!(!snap.bs.is_empty());
        for i in 0..snap.users.len() {
            assert!(snap.link_distance[i] <= snap.dominant_distance[i]);
            let expect = if snap.link_distance[i] / snap.dominant_distance[i] < p.ratio_threshold {
                UserClass::CellCenter
            } else {
                UserClass::CellEdge
            };
            assert_eq!(snap.class[i], expect);
            // association is the argmin of torus distance
            let mut best = f64::INFINITY;
            let mut best_idx = 0;
            for (j, b) in snap.bs.iter().enumerate() {
                let d2 = torus_dist_sq(snap.users[i], *b, snap.side);
                if d2 < best {
                    best = d2;
                    best_idx = j;
                }
            }
            assert_eq!(snap.association[i], best_idx);
        }
    }

    #[test]
    fn snapshot_deterministic() {
        let p = params();
        let a = sample_network(&p, 1000.0, 7).unwrap();
        let b = sample_network(&p, 1000.0, 7).unwrap();
        assert_eq!(a.bs, b.bs);
        assert_eq!(a.users, b.users);
        assert_eq!(a.class, b.class);
    }

    #[test]
    fn poisson_bs_count_statistics() {
        // mean BS count over seeds within 3σ of λ·side² (smaller window to keep it quick)
        let p = params();
        let side = 1000.0;
        let expect = p.bs_density * side * side; // 100
        let n_seeds = 400;
        let mut total = 0usize;
        for seed in 0..n_seeds {
            total += sample_network(&p, side, seed).unwrap().bs.len();
        }
        let mean = total as f64 / n_seeds as f64;
        let sigma = (expect / n_seeds as f64).sqrt();
        assert!((mean - expect).abs() < 3.0 * sigma, "mean={mean} expect={expect}");
    }

    #[test]
    fn db_conversion_table() {
        for db in -10..=10 {
            let lin = db_to_linear(db as f64);
            assert!((linear_to_db(lin) - db as f64).abs() < 1e-12);
        }
        assert!((db_to_linear(0.0) - 1.0).abs() < 1e-15);
        assert!((db_to_linear(10.0) - 10.0).abs() < 1e-12);
    }
}
