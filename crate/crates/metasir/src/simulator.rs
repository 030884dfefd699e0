//! Spatio-temporal Monte Carlo engine.
//!
//! Two modes:
//!
//! * **Fixed-activity** ([`run_fixed_activity`]): the geometry is frozen and,
//!   per draw, every interfering base station is independently active with
//!   probability `q` and every link gets fresh unit-mean exponential fading.
//!   The serving base station always transmits (the analysis conditions on
//!   the tagged link being served).  The per-user success fraction estimates
//!   the conditional success probability `P(θ | Φ)`.
//! * **Queue-coupled** ([`run_queue_coupled`]): the full discrete-time system
//!   with Bernoulli packet arrivals, one infinite queue per user at its
//!   serving base station, uniform random scheduling among non-empty queues,
//!   retransmission of failed head-of-line packets, and activity that emerges
//!   from the queue states.
//!
//! Fixed-activity draws parallelize with per-draw random substreams and an
//! associative reduction, so results are bit-identical for a given seed
//! regardless of worker count.  The queue-coupled time loop is sequential
//! (queues couple all base stations each slot).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{torus_dist_sq, GeometrySnapshot, NetworkParams, UserClass};
use crate::metadist::MetaCurve;

/// A queue longer than this aborts a queue-coupled run with an instability
/// diagnostic; with at most one arrival per slot it can only trip on runs
/// whose backlog grows without bound for a very long horizon.
const MAX_QUEUE_LEN: u64 = 100_000;

/// Per-link counters accumulated by either simulation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkStats {
    /// Index of the user within its geometry snapshot (not unique after merge).
    pub user: usize,
    pub class: UserClass,
    /// Serving distance R_m (m).
    pub serving_distance: f64,
    /// Dominant-interferer (second nearest BS) distance R_d (m).
    pub dominant_distance: f64,
    /// Transmission attempts counted for this link.
    pub attempts: u64,
    pub successes: u64,
    /// Attempts during which at least one base station in the dominant ring
    /// `(R_m, R_m/R]` was active (fixed-activity mode only).
    pub ring_active_attempts: u64,
    pub ring_active_successes: u64,
    /// Slots/draws during which the serving base station transmitted to
    /// anyone (equals `draws` in fixed-activity mode).
    pub serving_active: u64,
}

impl LinkStats {
    /// Empirical conditional success probability, if any attempts were made.
    pub fn p_hat(&self) -> Option<f64> {
        (self.attempts > 0).then(|| self.successes as f64 / self.attempts as f64)
    }

    /// Success fraction conditioned on an active dominant-ring base station.
    pub fn p_hat_ring_active(&self) -> Option<f64> {
        (self.ring_active_attempts > 0)
            .then(|| self.ring_active_successes as f64 / self.ring_active_attempts as f64)
    }

    /// Success fraction conditioned on a silent dominant ring.
    pub fn p_hat_ring_inactive(&self) -> Option<f64> {
        let attempts = self.attempts - self.ring_active_attempts;
        (attempts > 0)
            .then(|| (self.successes - self.ring_active_successes) as f64 / attempts as f64)
    }
}

/// Aggregated results of one or more simulation runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimStats {
    pub links: Vec<LinkStats>,
    /// Measured slots (queue mode) or draws (fixed-activity mode), summed
    /// over merged runs.
    pub measured_slots: u64,
    /// Active base-station slot count over measured slots, summed over all
    /// base stations (empirical activity = `active_bs_slots / (bs_count ×
    /// measured_slots)` for a single run).
    pub active_bs_slots: u64,
    /// Number of base stations contributing to `active_bs_slots`.
    pub bs_count: u64,
    /// Total base-station slot opportunities (`bs_count × measured slots`,
    /// summed over merged runs) — the denominator of the activity fraction.
    pub bs_slot_opportunities: u64,
    /// Observed per-packet service times (attempts until first success),
    /// queue-coupled mode only.
    pub service_times: Vec<u64>,
    /// Packet conservation counters (queue-coupled mode, whole run including
    /// warmup): per-link arrivals and departures, aligned with `links`.
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
    pub final_backlog: Vec<u64>,
}

impl SimStats {
    /// Absorb another run (e.g. an independent geometry realization).
    pub fn merge(&mut self, other: SimStats) {
        self.links.extend(other.links);
        self.measured_slots += other.measured_slots;
        self.active_bs_slots += other.active_bs_slots;
        self.bs_count += other.bs_count;
        self.bs_slot_opportunities += other.bs_slot_opportunities;
        self.service_times.extend(other.service_times);
        self.arrivals.extend(other.arrivals);
        self.departures.extend(other.departures);
        self.final_backlog.extend(other.final_backlog);
    }

    /// Fraction of base-station slots that carried a transmission.
    pub fn activity_fraction(&self) -> f64 {
        if self.bs_slot_opportunities == 0 {
            0.0
        } else {
            self.active_bs_slots as f64 / self.bs_slot_opportunities as f64
        }
    }

    /// Links of the given class (all links when `class` is `None`) with at
    /// least `min_attempts` attempts.
    pub fn qualifying_links(
        &self,
        class: Option<UserClass>,
        min_attempts: u64,
    ) -> impl Iterator<Item = &LinkStats> {
        self.links
            .iter()
            .filter(move |l| class.map_or(true, |c| l.class == c) && l.attempts >= min_attempts)
    }

    /// Unbiased estimate of the moment `M_order = E[P(θ)^order]` over links
    /// of the class, together with its standard error across links.
    ///
    /// With `s` successes in `n` Bernoulli attempts, the falling-factorial
    /// ratio `s(s−1)…(s−order+1) / (n(n−1)…(n−order+1))` is an unbiased
    /// estimator of `P^order`; the plain ratio `(s/n)^order` is biased
    /// upward by the per-link sampling noise.
    pub fn moment_estimate(
        &self,
        order: u32,
        class: Option<UserClass>,
        min_attempts: u64,
    ) -> Result<(f64, f64)> {
        let mut values = Vec::new();
        for link in self.qualifying_links(class, min_attempts) {
            let mut est = 1.0;
            for k in 0..order as u64 {
                est *= (link.successes.saturating_sub(k)) as f64 / (link.attempts - k) as f64;
            }
            values.push(est);
        }
        mean_and_se(&values, 2)
    }

    /// Export per-link statistics as CSV.
    pub fn write_links_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "link,class,serving_distance,dominant_distance,attempts,successes,activity_fraction"
        )?;
        for (i, l) in self.links.iter().enumerate() {
            let act = if self.measured_slots > 0 {
                l.serving_active as f64 / self.measured_slots as f64
            } else {
                0.0
            };
            writeln!(
                w,
                "{i},{},{:.6},{:.6},{},{},{:.6}",
                l.class, l.serving_distance, l.dominant_distance, l.attempts, l.successes, act
            )?;
        }
        Ok(())
    }
}

fn mean_and_se(values: &[f64], needed: usize) -> Result<(f64, f64)> {
    if values.len() < needed {
        return Err(Error::TooFewLinks {
            count: values.len(),
            needed,
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Precomputed per-user gains: serving gain, dominant-ring members, and the
/// full torus path-gain row against every base station.
struct LinkTable {
    serving: Vec<usize>,
    serving_gain: Vec<f64>,
    /// Indices of base stations with distance in `(R_m, R_m/R]`.
    ring: Vec<Vec<u32>>,
    /// Row-major `users × bs` matrix of `d^{-α}` (serving entry zeroed).
    gain: Vec<f64>,
    n_bs: usize,
    /// Mean interference from the infinite network beyond the torus window
    /// per unit activity (the window only realizes interferers up to the
    /// torus horizon; at small path-loss exponents the truncated far field
    /// decays slowly and would bias success rates upward by several percent).
    far_field: f64,
}

/// Mean path-gain mass of a unit-density plane outside a unit square
/// centred on the receiver: `∫_{R²∖[-1/2,1/2]²} |x|^{-α} dx`.
fn far_field_constant(alpha: f64) -> f64 {
    // Polar integration; the square boundary sits at r = 1/(2 cos φ) per
    // octant, so the radial integral closes in terms of cos^{α-2}.
    let n = 256;
    let h = std::f64::consts::FRAC_PI_4 / n as f64;
    let f = |phi: f64| (2.0 * phi.cos()).powf(alpha - 2.0);
    let mut sum = 0.5 * (f(0.0) + f(std::f64::consts::FRAC_PI_4));
    for k in 1..n {
        sum += f(k as f64 * h);
    }
    8.0 / (alpha - 2.0) * sum * h
}

fn build_link_table(snapshot: &GeometrySnapshot, params: &NetworkParams) -> LinkTable {
    let n_bs = snapshot.bs.len();
    let n_users = snapshot.users.len();
    let alpha = params.pathloss_exponent;
    let mut gain = vec![0.0; n_users * n_bs];
    let mut ring = Vec::with_capacity(n_users);
    let mut serving_gain = Vec::with_capacity(n_users);
    for (u, pos) in snapshot.users.iter().enumerate() {
        let serving = snapshot.association[u];
        let rm = snapshot.link_distance[u];
        let ring_limit = rm / params.ratio_threshold;
        let mut members = Vec::new();
        for (j, b) in snapshot.bs.iter().enumerate() {
            let d = torus_dist_sq(*pos, *b, snapshot.side).sqrt();
            if j == serving {
                continue;
            }
            gain[u * n_bs + j] = d.powf(-alpha);
            if d <= ring_limit {
                members.push(j as u32);
            }
        }
        ring.push(members);
        serving_gain.push(rm.powf(-alpha));
    }
    LinkTable {
        serving: snapshot.association.clone(),
        serving_gain,
        ring,
        gain,
        n_bs,
        far_field: params.bs_density
            * snapshot.side.powf(2.0 - alpha)
            * far_field_constant(alpha),
    }
}

/// Per-draw accumulator used in the parallel reduction.
#[derive(Clone)]
struct DrawCounts {
    successes: Vec<u64>,
    ring_active: Vec<u64>,
    ring_active_successes: Vec<u64>,
    active_bs: u64,
    draws: u64,
}

impl DrawCounts {
    fn zero(n_users: usize) -> Self {
        DrawCounts {
            successes: vec![0; n_users],
            ring_active: vec![0; n_users],
            ring_active_successes: vec![0; n_users],
            active_bs: 0,
            draws: 0,
        }
    }

    fn add(mut self, other: DrawCounts) -> Self {
        for (a, b) in self.successes.iter_mut().zip(&other.successes) {
            *a += b;
        }
        for (a, b) in self.ring_active.iter_mut().zip(&other.ring_active) {
            *a += b;
        }
        for (a, b) in self
            .ring_active_successes
            .iter_mut()
            .zip(&other.ring_active_successes)
        {
            *a += b;
        }
        self.active_bs += other.active_bs;
        self.draws += other.draws;
        self
    }
}

/// Fixed-activity Monte Carlo: freeze the geometry, and per draw sample
/// i.i.d. Bernoulli(`q`) activity for every interfering base station plus
/// fresh unit-mean exponential fading on every link.  A draw succeeds for a
/// user when its SIR exceeds `params.sir_threshold`.
///
/// Identical seeds produce identical results regardless of worker count.
pub fn run_fixed_activity(
    snapshot: &GeometrySnapshot,
    params: &NetworkParams,
    q: f64,
    draws: u64,
    rng_seed: u64,
) -> Result<SimStats> {
    params.validate()?;
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("activity q must be in [0,1], got {q}")));
    }
    if draws == 0 {
        return Err(Error::Domain("draws must be >= 1".into()));
    }
    let table = build_link_table(snapshot, params);
    let n_users = snapshot.users.len();
    let theta = params.sir_threshold;

    let counts = (0..draws)
        .into_par_iter()
        .map(|draw| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(draw + 1);
            let mut local = DrawCounts::zero(n_users);
            local.draws = 1;

            let mut active = Vec::with_capacity(table.n_bs);
            for j in 0..table.n_bs {
                if rng.gen::<f64>() < q {
                    active.push(j as u32);
                }
            }
            local.active_bs = active.len() as u64;

            for u in 0..n_users {
                let row = &table.gain[u * table.n_bs..(u + 1) * table.n_bs];
                let fading: f64 = Exp1.sample(&mut rng);
                let signal = fading * table.serving_gain[u];
                let mut interference = q * table.far_field;
                for &j in &active {
                    let g = row[j as usize];
                    // The serving entry is zeroed in the gain table, so the
                    // serving BS never interferes with its own user.
                    if g > 0.0 {
                        let h: f64 = Exp1.sample(&mut rng);
                        interference += h * g;
                    }
                }
                let success = signal > theta * interference;
                if success {
                    local.successes[u] += 1;
                }
                let ring_hit = table.ring[u]
                    .iter()
                    .any(|m| active.binary_search(m).is_ok());
                if ring_hit {
                    local.ring_active[u] += 1;
                    if success {
                        local.ring_active_successes[u] += 1;
                    }
                }
            }
            local
        })
        .reduce(|| DrawCounts::zero(n_users), DrawCounts::add);

    let links = (0..n_users)
        .map(|u| LinkStats {
            user: u,
            class: snapshot.class[u],
            serving_distance: snapshot.link_distance[u],
            dominant_distance: snapshot.dominant_distance[u],
            attempts: draws,
            successes: counts.successes[u],
            ring_active_attempts: counts.ring_active[u],
            ring_active_successes: counts.ring_active_successes[u],
            serving_active: draws,
        })
        .collect();

    Ok(SimStats {
        links,
        measured_slots: draws,
        active_bs_slots: counts.active_bs,
        bs_count: table.n_bs as u64,
        bs_slot_opportunities: table.n_bs as u64 * draws,
        service_times: Vec::new(),
        arrivals: Vec::new(),
        departures: Vec::new(),
        final_backlog: Vec::new(),
    })
}

/// Queue-coupled discrete-time simulation.
///
/// Per slot: (1) each user receives a packet with probability `xi`
/// (arrivals land at the slot start, so a packet arriving into an empty
/// queue can be served in the same slot); (2) every base station with a
/// non-empty queue picks one uniformly at random and transmits its
/// head-of-line packet, empty base stations mute; (3) SIR is evaluated
/// against the concurrently active base stations with fresh fading;
/// success removes the packet, failure returns it to the head of its queue.
///
/// Link statistics are collected for slots `>= warmup`; the packet
/// conservation counters cover the whole run and satisfy
/// `arrivals = departures + final_backlog` per queue exactly.
pub fn run_queue_coupled(
    snapshot: &GeometrySnapshot,
    params: &NetworkParams,
    xi: f64,
    slots: u64,
    warmup: u64,
    rng_seed: u64,
) -> Result<SimStats> {
    params.validate()?;
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::Domain(format!("arrival rate must be in [0,1], got {xi}")));
    }
    if slots <= warmup {
        return Err(Error::Domain(format!(
            "slots ({slots}) must exceed warmup ({warmup})"
        )));
    }
    let table = build_link_table(snapshot, params);
    let n_users = snapshot.users.len();
    let n_bs = table.n_bs;
    let theta = params.sir_threshold;

    let mut users_of_bs: Vec<Vec<usize>> = vec![Vec::new(); n_bs];
    for (u, &b) in table.serving.iter().enumerate() {
        users_of_bs[b].push(u);
    }

    let mut queue_len = vec![0u64; n_users];
    let mut head_attempts = vec![0u64; n_users];
    let mut arrivals = vec![0u64; n_users];
    let mut departures = vec![0u64; n_users];
    let mut attempts = vec![0u64; n_users];
    let mut successes = vec![0u64; n_users];
    let mut serving_active = vec![0u64; n_users];
    let mut service_times = Vec::new();
    let mut active_bs_slots = 0u64;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut scheduled: Vec<(usize, usize)> = Vec::with_capacity(n_bs);
    let mut candidates: Vec<usize> = Vec::new();

    for slot in 0..slots {
        let measured = slot >= warmup;

        for u in 0..n_users {
            if rng.gen::<f64>() < xi {
                queue_len[u] += 1;
                arrivals[u] += 1;
                if queue_len[u] > MAX_QUEUE_LEN {
                    return Err(Error::Instability(format!(
                        "queue of user {u} exceeded {MAX_QUEUE_LEN} packets at slot {slot}; \
                         the system is operating beyond its stability region"
                    )));
                }
            }
        }

        scheduled.clear();
        for (b, users) in users_of_bs.iter().enumerate() {
            candidates.clear();
            candidates.extend(users.iter().copied().filter(|&u| queue_len[u] > 0));
            if candidates.is_empty() {
                continue;
            }
            let pick = candidates[rng.gen_range(0..candidates.len())];
            scheduled.push((b, pick));
        }

        if measured {
            active_bs_slots += scheduled.len() as u64;
        }

        // SIR outcomes against the concurrently active set, fresh fading per
        // active pair.
        for idx in 0..scheduled.len() {
            let (_b, u) = scheduled[idx];
            let fading: f64 = Exp1.sample(&mut rng);
            let signal = fading * table.serving_gain[u];
            let mut interference = table.far_field * scheduled.len() as f64 / n_bs as f64;
            let row = &table.gain[u * n_bs..(u + 1) * n_bs];
            for (other_idx, &(ob, _)) in scheduled.iter().enumerate() {
                if other_idx == idx {
                    continue;
                }
                let h: f64 = Exp1.sample(&mut rng);
                interference += h * row[ob];
            }
            let success = signal > theta * interference;
            if measured {
                attempts[u] += 1;
                serving_active[u] += 1;
                if success {
                    successes[u] += 1;
                }
            }
            if success {
                queue_len[u] -= 1;
                departures[u] += 1;
                if measured {
                    service_times.push(head_attempts[u] + 1);
                }
                head_attempts[u] = 0;
            } else {
                head_attempts[u] += 1;
            }
        }
    }

    let links = (0..n_users)
        .map(|u| LinkStats {
            user: u,
            class: snapshot.class[u],
            serving_distance: snapshot.link_distance[u],
            dominant_distance: snapshot.dominant_distance[u],
            attempts: attempts[u],
            successes: successes[u],
            ring_active_attempts: 0,
            ring_active_successes: 0,
            serving_active: serving_active[u],
        })
        .collect();

    Ok(SimStats {
        links,
        measured_slots: slots - warmup,
        active_bs_slots,
        bs_count: n_bs as u64,
        bs_slot_opportunities: n_bs as u64 * (slots - warmup),
        service_times,
        arrivals,
        departures,
        final_backlog: queue_len,
    })
}

/// Empirical meta distribution: the CCDF over qualifying links of the
/// per-link success fraction, evaluated on the given reliability grid.
///
/// Links with fewer than `min_attempts` attempts are excluded to avoid
/// small-sample bias in the CCDF tails.
pub fn empirical_meta(
    stats: &SimStats,
    class: Option<UserClass>,
    grid: &[f64],
    min_attempts: u64,
) -> Result<MetaCurve> {
    let p_hats: Vec<f64> = stats
        .qualifying_links(class, min_attempts.max(1))
        .filter_map(|l| l.p_hat())
        .collect();
    if p_hats.is_empty() {
        return Err(Error::TooFewLinks {
            count: 0,
            needed: 1,
        });
    }
    let n = p_hats.len() as f64;
    let values: Vec<f64> = grid
        .iter()
        .map(|&x| p_hats.iter().filter(|&&p| p > x).count() as f64 / n)
        .collect();
    MetaCurve::from_samples(grid, &values)
}

/// Empirical mean local delay over qualifying links.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayEstimate {
    /// Average of `1/P̂` over qualifying links — the `M₋₁` estimator.
    /// Infinite when any qualifying link never succeeded.
    pub inverse_p_mean: f64,
    /// Evidence of a diverging mean local delay: some link's success
    /// fraction is zero at this sample size.
    pub diverged: bool,
    /// Mean of the observed per-packet service times, when the run recorded
    /// any (queue-coupled mode).
    pub mean_service_time: Option<f64>,
    /// Number of links entering the estimate.
    pub links: usize,
}

pub fn empirical_mean_local_delay(
    stats: &SimStats,
    class: Option<UserClass>,
    min_attempts: u64,
) -> Result<DelayEstimate> {
    let mut sum = 0.0;
    let mut links = 0usize;
    let mut diverged = false;
    for l in stats.qualifying_links(class, min_attempts.max(1)) {
        let p = l.p_hat().expect("qualifying links have attempts > 0");
        if p == 0.0 {
            diverged = true;
        } else {
            sum += 1.0 / p;
        }
        links += 1;
    }
    if links == 0 {
        return Err(Error::TooFewLinks {
            count: 0,
            needed: 1,
        });
    }
    let mean_service_time = (!stats.service_times.is_empty())
        .then(|| stats.service_times.iter().sum::<u64>() as f64 / stats.service_times.len() as f64);
    Ok(DelayEstimate {
        inverse_p_mean: if diverged { f64::INFINITY } else { sum / links as f64 },
        diverged,
        mean_service_time,
        links,
    })
}

/// Convenience driver: aggregate fixed-activity statistics over several
/// independent geometry realizations (seeds `geometry_seed + g`).
pub fn run_fixed_activity_ensemble(
    params: &NetworkParams,
    q: f64,
    window_side: f64,
    geometries: u64,
    draws: u64,
    rng_seed: u64,
) -> Result<SimStats> {
    let mut total = SimStats::default();
    for g in 0..geometries {
        let snapshot = sample_with_retry(params, window_side, rng_seed.wrapping_add(g))?;
        let stats = run_fixed_activity(
            &snapshot,
            params,
            q,
            draws,
            rng_seed ^ (g.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        )?;
        total.merge(stats);
    }
    Ok(total)
}

fn sample_with_retry(
    params: &NetworkParams,
    window_side: f64,
    seed: u64,
) -> Result<GeometrySnapshot> {
    // An empty PPP draw is astronomically unlikely at realistic densities,
    // but retry with a perturbed seed rather than fail the whole ensemble.
    for bump in 0..4 {
        match crate::geometry::sample_network(params, window_side, seed.wrapping_add(bump << 32)) {
            Err(Error::EmptyProcess { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::EmptyProcess { seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_network;
    use crate::moments::{moment_ccu, moment_ceu, ActivityModel, MomentOrder};
    use crate::specialfn::SeriesControl;

    fn test_params() -> NetworkParams {
        NetworkParams::default()
    }

    fn small_snapshot(seed: u64) -> GeometrySnapshot {
        sample_network(&test_params(), 800.0, seed).unwrap()
    }

    #[test]
    fn fixed_activity_q_zero_always_succeeds() {
        let snap = small_snapshot(1);
        let stats = run_fixed_activity(&snap, &test_params(), 0.0, 50, 7).unwrap();
        for l in &stats.links {
            assert_eq!(l.successes, l.attempts);
            assert_eq!(l.p_hat(), Some(1.0));
        }
        assert_eq!(stats.active_bs_slots, 0);
    }

    #[test]
    fn fixed_activity_tiny_threshold_always_succeeds() {
        let snap = small_snapshot(2);
        let mut params = test_params();
        params.sir_threshold = 1e-12;
        let stats = run_fixed_activity(&snap, &params, 1.0, 20, 3).unwrap();
        for l in &stats.links {
            assert_eq!(l.successes, l.attempts);
        }
    }

    #[test]
    fn fixed_activity_deterministic_across_worker_counts() {
        let snap = small_snapshot(3);
        let params = test_params();
        let a = run_fixed_activity(&snap, &params, 0.6, 64, 99).unwrap();
        let b = run_fixed_activity(&snap, &params, 0.6, 64, 99).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = pool.install(|| run_fixed_activity(&snap, &params, 0.6, 64, 99).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn fixed_activity_matches_analytical_m1() {
        // Aggregated over geometries, the CCU and CEU success fractions must
        // agree with the closed-form first moments within 3 standard errors.
        let params = test_params().with_sir_db(0.0);
        let activity = ActivityModel::fixed(0.5);
        let ctrl = SeriesControl::default();
        let stats = run_fixed_activity_ensemble(&params, 0.5, 1000.0, 8, 500, 2024).unwrap();
        for (class, analytic) in [
            (
                UserClass::CellCenter,
                moment_ccu(MomentOrder::real(1.0), &params, &activity, &ctrl)
                    .unwrap()
                    .value
                    .re,
            ),
            (
                UserClass::CellEdge,
                moment_ceu(MomentOrder::real(1.0), &params, &activity, &ctrl)
                    .unwrap()
                    .value
                    .re,
            ),
        ] {
            let (m1, se) = stats.moment_estimate(1, Some(class), 1).unwrap();
            assert!(
                (m1 - analytic).abs() < 3.0 * se + 0.01,
                "{class}: sim {m1} ± {se} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn class_separation_in_empirical_m1() {
        let params = test_params().with_sir_db(0.0);
        let stats = run_fixed_activity_ensemble(&params, 0.6, 1000.0, 4, 300, 5).unwrap();
        let (ccu, _) = stats
            .moment_estimate(1, Some(UserClass::CellCenter), 1)
            .unwrap();
        let (ceu, _) = stats
            .moment_estimate(1, Some(UserClass::CellEdge), 1)
            .unwrap();
        assert!(ccu > ceu, "CCU m1 {ccu} should exceed CEU m1 {ceu}");
    }

    #[test]
    fn standard_error_shrinks_like_sqrt_draws() {
        // The spread of the per-user success fraction around its long-run
        // value must scale as draws^{-1/2}.
        let snap = small_snapshot(11);
        let params = test_params();
        let spread = |draws: u64| {
            let runs: Vec<SimStats> = (0..24)
                .map(|k| run_fixed_activity(&snap, &params, 0.5, draws, 1000 + k).unwrap())
                .collect();
            let u = 0usize;
            let vals: Vec<f64> = runs.iter().map(|s| s.links[u].p_hat().unwrap()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64)
                .sqrt()
        };
        let s_small = spread(64);
        let s_large = spread(256);
        let ratio = s_small / s_large;
        assert!(
            (1.2..=3.4).contains(&ratio),
            "expected ~2x shrink from 4x draws, got ratio {ratio}"
        );
    }

    #[test]
    fn ring_conditioning_counters_are_consistent() {
        let snap = small_snapshot(13);
        let stats = run_fixed_activity(&snap, &test_params(), 0.7, 200, 17).unwrap();
        for l in &stats.links {
            assert!(l.ring_active_attempts <= l.attempts);
            assert!(l.ring_active_successes <= l.ring_active_attempts);
            assert!(l.successes - l.ring_active_successes <= l.attempts - l.ring_active_attempts);
        }
        // For cell-edge users the dominant interferer lies in the ring, so
        // with q = 0.7 the ring must be active in roughly 70% of draws or
        // more (other ring members only add to the hit rate).
        let ceu_hit: Vec<f64> = stats
            .links
            .iter()
            .filter(|l| l.class == UserClass::CellEdge)
            .map(|l| l.ring_active_attempts as f64 / l.attempts as f64)
            .collect();
        let mean_hit = ceu_hit.iter().sum::<f64>() / ceu_hit.len() as f64;
        assert!(mean_hit >= 0.68, "CEU ring hit rate {mean_hit} < q");
    }

    #[test]
    fn empirical_meta_trivial_shapes() {
        let grid = [0.25, 0.5, 0.75];
        let mut stats = SimStats::default();
        stats.links.push(LinkStats {
            user: 0,
            class: UserClass::CellCenter,
            serving_distance: 10.0,
            dominant_distance: 30.0,
            attempts: 400,
            successes: 200,
            ring_active_attempts: 0,
            ring_active_successes: 0,
            serving_active: 400,
        });
        let curve = empirical_meta(&stats, None, &grid, 200).unwrap();
        // Single link with p-hat 0.5: CCDF is a step at 0.5.
        assert_eq!(curve.eval(0.25), 1.0);
        assert_eq!(curve.eval(0.75), 0.0);

        stats.links[0].successes = 400;
        let curve = empirical_meta(&stats, None, &grid, 200).unwrap();
        assert_eq!(curve.eval(0.75), 1.0);

        stats.links[0].attempts = 100;
        assert!(matches!(
            empirical_meta(&stats, None, &grid, 200),
            Err(Error::TooFewLinks { .. })
        ));
    }

    #[test]
    fn empirical_delay_trivial_values() {
        let mk = |successes: u64| LinkStats {
            user: 0,
            class: UserClass::CellEdge,
            serving_distance: 10.0,
            dominant_distance: 12.0,
            attempts: 400,
            successes,
            ring_active_attempts: 0,
            ring_active_successes: 0,
            serving_active: 400,
        };
        let mut stats = SimStats::default();
        stats.links.push(mk(200)); // p = 1/2 -> delay 2
        stats.links.push(mk(100)); // p = 1/4 -> delay 4
        let est = empirical_mean_local_delay(&stats, None, 200).unwrap();
        assert_eq!(est.inverse_p_mean, 3.0);
        assert!(!est.diverged);
        assert_eq!(est.mean_service_time, None);

        stats.links.push(mk(0));
        let est = empirical_mean_local_delay(&stats, None, 200).unwrap();
        assert!(est.diverged);
        assert!(est.inverse_p_mean.is_infinite());
    }

    #[test]
    fn queue_coupled_zero_arrivals_stay_silent() {
        let snap = small_snapshot(21);
        let stats = run_queue_coupled(&snap, &test_params(), 0.0, 200, 50, 3).unwrap();
        assert_eq!(stats.active_bs_slots, 0);
        assert!(stats.links.iter().all(|l| l.attempts == 0));
        assert!(stats.arrivals.iter().all(|&a| a == 0));
    }

    #[test]
    fn queue_coupled_packet_conservation_exact() {
        let snap = small_snapshot(22);
        let params = test_params().with_sir_db(5.0);
        let stats = run_queue_coupled(&snap, &params, 0.08, 1500, 300, 41).unwrap();
        assert!(stats.arrivals.iter().sum::<u64>() > 0);
        for u in 0..stats.links.len() {
            assert_eq!(
                stats.arrivals[u],
                stats.departures[u] + stats.final_backlog[u],
                "conservation violated for user {u}"
            );
        }
    }

    #[test]
    fn queue_coupled_deterministic() {
        let snap = small_snapshot(23);
        let params = test_params();
        let a = run_queue_coupled(&snap, &params, 0.1, 400, 100, 5).unwrap();
        let b = run_queue_coupled(&snap, &params, 0.1, 400, 100, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn queue_coupled_certain_success_gives_unit_service_times() {
        let snap = small_snapshot(24);
        let mut params = test_params();
        params.sir_threshold = 1e-12;
        let stats = run_queue_coupled(&snap, &params, 0.05, 800, 100, 9).unwrap();
        assert!(!stats.service_times.is_empty());
        assert!(stats.service_times.iter().all(|&t| t == 1));
        // With certain success a queue never holds more than the packet
        // currently being served plus same-slot arrivals.
        assert!(stats.final_backlog.iter().all(|&b| b <= 1));
    }

    #[test]
    fn queue_coupled_saturated_arrivals_keep_every_bs_busy() {
        // With an arrival every slot, every base station that serves at
        // least one user transmits in every measured slot.
        let snap = small_snapshot(25);
        let stats = run_queue_coupled(&snap, &test_params(), 1.0, 300, 50, 13).unwrap();
        let mut has_user = vec![false; snap.bs.len()];
        for &b in &snap.association {
            has_user[b] = true;
        }
        let loaded = has_user.iter().filter(|&&h| h).count() as u64;
        assert_eq!(stats.active_bs_slots, loaded * stats.measured_slots);
    }
}
