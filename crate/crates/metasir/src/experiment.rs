//! Experiment orchestration: turns an [`ExperimentConfig`] into a set of CSV
//! files plus a `run_manifest.txt` recording the full configuration, seeds,
//! library version, output list, and any formula/oracle discrepancy flags.
//!
//! Outputs are deterministic: reruns with an identical manifest reproduce
//! byte-identical files (no timestamps, fixed float formatting, fixed seed
//! derivation).  Each file is written atomically (temp file + rename).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::geometry::{NetworkParams, UserClass};
use crate::metadist::{
    fixed_point_solve, meta_distribution_on, InversionMethod, MetaCurve, UpdateMode,
};
use crate::moments::{
    mean_local_delay, moment_ccu, moment_ceu, ActivityModel, MomentOrder,
};
use crate::simulator::{empirical_meta, run_fixed_activity_ensemble, run_queue_coupled, SimStats};
use crate::specialfn::SeriesControl;

/// Disagreements between a closed form and its Monte Carlo estimate beyond
/// this many standard errors are flagged in the manifest rather than
/// silently trusted.
const FLAG_Z_SCORE: f64 = 5.0;

const CLASSES: [UserClass; 2] = [UserClass::CellCenter, UserClass::CellEdge];

/// What a run produced.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    /// File names written into the output directory (manifest excluded),
    /// in write order.
    pub outputs: Vec<String>,
    /// Formula/oracle discrepancy flags (grid point and z-score).
    pub flags: Vec<String>,
    /// Path of the manifest file.
    pub manifest: PathBuf,
}

/// Write `contents` to `dir/name` atomically.
fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    let tmp = dir.join(format!("{name}.tmp"));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn curve_to_bytes(curve: &MetaCurve) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    Ok(buf)
}

fn class_label(class: UserClass) -> &'static str {
    match class {
        UserClass::CellCenter => "ccu",
        UserClass::CellEdge => "ceu",
    }
}

fn method_label(method: InversionMethod) -> &'static str {
    match method {
        InversionMethod::GilPelaez => "gil_pelaez",
        InversionMethod::BetaApprox => "beta",
    }
}

/// Deterministic per-task seed derivation from the root seed.
fn task_seed(root: u64, task: u64) -> u64 {
    root ^ task.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn analytic_moment(
    b: f64,
    params: &NetworkParams,
    activity: &ActivityModel,
    class: UserClass,
    ctrl: &SeriesControl,
) -> Result<f64> {
    let order = MomentOrder::real(b);
    let m = match class {
        UserClass::CellCenter => moment_ccu(order, params, activity, ctrl)?,
        UserClass::CellEdge => moment_ceu(order, params, activity, ctrl)?,
    };
    Ok(m.value.re)
}

/// Run the configured experiment, writing outputs and the manifest into
/// `config.run.output_dir`.  Returns the report; hard numerical failures
/// surface as errors (the CLI maps them to a nonzero exit status).
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let dir = PathBuf::from(&config.run.output_dir);
    std::fs::create_dir_all(&dir)?;

    let mut report = RunReport::default();
    match config.kind {
        ExperimentKind::Moments => run_moments(config, &dir, &mut report)?,
        ExperimentKind::Metadist => run_metadist(config, &dir, &mut report)?,
        ExperimentKind::Delay => run_delay(config, &dir, &mut report)?,
        ExperimentKind::FixedPoint => run_fixed_point(config, &dir, &mut report)?,
        ExperimentKind::Simulate => run_simulate(config, &dir, &mut report)?,
        ExperimentKind::Compare => run_compare(config, &dir, &mut report)?,
    }

    report.manifest = dir.join("run_manifest.txt");
    let manifest = render_manifest(config, &report)?;
    write_atomic(&dir, "run_manifest.txt", manifest.as_bytes())?;
    Ok(report)
}

/// Render the machine-readable run manifest (also exposed for tests).
pub fn render_manifest(config: &ExperimentConfig, report: &RunReport) -> Result<String> {
    let mut m = String::new();
    let _ = writeln!(m, "manifest_version = 1");
    let _ = writeln!(m, "library_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "kind = {}", config.kind);
    let _ = writeln!(m, "seed = {}", config.run.seed);
    for out in &report.outputs {
        let _ = writeln!(m, "output = {out}");
    }
    for flag in &report.flags {
        let _ = writeln!(m, "flag = {flag}");
    }
    let _ = writeln!(m, "[config]");
    m.push_str(&config.to_toml()?);
    Ok(m)
}

fn push_output(
    dir: &Path,
    name: String,
    contents: &[u8],
    report: &mut RunReport,
) -> Result<()> {
    write_atomic(dir, &name, contents)?;
    report.outputs.push(name);
    Ok(())
}

fn run_moments(config: &ExperimentConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    let ctrl = SeriesControl::default();
    let mut csv = String::from("class,theta_db,q,b,moment\n");
    for class in CLASSES {
        for &theta_db in &config.grids.theta_db {
            let params = config.network.to_params().with_sir_db(theta_db);
            for &q in &config.grids.q {
                let activity = ActivityModel::fixed(q);
                for &b in &config.grids.b {
                    let m = analytic_moment(b, &params, &activity, class, &ctrl)?;
                    let _ = writeln!(
                        csv,
                        "{},{theta_db},{q},{b},{m:.12}",
                        class_label(class)
                    );
                }
            }
        }
    }
    push_output(dir, "moments.csv".into(), csv.as_bytes(), report)
}

fn run_metadist(config: &ExperimentConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    let activity = ActivityModel::fixed(config.traffic.activity);
    for &ratio in &config.grids.ratio {
        let mut params = config.network.to_params();
        params.ratio_threshold = ratio;
        for class in CLASSES {
            for method in [InversionMethod::GilPelaez, InversionMethod::BetaApprox] {
                let curve =
                    meta_distribution_on(&params, &activity, class, method, &config.grids.x)?;
                let name = format!(
                    "metadist_{}_{}_r{ratio:.2}.csv",
                    class_label(class),
                    method_label(method)
                );
                push_output(dir, name, &curve_to_bytes(&curve)?, report)?;
            }
        }
    }
    Ok(())
}

fn run_delay(config: &ExperimentConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    for class in CLASSES {
        for &theta_db in &config.grids.theta_db {
            let params = config.network.to_params().with_sir_db(theta_db);
            let mut csv = String::from("q,mean_local_delay\n");
            for &q in &config.grids.q {
                let d = mean_local_delay(&params, &ActivityModel::fixed(q), class)?;
                if d.is_finite() {
                    let _ = writeln!(csv, "{q},{d:.9}");
                } else {
                    let _ = writeln!(csv, "{q},inf");
                }
            }
            let name = format!("delay_{}_t{theta_db:.1}dB.csv", class_label(class));
            push_output(dir, name, csv.as_bytes(), report)?;
        }
    }
    Ok(())
}

fn run_fixed_point(config: &ExperimentConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    let params = config.network.to_params();
    let mut csv = String::from("class,xi,q_star,iterations,residual,converged,saturated\n");
    for class in CLASSES {
        for &xi in &config.grids.xi {
            let result = fixed_point_solve(
                &params,
                xi,
                class,
                InversionMethod::BetaApprox,
                UpdateMode::Simultaneous,
            )?;
            let _ = writeln!(
                csv,
                "{},{xi},{:.9},{},{:.3e},{},{}",
                class_label(class),
                result.q_star,
                result.iterations,
                result.residual,
                result.converged,
                result.saturated
            );
            let name = format!("fpcurve_{}_xi{xi:.3}.csv", class_label(class));
            push_output(dir, name, &curve_to_bytes(&result.curve)?, report)?;
        }
    }
    push_output(dir, "fixed_point.csv".into(), csv.as_bytes(), report)
}

fn simulate_ensemble(config: &ExperimentConfig, q: f64, task: u64) -> Result<SimStats> {
    run_fixed_activity_ensemble(
        &config.network.to_params(),
        q,
        config.sim.window_side,
        config.sim.geometries,
        config.sim.draws,
        task_seed(config.run.seed, task),
    )
}

fn run_simulate(config: &ExperimentConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    // Fixed-activity ensemble at the configured activity...
    let stats = simulate_ensemble(config, config.traffic.activity, 0)?;
    let mut links = Vec::new();
    stats.write_links_csv(&mut links)?;
    push_output(dir, "links.csv".into(), &links, report)?;
    for class in CLASSES {
        let curve = empirical_meta(
            &stats,
            Some(class),
            &config.grids.x,
            config.sim.min_attempts.min(config.sim.draws),
        )?;
        let name = format!("empirical_{}.csv", class_label(class));
        push_output(dir, name, &curve_to_bytes(&curve)?, report)?;
    }
    // ...plus one queue-coupled run at the configured arrival rate for the
    // temporal statistics (service times, emergent activity, conservation).
    let snapshot = crate::geometry::sample_network(
        &config.network.to_params(),
        config.sim.window_side,
        task_seed(config.run.seed, 1),
    )?;
    let queue = run_queue_coupled(
        &snapshot,
        &config.network.to_params(),
        config.traffic.arrival_rate,
        config.sim.slots,
        config.sim.warmup,
        task_seed(config.run.seed, 2),
    )?;
    let mut csv = String::from("metric,value\n");
    let _ = writeln!(csv, "empirical_activity,{:.9}", queue.activity_fraction());
    let _ = writeln!(
        csv,
        "mean_service_time,{}",
        if queue.service_times.is_empty() {
            "nan".to_string()
        } else {
            format!(
                "{:.9}",
                queue.service_times.iter().sum::<u64>() as f64
                    / queue.service_times.len() as f64
            )
        }
    );
    let total_backlog: u64 = queue.final_backlog.iter().sum();
    let _ = writeln!(csv, "final_backlog,{total_backlog}");
    push_output(dir, "queue_summary.csv".into(), csv.as_bytes(), report)
}

fn run_compare(config: &ExperimentConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    let ctrl = SeriesControl::default();
    let mut csv = String::from("class,theta_db,q,order,analytic,simulated,std_err,z_score,flag\n");
    let mut task = 0u64;
    for &theta_db in &config.grids.theta_db {
        for &q in &config.grids.q {
            task += 1;
            let mut cfg = config.clone();
            cfg.network.sir_threshold_db = theta_db;
            let stats = simulate_ensemble(&cfg, q, task)?;
            let params = config.network.to_params().with_sir_db(theta_db);
            let activity = ActivityModel::fixed(q);
            for class in CLASSES {
                for order in [1u32, 2u32] {
                    let analytic =
                        analytic_moment(order as f64, &params, &activity, class, &ctrl)?;
                    let (sim, se) = stats.moment_estimate(order, Some(class), 1)?;
                    let z = if se > 0.0 {
                        (analytic - sim).abs() / se
                    } else {
                        0.0
                    };
                    let flagged = z > FLAG_Z_SCORE;
                    let _ = writeln!(
                        csv,
                        "{},{theta_db},{q},{order},{analytic:.9},{sim:.9},{se:.3e},{z:.2},{}",
                        class_label(class),
                        flagged
                    );
                    if flagged {
                        report.flags.push(format!(
                            "{} theta_db={theta_db} q={q} M{order}: analytic {analytic:.6} vs \
                             simulated {sim:.6} (z={z:.1})",
                            class_label(class)
                        ));
                    }
                }
            }
        }
    }
    push_output(dir, "compare.csv".into(), csv.as_bytes(), report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, ExperimentKind};

    fn small_config(kind: ExperimentKind, out: &Path) -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.kind = kind;
        config.run.output_dir = out.to_str().unwrap().to_string();
        config.run.seed = 7;
        config.grids.theta_db = vec![0.0, 5.0];
        config.grids.q = vec![0.3, 0.7];
        config.grids.b = vec![1.0, 2.0];
        config.grids.xi = vec![0.02, 0.05];
        config.grids.ratio = vec![0.5];
        config.grids.x = vec![0.1, 0.3, 0.5, 0.7, 0.9];
        config.sim.window_side = 700.0;
        config.sim.geometries = 2;
        config.sim.draws = 150;
        config.sim.min_attempts = 100;
        config.sim.slots = 600;
        config.sim.warmup = 200;
        config
    }

    #[test]
    fn moments_experiment_writes_full_grid() {
        let tmp = tempfile::tempdir().unwrap();
        let config = small_config(ExperimentKind::Moments, tmp.path());
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.outputs, vec!["moments.csv".to_string()]);
        let text = std::fs::read_to_string(tmp.path().join("moments.csv")).unwrap();
        // header + 2 classes × 2 θ × 2 q × 2 b
        assert_eq!(text.lines().count(), 1 + 16);
        assert!(tmp.path().join("run_manifest.txt").exists());
    }

    #[test]
    fn manifest_is_byte_stable_across_reruns() {
        let tmp = tempfile::tempdir().unwrap();
        let config = small_config(ExperimentKind::Moments, tmp.path());
        run_experiment(&config).unwrap();
        let first = std::fs::read(tmp.path().join("run_manifest.txt")).unwrap();
        let data_first = std::fs::read(tmp.path().join("moments.csv")).unwrap();
        run_experiment(&config).unwrap();
        let second = std::fs::read(tmp.path().join("run_manifest.txt")).unwrap();
        let data_second = std::fs::read(tmp.path().join("moments.csv")).unwrap();
        assert_eq!(first, second);
        assert_eq!(data_first, data_second);
    }

    #[test]
    fn delay_experiment_marks_divergence() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = small_config(ExperimentKind::Delay, tmp.path());
        config.grids.theta_db = vec![5.0];
        config.grids.q = vec![0.1, 0.5, 0.9];
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.outputs.len(), 2);
        let ceu = std::fs::read_to_string(tmp.path().join("delay_ceu_t5.0dB.csv")).unwrap();
        // At 5 dB the CEU delay is finite at low activity and diverges at
        // high activity.
        assert!(ceu.lines().nth(1).unwrap().split(',').nth(1).unwrap() != "inf");
        assert!(ceu.lines().nth(3).unwrap().ends_with("inf"), "{ceu}");
    }

    #[test]
    fn metadist_experiment_round_trips_curves() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = small_config(ExperimentKind::Metadist, tmp.path());
        // Beta only happens per method loop; keep the GP grid tiny for speed.
        config.grids.x = vec![0.2, 0.5, 0.8];
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.outputs.len(), 4); // 1 ratio × 2 classes × 2 methods
        for name in &report.outputs {
            let file = std::fs::File::open(tmp.path().join(name)).unwrap();
            let curve = MetaCurve::read_csv(std::io::BufReader::new(file)).unwrap();
            let mut buf = Vec::new();
            curve.write_csv(&mut buf).unwrap();
            let original = std::fs::read(tmp.path().join(name)).unwrap();
            assert_eq!(buf, original, "{name} did not round-trip");
        }
    }

    #[test]
    fn compare_experiment_reports_z_scores() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = small_config(ExperimentKind::Compare, tmp.path());
        config.grids.theta_db = vec![0.0];
        config.grids.q = vec![0.5];
        let report = run_experiment(&config).unwrap();
        let text = std::fs::read_to_string(tmp.path().join("compare.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 4); // 2 classes × 2 orders
        // A healthy run at this size should not flag discrepancies, but any
        // flags must be mirrored in the manifest.
        let manifest = std::fs::read_to_string(&report.manifest).unwrap();
        for flag in &report.flags {
            assert!(manifest.contains(flag));
        }
    }

    #[test]
    fn simulate_experiment_exports_links_and_curves() {
        let tmp = tempfile::tempdir().unwrap();
        let config = small_config(ExperimentKind::Simulate, tmp.path());
        run_experiment(&config).unwrap();
        let links = std::fs::read_to_string(tmp.path().join("links.csv")).unwrap();
        assert!(links.starts_with("link,class,serving_distance"));
        assert!(links.lines().count() > 10);
        assert!(tmp.path().join("empirical_ccu.csv").exists());
        assert!(tmp.path().join("empirical_ceu.csv").exists());
        assert!(tmp.path().join("queue_summary.csv").exists());
    }

    #[test]
    fn fixed_point_experiment_monotone_in_xi() {
        let tmp = tempfile::tempdir().unwrap();
        let config = small_config(ExperimentKind::FixedPoint, tmp.path());
        run_experiment(&config).unwrap();
        let text = std::fs::read_to_string(tmp.path().join("fixed_point.csv")).unwrap();
        let q_stars: Vec<(String, f64)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let mut parts = l.split(',');
                let class = parts.next().unwrap().to_string();
                let _xi = parts.next().unwrap();
                (class, parts.next().unwrap().parse::<f64>().unwrap())
            })
            .collect();
        for pair in q_stars.chunks(2) {
            if pair.len() == 2 && pair[0].0 == pair[1].0 {
                assert!(pair[0].1 <= pair[1].1 + 1e-6, "q* not monotone in xi");
            }
        }
    }
}
