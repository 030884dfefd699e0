//! Experiment configuration: a TOML file with dotted sections describing the
//! network constants, traffic constants, the experiment kind, sweep grids,
//! and simulation sizes.  SIR thresholds are expressed in dB at this
//! interface and converted to linear scale internally.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{db_to_linear, NetworkParams};

/// Temporal constants of the traffic model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficParams {
    /// Bernoulli packet arrival probability ξ per user per slot.
    pub arrival_rate: f64,
    /// Base-station active probability q in the decoupled (fixed-activity)
    /// model.
    pub activity: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            arrival_rate: 0.1,
            activity: 0.5,
        }
    }
}

/// Which experiment `run_experiment` executes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Analytical moment tables over the (θ, q, b) grids.
    Moments,
    /// Meta-distribution curves (Gil-Pelaez and beta) over the ratio grid.
    Metadist,
    /// Mean local delay versus activity, per SIR threshold.
    Delay,
    /// Traffic-coupled fixed-point solutions over the arrival-rate grid.
    FixedPoint,
    /// Monte Carlo run exporting per-link statistics and empirical curves.
    Simulate,
    /// Analytics-versus-simulator comparison with per-point z-scores.
    Compare,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ExperimentKind::Moments => "moments",
            ExperimentKind::Metadist => "metadist",
            ExperimentKind::Delay => "delay",
            ExperimentKind::FixedPoint => "fixed_point",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Compare => "compare",
        };
        write!(f, "{name}")
    }
}

/// Network section as written in the config file (θ in dB).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub bs_density: f64,
    pub user_density: f64,
    pub pathloss_exponent: f64,
    pub ratio_threshold: f64,
    pub sir_threshold_db: f64,
    pub tx_power_dbm: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let p = NetworkParams::default();
        NetworkSection {
            bs_density: p.bs_density,
            user_density: p.user_density,
            pathloss_exponent: p.pathloss_exponent,
            ratio_threshold: p.ratio_threshold,
            sir_threshold_db: 0.0,
            tx_power_dbm: p.tx_power_dbm,
        }
    }
}

impl NetworkSection {
    /// Convert to the internal linear-scale parameter set.
    pub fn to_params(&self) -> NetworkParams {
        NetworkParams {
            bs_density: self.bs_density,
            user_density: self.user_density,
            pathloss_exponent: self.pathloss_exponent,
            ratio_threshold: self.ratio_threshold,
            sir_threshold: db_to_linear(self.sir_threshold_db),
            tx_power_dbm: self.tx_power_dbm,
        }
    }
}

/// Sweep grids; every grid must be non-empty and strictly ascending.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    /// Reliability grid for meta-distribution curves.
    pub x: Vec<f64>,
    /// Activity grid.
    pub q: Vec<f64>,
    /// SIR threshold grid, dB.
    pub theta_db: Vec<f64>,
    /// Arrival-rate grid.
    pub xi: Vec<f64>,
    /// Ratio-threshold grid.
    pub ratio: Vec<f64>,
    /// Moment orders.
    pub b: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            x: crate::metadist::default_grid(),
            q: vec![0.3, 0.5, 0.7],
            theta_db: vec![0.0, 5.0, 10.0],
            xi: vec![0.01, 0.05, 0.1, 0.25],
            ratio: vec![0.4, 0.5, 0.6],
            b: vec![1.0, 2.0],
        }
    }
}

/// Monte Carlo sizing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Torus window side (m).
    pub window_side: f64,
    /// Independent geometry realizations.
    pub geometries: u64,
    /// Activity/fading draws per geometry (fixed-activity mode).
    pub draws: u64,
    /// Total slots (queue-coupled mode).
    pub slots: u64,
    /// Discarded burn-in slots (queue-coupled mode).
    pub warmup: u64,
    /// Minimum attempts for a link to enter empirical estimates.
    pub min_attempts: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            window_side: 1200.0,
            geometries: 8,
            draws: 500,
            slots: 4000,
            warmup: 2000,
            min_attempts: 200,
        }
    }
}

/// Run metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Root seed; all task seeds derive from it deterministically.
    pub seed: u64,
    /// Output directory for CSV files and the manifest.
    pub output_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 1,
            output_dir: "out".into(),
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub network: NetworkSection,
    pub traffic: TrafficParams,
    pub kind: ExperimentKind,
    pub grids: Grids,
    pub sim: SimSection,
    pub run: RunSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            network: NetworkSection::default(),
            traffic: TrafficParams::default(),
            kind: ExperimentKind::Moments,
            grids: Grids::default(),
            sim: SimSection::default(),
            run: RunSection::default(),
        }
    }
}

fn check_grid(name: &str, grid: &[f64], problems: &mut Vec<String>) {
    if grid.is_empty() {
        problems.push(format!("grids.{name} must be non-empty"));
        return;
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        problems.push(format!("grids.{name} must be strictly ascending"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        problems.push(format!("grids.{name} must be finite"));
    }
}

impl ExperimentConfig {
    /// Parse a TOML configuration string.
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    /// Load and validate a configuration file.
    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let config = Self::from_toml(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// Serialize back to TOML (used by the run manifest).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Validate every invariant and report all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();

        if let Err(e) = self.network.to_params().validate() {
            problems.push(format!("network: {e}"));
        }
        if !(0.0..=1.0).contains(&self.traffic.arrival_rate) {
            problems.push(format!(
                "traffic.arrival_rate must be in [0,1], got {}",
                self.traffic.arrival_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.traffic.activity) {
            problems.push(format!(
                "traffic.activity must be in [0,1], got {}",
                self.traffic.activity
            ));
        }

        check_grid("x", &self.grids.x, &mut problems);
        check_grid("q", &self.grids.q, &mut problems);
        check_grid("theta_db", &self.grids.theta_db, &mut problems);
        check_grid("xi", &self.grids.xi, &mut problems);
        check_grid("ratio", &self.grids.ratio, &mut problems);
        check_grid("b", &self.grids.b, &mut problems);
        if self.grids.x.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            problems.push("grids.x values must lie in [0,1]".into());
        }
        if self.grids.q.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
            problems.push("grids.q values must lie in [0,1]".into());
        }
        if self.grids.xi.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            problems.push("grids.xi values must lie in [0,1]".into());
        }
        if self
            .grids
            .ratio
            .iter()
            .any(|&r| !(r > 0.0 && r < 1.0))
        {
            problems.push("grids.ratio values must lie in (0,1)".into());
        }

        if !(self.sim.window_side > 0.0) {
            problems.push("sim.window_side must be > 0".into());
        }
        if self.sim.geometries == 0 {
            problems.push("sim.geometries must be >= 1".into());
        }
        if self.sim.draws == 0 {
            problems.push("sim.draws must be >= 1".into());
        }
        if self.sim.slots <= self.sim.warmup {
            problems.push(format!(
                "sim.slots ({}) must exceed sim.warmup ({})",
                self.sim.slots, self.sim.warmup
            ));
        }
        if self.run.output_dir.is_empty() {
            problems.push("run.output_dir must be non-empty".into());
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
