//! Run configuration files (TOML, schema version 1).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub soliton: SolitonConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub widthsweep: WidthSweepConfig,
    #[serde(default)]
    pub gasmodel: GasModelConfig,
}

/// One packet of an initial superposition. Positions and widths are in
/// units of `hbar / sigma_G`.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PacketSpec {
    pub x: f64,
    #[serde(default = "one")]
    pub width: f64,
    pub weight: f64,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolitonConfig {
    pub kappa: f64,
    pub n: usize,
    /// Domain length in units of `hbar / sigma_G`.
    pub domain: f64,
    /// Time step; `0.1 dx^2 m / hbar` when absent.
    pub dt: Option<f64>,
    /// Simulated time limit in dispersion times.
    pub t_max: f64,
    pub convergence_tol: f64,
    /// Slope of `V(x) = a x` in natural units.
    pub potential_slope: f64,
    /// Common momentum of the initial packets in units of `sigma_G`.
    pub momentum: f64,
    /// Initial superposition; a single Gaussian of width `hbar/sigma_G` when empty.
    pub packets: Vec<PacketSpec>,
    /// Write the profile at every check.
    pub profiles: bool,
}

impl Default for SolitonConfig {
    fn default() -> Self {
        Self {
            kappa: 1e-3,
            n: 4096,
            domain: 80.0,
            dt: None,
            t_max: 20.0,
            convergence_tol: 1e-6,
            potential_slope: 0.0,
            momentum: 0.0,
            packets: Vec::new(),
            profiles: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub n: usize,
    pub n_trials: usize,
    /// Significance level of the chi-square test.
    pub alpha: f64,
    /// Test the counts against uniform weights instead of the true ones.
    pub negative_control: bool,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self { n: 2, n_trials: 10_000, alpha: 0.01, negative_control: false }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub kappa: f64,
    pub n: usize,
    pub domain: f64,
    pub packets: Vec<PacketSpec>,
    pub trajectories: usize,
    pub dt: f64,
    pub reference_dt: f64,
    /// Snapshot times in units of `1/gamma`.
    pub times: Vec<f64>,
    /// Number of trajectories whose snapshots are written as binary files.
    pub binary_snapshots: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            n: 64,
            domain: 32.0,
            packets: vec![
                PacketSpec { x: -4.0, width: 1.0, weight: 0.6, phase: 0.0 },
                PacketSpec { x: 4.0, width: 1.0, weight: 0.4, phase: 0.0 },
            ],
            trajectories: 1000,
            dt: 0.02,
            reference_dt: 0.005,
            times: vec![0.5, 1.0, 2.0],
            binary_snapshots: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WidthSweepConfig {
    /// Explicit list; overrides the log-spaced range when non-empty.
    pub kappas: Vec<f64>,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub points: usize,
    pub n: usize,
    pub domain: f64,
    pub dt_factor: f64,
    pub convergence_tol: f64,
    pub min_time: f64,
    pub max_dispersion_times: f64,
    /// Reuse rows cached in the output directory.
    pub resume: bool,
}

impl Default for WidthSweepConfig {
    fn default() -> Self {
        Self {
            kappas: Vec::new(),
            kappa_min: 1e-4,
            kappa_max: 10.0,
            points: 8,
            n: 4096,
            domain: 80.0,
            dt_factor: 0.1,
            convergence_tol: 1e-6,
            min_time: 400.0,
            max_dispersion_times: 4.0,
            resume: true,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GasModelConfig {
    pub a_loc: f64,
    pub lambda_th: f64,
    pub ell_free: Vec<f64>,
}

impl Default for GasModelConfig {
    fn default() -> Self {
        Self { a_loc: 0.4, lambda_th: 1.0, ell_free: vec![0.01, 0.1, 1.0, 10.0, 100.0] }
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

fn check_packets(section: &str, packets: &[PacketSpec]) -> Result<(), CliError> {
    for (i, p) in packets.iter().enumerate() {
        positive(&format!("{section}.packets[{i}].width"), p.width)?;
        if !(p.weight >= 0.0 && p.weight.is_finite()) || !p.x.is_finite() || !p.phase.is_finite() {
            return Err(CliError::Config(format!("{section}.packets[{i}] has an invalid weight, position or phase")));
        }
    }
    if !packets.is_empty() && packets.iter().all(|p| p.weight == 0.0) {
        return Err(CliError::Config(format!("{section}.packets has zero total weight")));
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Defaults for every section.
    pub fn defaults() -> Self {
        Self { schema_version: SCHEMA_VERSION, ..Self::default() }
    }

    pub fn validate_soliton(&self) -> Result<(), CliError> {
        let s = &self.soliton;
        positive("soliton.kappa", s.kappa)?;
        positive("soliton.domain", s.domain)?;
        positive("soliton.t_max", s.t_max)?;
        positive("soliton.convergence_tol", s.convergence_tol)?;
        if let Some(dt) = s.dt {
            positive("soliton.dt", dt)?;
        }
        if !s.potential_slope.is_finite() || !s.momentum.is_finite() {
            return Err(CliError::Config("soliton.potential_slope and soliton.momentum must be finite".into()));
        }
        check_packets("soliton", &s.packets)
    }

    pub fn validate_weights(&self) -> Result<(), CliError> {
        let w = &self.weights;
        if !(2..=100).contains(&w.n) {
            return Err(CliError::Config(format!("weights.n must lie in [2, 100], got {}", w.n)));
        }
        if !(w.alpha > 0.0 && w.alpha < 1.0) {
            return Err(CliError::Config(format!("weights.alpha must lie in (0, 1), got {}", w.alpha)));
        }
        Ok(())
    }

    pub fn validate_ensemble(&self) -> Result<(), CliError> {
        let e = &self.ensemble;
        positive("ensemble.kappa", e.kappa)?;
        positive("ensemble.domain", e.domain)?;
        positive("ensemble.dt", e.dt)?;
        positive("ensemble.reference_dt", e.reference_dt)?;
        if e.trajectories == 0 {
            return Err(CliError::Config("ensemble.trajectories must be at least 1".into()));
        }
        if e.packets.is_empty() {
            return Err(CliError::Config("ensemble.packets must not be empty".into()));
        }
        for &t in &e.times {
            positive("ensemble.times", t)?;
        }
        if e.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CliError::Config("ensemble.times must be strictly increasing".into()));
        }
        check_packets("ensemble", &e.packets)
    }

    pub fn validate_widthsweep(&self) -> Result<(), CliError> {
        let w = &self.widthsweep;
        for &k in &w.kappas {
            positive("widthsweep.kappas", k)?;
        }
        if w.kappas.is_empty() {
            positive("widthsweep.kappa_min", w.kappa_min)?;
            positive("widthsweep.kappa_max", w.kappa_max)?;
            if w.points == 0 || (w.points > 1 && !(w.kappa_max > w.kappa_min)) {
                return Err(CliError::Config("widthsweep needs points >= 1 and kappa_max > kappa_min".into()));
            }
        }
        positive("widthsweep.domain", w.domain)?;
        positive("widthsweep.dt_factor", w.dt_factor)?;
        positive("widthsweep.convergence_tol", w.convergence_tol)?;
        positive("widthsweep.max_dispersion_times", w.max_dispersion_times)?;
        if !(w.min_time >= 0.0) {
            return Err(CliError::Config("widthsweep.min_time must be >= 0".into()));
        }
        Ok(())
    }

    pub fn validate_gasmodel(&self) -> Result<(), CliError> {
        let g = &self.gasmodel;
        positive("gasmodel.lambda_th", g.lambda_th)?;
        if !(g.a_loc > 0.0 && g.a_loc < 2.0) {
            return Err(CliError::Config(format!("gasmodel.a_loc must lie in (0, 2), got {}", g.a_loc)));
        }
        if g.ell_free.is_empty() {
            return Err(CliError::Config("gasmodel.ell_free must not be empty".into()));
        }
        for &l in &g.ell_free {
            positive("gasmodel.ell_free", l)?;
        }
        Ok(())
    }

    /// Width-sweep kappas, log-spaced unless listed explicitly.
    pub fn sweep_kappas(&self) -> Vec<f64> {
        let w = &self.widthsweep;
        if !w.kappas.is_empty() {
            return w.kappas.clone();
        }
        if w.points == 1 {
            return vec![w.kappa_min];
        }
        let (lo, hi) = (w.kappa_min.log10(), w.kappa_max.log10());
        (0..w.points).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (w.points - 1) as f64)).collect()
    }
}
