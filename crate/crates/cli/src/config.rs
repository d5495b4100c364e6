//! Run configuration: defaults, an optional JSON file and command-line flags,
//! applied in that order.

use std::path::Path;

use critedge::spectra::{GaussianBump, Model, TestFunction};
use critedge::C64;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Target dimension; input multiplicities are scaled up to it.
    pub n: Option<u64>,
    pub seed: u64,
    pub trials: usize,
    /// Exponent offset in `η = N^{−3/4−δ}`.
    pub delta: f64,
    /// Norm bound `𝔠`; derived from the input when absent.
    pub frak_c: Option<f64>,
    pub tol: f64,
    /// Worker threads; all available cores when absent.
    pub jobs: Option<usize>,
    pub model: Model,
    /// Correlation order `k`.
    pub k: usize,
    pub test_function: TestFunction,
    /// Exponent `c` in the speed bound `|dα/dt| ≤ N^{−c}`.
    pub alpha_exponent: f64,
    /// Initial mesh half-width of the finite-support flow.
    pub h0: Option<f64>,
    pub grid_points: usize,
    pub lattice: f64,
    pub delta_tv: f64,
    /// Gaussian bump of the Girko check, centered at `[re, im]`.
    pub girko_center: [f64; 2],
    pub girko_width: f64,
    /// Quadrature nodes per direction of the Girko check.
    pub girko_nodes: usize,
    /// Two estimates agree when they differ by at most this many combined standard errors.
    pub sigmas: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: None,
            seed: 0,
            trials: 200,
            delta: 0.05,
            frak_c: None,
            tol: 1e-9,
            jobs: None,
            model: Model::Ginibre,
            k: 1,
            test_function: TestFunction::RadialBump { radius: 1.5 },
            alpha_exponent: 0.1,
            h0: None,
            grid_points: 257,
            lattice: 1.0 / 64.0,
            delta_tv: 0.05,
            girko_center: [0.0, 0.0],
            girko_width: 0.3,
            girko_nodes: 128,
            sigmas: 2.0,
        }
    }
}

/// Flags shared by every subcommand; set flags override the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonFlags {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "frak-c")]
    pub frak_c: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output file.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    /// Defaults, then the file named by `--config`, then the flags.
    pub fn resolve(flags: &CommonFlags) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if flags.n.is_some() {
            cfg.n = flags.n;
        }
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = flags.trials {
            cfg.trials = v;
        }
        if let Some(v) = flags.delta {
            cfg.delta = v;
        }
        if flags.frak_c.is_some() {
            cfg.frak_c = flags.frak_c;
        }
        if let Some(v) = flags.tol {
            cfg.tol = v;
        }
        if flags.jobs.is_some() {
            cfg.jobs = flags.jobs;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |what: &str| Err(CliError::input(format!("config: {what}")));
        if matches!(self.n, Some(n) if n < 2) {
            return bad("n must be at least 2");
        }
        if self.trials == 0 {
            return bad("trials must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 0.25) {
            return bad("delta must lie in (0, 1/4)");
        }
        if matches!(self.frak_c, Some(c) if !(c > 1.0 && c.is_finite())) {
            return bad("frak_c must be a finite number above 1");
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad("tol must lie in (0, 1)");
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive");
        }
        if self.k == 0 || self.k > 4 {
            return bad("k must lie in 1..=4");
        }
        let positive = match self.test_function {
            TestFunction::RadialBump { radius } => radius > 0.0,
            TestFunction::AnisotropicBump { sx, sy } => sx > 0.0 && sy > 0.0,
        };
        if !positive {
            return bad("test function scales must be positive");
        }
        if !(self.alpha_exponent > 0.0) {
            return bad("alpha_exponent must be positive");
        }
        if matches!(self.h0, Some(h) if !(h > 0.0)) {
            return bad("h0 must be positive");
        }
        if self.grid_points < 3 || self.grid_points % 2 == 0 {
            return bad("grid_points must be odd and at least 3");
        }
        if !(self.lattice > 0.0) {
            return bad("lattice must be positive");
        }
        if !(self.delta_tv > 0.0 && self.delta_tv < 1.0) {
            return bad("delta_tv must lie in (0, 1)");
        }
        if !(self.girko_width > 0.0) {
            return bad("girko_width must be positive");
        }
        if self.girko_nodes == 0 || self.girko_nodes % 8 != 0 {
            return bad("girko_nodes must be a positive multiple of 8");
        }
        if !(self.sigmas > 0.0) {
            return bad("sigmas must be positive");
        }
        Ok(())
    }

    pub fn girko_bump(&self) -> GaussianBump {
        GaussianBump { center: C64::new(self.girko_center[0], self.girko_center[1]), width: self.girko_width }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_round_trips() {
        let text = r#"{"trials": 50, "test_function": {"kind": "anisotropic-bump", "sx": 1.0, "sy": 0.5}}"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        let canonical = serde_json::to_string(&cfg).unwrap();
        let again: RunConfig = serde_json::from_str(&canonical).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(serde_json::to_string(&again).unwrap(), canonical);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"trails": 5}"#).is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"seed": 3, "trials": 7}"#).unwrap();
        let flags = CommonFlags { config: Some(path), seed: Some(9), ..Default::default() };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!((cfg.seed, cfg.trials), (9, 7));
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let cfg = RunConfig { delta: 0.5, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig { girko_nodes: 100, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
