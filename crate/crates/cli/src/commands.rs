//! The four subcommands. Each returns the JSON summary and whether its check passed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use critedge::criticality::{scaling_gamma, verify_criticality};
use critedge::flow::{deformation_path, validate_assumption, FlowPath, PathSide, PipelineConfig};
use critedge::spectra::{
    compare_estimates, deformed_matrix, estimate_statistic, girko_check, mean_and_error, rescale, sample_ensemble,
    sample_matrix, StatisticConfig,
};
use critedge::{DeformationSpectrum, Error};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

/// Default norm bound of `analyze` when none is configured.
pub const ANALYZE_FRAK_C: f64 = 10.0;

pub struct Outcome {
    pub summary: Value,
    pub passed: bool,
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

pub fn read_spectrum(path: &Path) -> Result<DeformationSpectrum, CliError> {
    let file = File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn read_path(path: &Path) -> Result<FlowPath, CliError> {
    let file = File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    FlowPath::read_jsonl(BufReader::new(file)).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::failure(format!("{}: {e}", path.display())))
}

/// Multiplies every multiplicity by `n / spec.n()`.
pub fn scale_to(spec: DeformationSpectrum, n: Option<u64>) -> Result<DeformationSpectrum, CliError> {
    let Some(n) = n else { return Ok(spec) };
    if n == spec.n() {
        return Ok(spec);
    }
    if n % spec.n() != 0 {
        return Err(CliError::input(format!("n = {n} is not a multiple of the input dimension {}", spec.n())));
    }
    let factor = n / spec.n();
    let mults = spec.multiplicities().iter().map(|m| m * factor).collect();
    Ok(DeformationSpectrum::with_dimension(n, spec.eigenvalues().to_vec(), mults)?)
}

pub fn analyze(input: &Path, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = scale_to(read_spectrum(input)?, cfg.n)?;
    let report = verify_criticality(&spec, cfg.frak_c.unwrap_or(ANALYZE_FRAK_C), cfg.tol)?;
    Ok(Outcome { passed: report.is_critical, summary: to_json(&report) })
}

/// Builds and validates a path, or re-validates an existing one.
pub fn flow(input: Option<&Path>, existing: Option<&Path>, cfg: &RunConfig, out: Option<&Path>) -> Result<Outcome, CliError> {
    let (path, frak_c, mut summary) = match (input, existing) {
        (Some(input), None) => {
            let spec = scale_to(read_spectrum(input)?, cfg.n)?;
            let mut pc = PipelineConfig { frak_c: cfg.frak_c, lattice: cfg.lattice, ..Default::default() };
            pc.finite_support.h0 = cfg.h0;
            pc.finite_support.grid_points = cfg.grid_points;
            pc.fix.grid_points = cfg.grid_points;
            pc.fix.delta_tv = cfg.delta_tv;
            let p = deformation_path(&spec, &pc)?;
            if let Some(out) = out {
                let mut w = create(out)?;
                p.a_path.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::failure(e.to_string()))?;
            }
            let summary = json!({
                "deformation": to_json(&p),
                "final_support": p.a_path.last().support_size(),
                "support_bound": p.finite_support.as_ref().map(|f| f.support_bound),
                "grid_points": p.a_path.len(),
            });
            (p.a_path, p.frak_c, summary)
        }
        (None, Some(existing)) => {
            let path = read_path(existing)?;
            if path.side != PathSide::A {
                return Err(CliError::input("only lifted paths can be validated".into()));
            }
            let bound = cfg.frak_c.unwrap_or_else(|| {
                path.states.iter().map(|s| s.norm().max(s.inverse_norm())).fold(1.0, f64::max) * 1.01
            });
            (path, bound, json!({ "grid_points": 0 }))
        }
        _ => return Err(CliError::input("give exactly one of a spectrum file or --path".into())),
    };
    let n = path.last().n();
    let report = validate_assumption(&path, 2.0 * frak_c, cfg.alpha_exponent, n, cfg.tol)?;
    summary["grid_points"] = json!(path.len());
    summary["validation"] = to_json(&report);
    Ok(Outcome { passed: report.passed, summary })
}

/// Which state of a path to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Endpoint {
    First,
    Last,
}

pub struct SimulateArgs<'a> {
    pub input: Option<&'a Path>,
    pub path: Option<&'a Path>,
    pub endpoint: Endpoint,
    pub eigenvalues: Option<PathBuf>,
    pub girko: bool,
}

pub fn simulate(args: &SimulateArgs<'_>, cfg: &RunConfig, out: Option<&Path>) -> Result<Outcome, CliError> {
    let spec = match (args.input, args.path) {
        (Some(input), None) => read_spectrum(input)?,
        (None, Some(p)) => {
            let path = read_path(p)?;
            match args.endpoint {
                Endpoint::First => path.first().clone(),
                Endpoint::Last => path.last().clone(),
            }
        }
        _ => return Err(CliError::input("give exactly one of a spectrum file or --path".into())),
    };
    let spec = scale_to(spec, cfg.n)?;
    let stat_cfg = StatisticConfig { k: cfg.k, trials: cfg.trials, seed0: cfg.seed, model: cfg.model, precision: None };
    let estimate = estimate_statistic(&spec, &stat_cfg, &cfg.test_function)?;
    if let Some(out) = out {
        let mut w = csv::Writer::from_writer(create(out)?);
        let csv_err = |e: csv::Error| CliError::failure(e.to_string());
        w.write_record(["trial", "seed", "value"]).map_err(csv_err)?;
        for (j, v) in estimate.per_trial.iter().enumerate() {
            let seed = cfg.seed.wrapping_add(j as u64);
            w.write_record([j.to_string(), seed.to_string(), format!("{v:e}")]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::failure(e.to_string()))?;
    }

    let first = sample_ensemble(&spec, cfg.model, cfg.seed, None)?;
    let spectral_radius = first.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(cloud) = &args.eigenvalues {
        let (gamma, _) = scaling_gamma(&spec).unwrap_or((critedge::C64::new(1.0, 0.0), 0.0));
        let rescaled = rescale(&first.eigenvalues, spec.n(), gamma);
        let mut w = csv::Writer::from_writer(create(cloud)?);
        let csv_err = |e: csv::Error| CliError::failure(e.to_string());
        w.write_record(["re", "im", "w_re", "w_im"]).map_err(csv_err)?;
        for (z, wz) in first.eigenvalues.iter().zip(&rescaled) {
            w.write_record([z.re, z.im, wz.re, wz.im].map(|v| format!("{v:e}"))).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::failure(e.to_string()))?;
    }
    let girko = if args.girko {
        let x = sample_matrix(cfg.model, spec.n() as usize, cfg.seed)?;
        let m = deformed_matrix(&spec, &x)?;
        Some(girko_check(&m, &cfg.girko_bump(), cfg.girko_nodes, 1e-10)?)
    } else {
        None
    };
    let mut summary = to_json(&estimate);
    if let Value::Object(map) = &mut summary {
        map.remove("per_trial");
    }
    summary["spectral_radius"] = json!(spectral_radius);
    summary["girko"] = to_json(&girko);
    Ok(Outcome { passed: true, summary })
}

fn read_values(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| CliError::input(format!("{}: {e}", path.display())))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "value")
        .ok_or_else(|| CliError::input(format!("{}: no value column", path.display())))?;
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let v = rec
            .get(col)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| CliError::input(format!("{}: row {} has no numeric value", path.display(), i + 1)))?;
        values.push(v);
    }
    if values.len() < 2 {
        return Err(CliError::input(format!("{}: at least two trials are needed", path.display())));
    }
    Ok(values)
}

pub fn compare(a: &Path, b: &Path, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (va, vb) = (read_values(a)?, read_values(b)?);
    let (ma, sa) = mean_and_error(&va);
    let (mb, sb) = mean_and_error(&vb);
    let c = compare_estimates((ma, sa), (mb, sb));
    let agree = c.sigmas <= cfg.sigmas;
    let summary = json!({
        "a": { "file": a.display().to_string(), "mean": ma, "std_error": sa, "trials": va.len() },
        "b": { "file": b.display().to_string(), "mean": mb, "std_error": sb, "trials": vb.len() },
        "difference": c.difference,
        "combined_std_error": c.combined_std_error,
        "sigmas": c.sigmas,
        "threshold": cfg.sigmas,
        "identical": va == vb,
        "agree": agree,
    });
    Ok(Outcome { passed: agree, summary })
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::ZeroEigenvalue { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidInput(_)
            | Error::UnknownModel(_)
            | Error::InvalidEta(_)
            | Error::NotReal { .. } => CliError::input(e.to_string()),
            _ => CliError::failure(e.to_string()),
        }
    }
}
