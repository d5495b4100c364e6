//! Checks a lifted path against the flow assumption: every state critical
//! with parameter `𝔠₁`, `|dα/dt| ≤ N^{−𝔠}` and `‖d𝒜/dt‖ ≤ 𝔠₁ log N`.

use serde::Serialize;

use crate::criticality::{hessian_at_origin, shape_alpha, verify_criticality};
use crate::error::{Error, Result};
use crate::flow::{FlowPath, PathSide, Segment};

/// A grid point where a check is tightest or fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Offender {
    pub index: usize,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub n: u64,
    pub frak_c1: f64,
    pub frak_c_small: f64,
    pub tol: f64,
    pub critical_ok: bool,
    /// Points failing the criticality test.
    pub not_critical: Vec<usize>,
    /// Largest of `|⟨|𝒜|⁻²⟩ − 1|` and `|⟨𝒜⁻²𝒜*⁻¹⟩|`.
    pub worst_criticality: Offender,
    /// Largest `max(‖𝒜‖, ‖𝒜⁻¹‖)`.
    pub worst_norm: Offender,
    pub alpha_bound: f64,
    pub alpha_ok: bool,
    pub worst_alpha_speed: Offender,
    pub speed_bound: f64,
    pub speed_ok: bool,
    pub worst_speed: Offender,
    pub passed: bool,
}

/// One-sided differences at segment ends, central ones inside.
fn scalar_speeds(grid: &[f64], values: &[f64], segments: &[Segment]) -> Vec<f64> {
    let diff = |i: usize, j: usize| {
        let dt = grid[j] - grid[i];
        if dt > 0.0 {
            ((values[j] - values[i]) / dt).abs()
        } else {
            0.0
        }
    };
    let mut out = vec![0.0f64; grid.len()];
    for seg in segments.iter().filter(|s| s.end > s.start) {
        for k in seg.start..=seg.end {
            let v = if k == seg.start {
                diff(k, k + 1)
            } else if k == seg.end {
                diff(k - 1, k)
            } else {
                diff(k - 1, k).max(diff(k, k + 1))
            };
            out[k] = out[k].max(v);
        }
    }
    out
}

fn worst(grid: &[f64], values: &[f64]) -> Offender {
    values
        .iter()
        .enumerate()
        .fold(Offender { index: 0, t: grid[0], value: f64::NEG_INFINITY }, |best, (k, &v)| {
            if v > best.value {
                Offender { index: k, t: grid[k], value: v }
            } else {
                best
            }
        })
}

/// Validates a deformation-side path for matrix size `n`.
pub fn validate_assumption(path: &FlowPath, frak_c1: f64, frak_c_small: f64, n: u64, tol: f64) -> Result<AssumptionReport> {
    if path.side != PathSide::A {
        return Err(Error::InvalidInput("assumption checks need a lifted path".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput("matrix size must be at least 2".into()));
    }
    let grid = &path.grid;
    let mut not_critical = Vec::new();
    let mut crit = Vec::with_capacity(grid.len());
    let mut norms = Vec::with_capacity(grid.len());
    let mut alphas = Vec::with_capacity(grid.len());
    for (k, a) in path.states.iter().enumerate() {
        let r = verify_criticality(a, frak_c1, tol)?;
        if !r.is_critical {
            not_critical.push(k);
        }
        crit.push((r.inv2 - 1.0).abs().max(r.skew.norm()));
        norms.push(r.norm_a.max(r.norm_a_inv));
        alphas.push(shape_alpha(&hessian_at_origin(a)?)?);
    }
    let alpha_speed = scalar_speeds(grid, &alphas, &path.segments);
    let nf = n as f64;
    let alpha_bound = nf.powf(-frak_c_small);
    let speed_bound = frak_c1 * nf.ln();
    let worst_alpha_speed = worst(grid, &alpha_speed);
    let worst_speed = worst(grid, &path.derivatives);
    let critical_ok = not_critical.is_empty();
    let alpha_ok = worst_alpha_speed.value <= alpha_bound;
    let speed_ok = worst_speed.value <= speed_bound;
    Ok(AssumptionReport {
        n,
        frak_c1,
        frak_c_small,
        tol,
        critical_ok,
        not_critical,
        worst_criticality: worst(grid, &crit),
        worst_norm: worst(grid, &norms),
        alpha_bound,
        alpha_ok,
        worst_alpha_speed,
        speed_bound,
        speed_ok,
        worst_speed,
        passed: critical_ok && alpha_ok && speed_ok,
    })
}
