//! Monte Carlo side: i.i.d. matrices, eigenvalues and singular values of
//! `A + X`, Girko's formula, log-determinant statistics and local statistics
//! of rescaled eigenvalues.
//!
//! Every random quantity is a pure function of a 64-bit seed: trial `j` of a
//! run started at `seed0` draws its matrix from `ChaCha8Rng::seed_from_u64(seed0 + j)`.

use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;

use faer::{Mat, Side};
use gauss_quad::legendre::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criticality::scaling_gamma;
use crate::dyson::{solve_v_scalar, unscale_point, FlowScalings, SolverConfig};
use crate::error::{Error, Result};
use crate::spectrum::{DeformationSpectrum, C64};

/// Law of the entries of `X`. All have mean 0, `E|x|² = 1/N` and `Ex² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    /// Complex Gaussian entries.
    Ginibre,
    /// Real and imaginary parts independent `±1/√(2N)`.
    IidBernoulli,
    /// Real and imaginary parts independent uniform on `±√(3/(2N))`.
    IidUniform,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Ginibre => "ginibre",
            Model::IidBernoulli => "iid-bernoulli",
            Model::IidUniform => "iid-uniform",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ginibre" => Ok(Model::Ginibre),
            "iid-bernoulli" => Ok(Model::IidBernoulli),
            "iid-uniform" => Ok(Model::IidUniform),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }
}

fn draw_entry<R: Rng + ?Sized>(model: Model, n: usize, rng: &mut R) -> C64 {
    let var = 1.0 / (2.0 * n as f64);
    match model {
        Model::Ginibre => {
            let (x, y): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            C64::new(x, y) * var.sqrt()
        }
        Model::IidBernoulli => {
            let s = var.sqrt();
            C64::new(if rng.random_bool(0.5) { s } else { -s }, if rng.random_bool(0.5) { s } else { -s })
        }
        Model::IidUniform => {
            let r = (3.0 * var).sqrt();
            C64::new(rng.random_range(-r..r), rng.random_range(-r..r))
        }
    }
}

/// `n × n` matrix with entries drawn in row-major order from `rng`.
pub fn sample_with_rng<R: Rng + ?Sized>(model: Model, n: usize, rng: &mut R) -> Mat<C64> {
    let entries: Vec<C64> = (0..n * n).map(|_| draw_entry(model, n, rng)).collect();
    Mat::from_fn(n, n, |i, j| entries[i * n + j])
}

pub fn sample_matrix(model: Model, n: usize, seed: u64) -> Result<Mat<C64>> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("matrix size must be at least 2, got {n}")));
    }
    Ok(sample_with_rng(model, n, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// `diag(λ) + X`.
pub fn deformed_matrix(spec: &DeformationSpectrum, x: &Mat<C64>) -> Result<Mat<C64>> {
    let n = spec.n() as usize;
    if x.nrows() != n || x.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n as u64, got: x.nrows() as u64 });
    }
    let diag = spec.expanded();
    Ok(Mat::from_fn(n, n, |i, j| if i == j { x[(i, j)] + diag[i] } else { x[(i, j)] }))
}

fn decomposition_failed<E: fmt::Debug>(e: E) -> Error {
    Error::InvalidInput(format!("dense decomposition failed: {e:?}"))
}

fn sort_points(points: &mut [C64]) {
    points.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Eigenvalues of a dense matrix, sorted by real then imaginary part.
pub fn eigenvalues_of(m: &Mat<C64>) -> Result<Vec<C64>> {
    let mut eigs = m
        .eigenvalues()
        .map_err(decomposition_failed)?;
    sort_points(&mut eigs);
    Ok(eigs)
}

pub fn deformed_eigenvalues(spec: &DeformationSpectrum, x: &Mat<C64>) -> Result<Vec<C64>> {
    eigenvalues_of(&deformed_matrix(spec, x)?)
}

fn shifted(m: &Mat<C64>, z: C64) -> Mat<C64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| if i == j { m[(i, j)] - z } else { m[(i, j)] })
}

/// Singular values of `m − z`, ascending.
pub fn singular_values(m: &Mat<C64>, z: C64) -> Result<Vec<f64>> {
    let mut s = shifted(m, z)
        .singular_values()
        .map_err(decomposition_failed)?;
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// The `2N × 2N` Hermitization `[[0, m − z], [(m − z)*, 0]]`.
pub fn hermitization(m: &Mat<C64>, z: C64) -> Mat<C64> {
    let n = m.nrows();
    let s = shifted(m, z);
    Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, false) => s[(i, j - n)],
        (false, true) => s[(j, i - n)].conj(),
        _ => C64::new(0.0, 0.0),
    })
}

/// Singular values of `m − z` as the nonnegative half of the spectrum of the
/// Hermitization, ascending.
pub fn hermitization_singular_values(m: &Mat<C64>, z: C64) -> Result<Vec<f64>> {
    let n = m.nrows();
    let eigs = hermitization(m, z)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(decomposition_failed)?;
    Ok(eigs[n..].iter().map(|x| x.abs()).collect())
}

/// `log|det(m − z)|` from a partially pivoted LU factorization.
pub fn log_abs_det(m: &Mat<C64>, z: C64) -> f64 {
    let lu = shifted(m, z).partial_piv_lu();
    let u = lu.U();
    (0..u.nrows()).map(|i| u[(i, i)].norm().ln()).sum()
}

/// `w = N^{1/4}γz`.
pub fn rescale(points: &[C64], n: u64, gamma: C64) -> Vec<C64> {
    let s = (n as f64).powf(0.25) * gamma;
    points.iter().map(|z| z * s).collect()
}

/// Inverse of [`rescale`].
pub fn unrescale(points: &[C64], n: u64, gamma: C64) -> Vec<C64> {
    let s = (n as f64).powf(0.25) * gamma;
    points.iter().map(|w| w / s).collect()
}

/// One draw of `A + X` with its eigenvalues and, optionally, the singular
/// values of `A + X − z`.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSample {
    pub seed: u64,
    pub n: u64,
    pub model: Model,
    #[serde(with = "crate::spectrum::complex_pairs")]
    pub eigenvalues: Vec<C64>,
    pub base_point: Option<[f64; 2]>,
    pub singular_values: Option<Vec<f64>>,
}

pub fn sample_ensemble(spec: &DeformationSpectrum, model: Model, seed: u64, base_point: Option<C64>) -> Result<EnsembleSample> {
    let x = sample_matrix(model, spec.n() as usize, seed)?;
    let m = deformed_matrix(spec, &x)?;
    let singular_values = base_point.map(|z| singular_values(&m, z)).transpose()?;
    Ok(EnsembleSample {
        seed,
        n: spec.n(),
        model,
        eigenvalues: eigenvalues_of(&m)?,
        base_point: base_point.map(|z| [z.re, z.im]),
        singular_values,
    })
}

/// `exp(1 − 1/(1 − r²))` on `r < 1`, zero outside: smooth, compactly
/// supported and equal to 1 at the origin.
pub fn bump(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

/// Smooth compactly supported test functions of rescaled eigenvalues. A
/// `k`-point function is the product of the one-point function over its
/// arguments, hence symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    RadialBump { radius: f64 },
    /// Bump on the ellipse with semi-axes `sx` (real) and `sy` (imaginary).
    AnisotropicBump { sx: f64, sy: f64 },
}

impl TestFunction {
    pub fn one_point(&self, w: C64) -> f64 {
        match *self {
            TestFunction::RadialBump { radius } => bump(w.norm() / radius),
            TestFunction::AnisotropicBump { sx, sy } => bump(((w.re / sx).powi(2) + (w.im / sy).powi(2)).sqrt()),
        }
    }

    pub fn eval(&self, points: &[C64]) -> f64 {
        points.iter().map(|&w| self.one_point(w)).product()
    }

    pub fn id(&self) -> String {
        match *self {
            TestFunction::RadialBump { radius } => format!("radial-bump(r={radius})"),
            TestFunction::AnisotropicBump { sx, sy } => format!("anisotropic-bump(sx={sx},sy={sy})"),
        }
    }
}

/// `Σ F(w_{i₁}, …, w_{i_k})` over ordered `k`-tuples of distinct indices.
pub fn k_tuple_sum(points: &[C64], k: usize, f: &TestFunction) -> f64 {
    let values: Vec<f64> = points.iter().map(|&w| f.one_point(w)).filter(|&v| v != 0.0).collect();
    fn rec(values: &[f64], used: &mut Vec<bool>, left: usize) -> f64 {
        if left == 0 {
            return 1.0;
        }
        let mut total = 0.0;
        for i in 0..values.len() {
            if !used[i] {
                used[i] = true;
                total += values[i] * rec(values, used, left - 1);
                used[i] = false;
            }
        }
        total
    }
    if k == 0 {
        return 1.0;
    }
    rec(&values, &mut vec![false; values.len()], k)
}

/// Settings of a Monte Carlo estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatisticConfig {
    pub k: usize,
    pub trials: usize,
    pub seed0: u64,
    pub model: Model,
    /// A warning is attached when the standard error exceeds this.
    pub precision: Option<f64>,
}

/// Monte Carlo estimate of `E Σ F` over distinct `k`-tuples of rescaled eigenvalues.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationEstimate {
    pub k: usize,
    pub test_function: String,
    pub value: f64,
    pub std_error: f64,
    pub trials: usize,
    pub n: u64,
    pub seed0: u64,
    pub model: Model,
    /// `N^{1/4}`.
    pub scale: f64,
    #[serde(with = "crate::spectrum::complex_pair")]
    pub gamma: C64,
    pub warning: Option<String>,
    pub per_trial: Vec<f64>,
}

/// Mean and standard error of the mean.
pub fn mean_and_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs the trials in parallel; the result does not depend on scheduling.
pub fn estimate_statistic(spec: &DeformationSpectrum, cfg: &StatisticConfig, f: &TestFunction) -> Result<CorrelationEstimate> {
    if cfg.trials == 0 {
        return Err(Error::InvalidInput("at least one trial is needed".into()));
    }
    let n = spec.n();
    let (gamma, _) = scaling_gamma(spec)?;
    let per_trial = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|j| {
            let x = sample_matrix(cfg.model, n as usize, cfg.seed0.wrapping_add(j))?;
            let w = rescale(&deformed_eigenvalues(spec, &x)?, n, gamma);
            Ok(k_tuple_sum(&w, cfg.k, f))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (value, std_error) = mean_and_error(&per_trial);
    let warning = cfg
        .precision
        .filter(|&p| std_error > p)
        .map(|p| format!("standard error {std_error:.3e} exceeds requested precision {p:.3e}"));
    Ok(CorrelationEstimate {
        k: cfg.k,
        test_function: f.id(),
        value,
        std_error,
        trials: cfg.trials,
        n,
        seed0: cfg.seed0,
        model: cfg.model,
        scale: (n as f64).powf(0.25),
        gamma,
        warning,
        per_trial,
    })
}

/// Two-sample comparison of independent estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub difference: f64,
    /// `√(σ₁² + σ₂²)`.
    pub combined_std_error: f64,
    /// `|difference| / combined_std_error`.
    pub sigmas: f64,
}

pub fn compare_estimates(a: (f64, f64), b: (f64, f64)) -> Comparison {
    let difference = a.0 - b.0;
    let combined_std_error = (a.1 * a.1 + b.1 * b.1).sqrt();
    let sigmas = if combined_std_error > 0.0 {
        difference.abs() / combined_std_error
    } else if difference == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Comparison { difference, combined_std_error, sigmas }
}

/// `exp(−|z − c|²/(2s²))` with its Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    #[serde(with = "crate::spectrum::complex_pair")]
    pub center: C64,
    pub width: f64,
}

impl GaussianBump {
    pub fn value(&self, z: C64) -> f64 {
        (-(z - self.center).norm_sqr() / (2.0 * self.width * self.width)).exp()
    }

    /// `ΔF = F·(|z − c|²/s⁴ − 2/s²)`.
    pub fn laplacian(&self, z: C64) -> f64 {
        let s2 = self.width * self.width;
        self.value(z) * ((z - self.center).norm_sqr() / (s2 * s2) - 2.0 / s2)
    }

    /// `∇ΔF` as `∂ₓ + i∂ᵧ`.
    pub fn laplacian_gradient(&self, z: C64) -> C64 {
        let s2 = self.width * self.width;
        let d = z - self.center;
        let g = d.norm_sqr() / (s2 * s2) - 2.0 / s2;
        d * (self.value(z) * (2.0 / (s2 * s2) - g / s2))
    }

    /// Half-width of the square outside which the bump is below `e^{−32}`.
    pub fn reach(&self) -> f64 {
        8.0 * self.width
    }
}

/// Both sides of Girko's formula for one matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GirkoCheck {
    /// `N⁻¹ Σ F(λᵢ)`.
    pub lhs: f64,
    /// `(4πN)⁻¹ ∫ ΔF(z) log|det H^z| d²z`, positive since `Δ log|z| = 2πδ₀`.
    pub rhs: f64,
    pub gap: f64,
    pub nodes: usize,
    /// Number of jitters needed to keep nodes away from eigenvalues.
    pub jitters: usize,
}

/// Points of a composite 8-point Gauss–Legendre rule with `nodes` points on `[a, b]`.
fn composite_rule(a: f64, b: f64, nodes: usize) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(NonZeroUsize::new(8).expect("nonzero"));
    let panels = nodes / 8;
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(nodes);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for &(x, w) in gl.as_node_weight_pairs() {
            out.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * w));
        }
    }
    out
}

/// Largest number of grid shifts tried before giving up.
const MAX_JITTERS: usize = 8;

/// Antiderivatives `G₀, G₁` with `∂²G₀/∂u∂v = log(u² + v²)` and
/// `∂²G₁/∂u∂v = u log(u² + v²)`.
fn log_radius_antiderivatives(u: f64, v: f64) -> (f64, f64) {
    let r2 = u * u + v * v;
    if r2 == 0.0 {
        return (0.0, 0.0);
    }
    let l = r2.ln();
    let at_u = if u == 0.0 { 0.0 } else { (v / u).atan() };
    let at_v = if v == 0.0 { 0.0 } else { (u / v).atan() };
    let g0 = u * v * l - 3.0 * u * v + u * u * at_u + v * v * at_v;
    let g1 = 0.5 * v * (r2 * l - r2) - 2.0 * u * u * v / 3.0 + 2.0 * u * u * u * at_u / 3.0 - v * v * v * l / 3.0;
    (g0, g1)
}

/// Exact `∫∫ w(z) log|z − p|² d²z` over `[x0, x1] × [y0, y1]` for the weights
/// `w = 1, Re(z − p), Im(z − p)`.
fn rectangle_log_moments(x0: f64, x1: f64, y0: f64, y1: f64, p: C64) -> [f64; 3] {
    let (u0, u1, v0, v1) = (x0 - p.re, x1 - p.re, y0 - p.im, y1 - p.im);
    let corner = |u: f64, v: f64| {
        let (g0, g1) = log_radius_antiderivatives(u, v);
        let (_, h1) = log_radius_antiderivatives(v, u);
        [g0, g1, h1]
    };
    let (a, b, c, d) = (corner(u1, v1), corner(u0, v1), corner(u1, v0), corner(u0, v0));
    [0, 1, 2].map(|k| a[k] - b[k] - c[k] + d[k])
}

/// Evaluates Girko's formula for `m = A + X` on a tensor grid with `nodes`
/// points per direction (a multiple of 8), with `log|det H^z| = 2 log|det(m − z)|`
/// from LU factorizations. On the panels around each eigenvalue `λ` the
/// singular part `(ΔF(λ) + ∇ΔF(λ)·(z − λ)) log|z − λ|²` is integrated
/// exactly in place of its Gauss–Legendre value. Nodes closer than `floor` to an eigenvalue shift
/// the whole grid.
pub fn girko_check(m: &Mat<C64>, f: &GaussianBump, nodes: usize, floor: f64) -> Result<GirkoCheck> {
    if nodes == 0 || nodes % 8 != 0 {
        return Err(Error::InvalidInput(format!("nodes per direction must be a positive multiple of 8, got {nodes}")));
    }
    let n = m.nrows() as f64;
    let eigs = eigenvalues_of(m)?;
    let lhs = eigs.iter().map(|&z| f.value(z)).sum::<f64>() / n;
    let r = f.reach();
    let panels = nodes / 8;
    let spacing = 2.0 * r / nodes as f64;
    let panel_width = 2.0 * r / panels as f64;
    let mut closest = 0.0;
    for jitters in 0..MAX_JITTERS {
        let shift = C64::new(0.37, 0.61) * (spacing * 1e-3 * jitters as f64);
        let (x_lo, y_lo) = (f.center.re - r + shift.re, f.center.im - r + shift.im);
        let xs = composite_rule(x_lo, x_lo + 2.0 * r, nodes);
        let ys = composite_rule(y_lo, y_lo + 2.0 * r, nodes);
        let points: Vec<(C64, f64)> =
            xs.iter().flat_map(|&(x, wx)| ys.iter().map(move |&(y, wy)| (C64::new(x, y), wx * wy))).collect();
        closest = points
            .iter()
            .map(|(z, _)| eigs.iter().map(|l| (l - z).norm()).fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min);
        if closest < floor {
            continue;
        }
        let integral: f64 = points
            .par_iter()
            .map(|&(z, w)| {
                let lap = f.laplacian(z);
                if lap == 0.0 {
                    0.0
                } else {
                    w * lap * 2.0 * log_abs_det(m, z)
                }
            })
            .sum();
        let correction: f64 = eigs
            .iter()
            .map(|&l| {
                let lap = f.laplacian(l);
                let grad = f.laplacian_gradient(l);
                let (pi, pj) = ((l.re - x_lo) / panel_width, (l.im - y_lo) / panel_width);
                if lap == 0.0 || pi < -1.0 || pj < -1.0 || pi >= panels as f64 + 1.0 || pj >= panels as f64 + 1.0 {
                    return 0.0;
                }
                let (ci, cj) = (pi.floor() as i64, pj.floor() as i64);
                let mut sum = 0.0;
                for i in (ci - 1).max(0)..=(ci + 1).min(panels as i64 - 1) {
                    for j in (cj - 1).max(0)..=(cj + 1).min(panels as i64 - 1) {
                        let (i, j) = (i as usize, j as usize);
                        let x0 = x_lo + i as f64 * panel_width;
                        let y0 = y_lo + j as f64 * panel_width;
                        let exact = rectangle_log_moments(x0, x0 + panel_width, y0, y0 + panel_width, l);
                        let mut rule = [0.0; 3];
                        for &(x, wx) in &xs[8 * i..8 * i + 8] {
                            for &(y, wy) in &ys[8 * j..8 * j + 8] {
                                let d = C64::new(x, y) - l;
                                let w = wx * wy * d.norm_sqr().ln();
                                rule[0] += w;
                                rule[1] += w * d.re;
                                rule[2] += w * d.im;
                            }
                        }
                        sum += lap * (exact[0] - rule[0])
                            + grad.re * (exact[1] - rule[1])
                            + grad.im * (exact[2] - rule[2]);
                    }
                }
                sum
            })
            .sum();
        let rhs = (integral + correction) / (4.0 * std::f64::consts::PI * n);
        return Ok(GirkoCheck { lhs, rhs, gap: (lhs - rhs).abs(), nodes, jitters });
    }
    Err(Error::QuadratureUnstable { distance: closest })
}

/// Gauss–Legendre panels on `[lo, hi]` refined geometrically toward `lo`.
fn geometric_panels(lo: f64, hi: f64, ratio: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut a = lo;
    let mut b = if lo > 0.0 { (lo * ratio).min(hi) } else { hi };
    while a < hi {
        out.push((a, b));
        a = b;
        b = (b * ratio).min(hi);
    }
    out
}

fn integrate_panels(panels: &[(f64, f64)], f: impl Fn(f64) -> f64) -> f64 {
    let gl = GaussLegendre::new(NonZeroUsize::new(12).expect("nonzero"));
    panels.iter().map(|&(a, b)| gl.integrate(a, b, &f)).sum()
}

/// `∫₀^∞ [2η/(σ² + η²) − 2η/(1 + η²)] dη`, which equals `−log σ²`: numerical
/// quadrature on `[0, 1]` and the closed form `log(2/(1 + σ²))` above.
pub fn eta_integral(sigma: f64) -> f64 {
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    let s2 = sigma * sigma;
    let a0 = sigma.min(1.0) * 1e-3;
    let mut panels = vec![(0.0, a0)];
    panels.extend(geometric_panels(a0, 1.0, 2.0));
    let head = integrate_panels(&panels, |eta| 2.0 * eta / (s2 + eta * eta) - 2.0 * eta / (1.0 + eta * eta));
    head + (2.0 / (1.0 + s2)).ln()
}

/// `−log|det H^z| = −2 Σ log σᵢ` through the η-integral, one singular value at a time.
pub fn log_det_via_eta(sigmas: &[f64]) -> f64 {
    -sigmas.iter().map(|&s| eta_integral(s)).sum::<f64>()
}

/// `Im⟨M(iη)⟩` of the Dyson equation for `A − z`. Above `η = 1` the
/// contraction `u ← (η + u)⟨1/(|λ − z|² + (η + u)²)⟩` is used directly to
/// avoid cancellation in `v − η`.
pub fn im_m_trace(spec: &DeformationSpectrum, z: C64, eta: f64, cfg: &SolverConfig) -> Result<f64> {
    if eta < 1.0 {
        return Ok(solve_v_scalar(spec, z, eta, cfg)?.require_converged()?.v - eta);
    }
    let n = spec.n() as f64;
    let d2: Vec<(f64, f64)> = spec.iter().map(|(l, m)| ((l - z).norm_sqr(), m as f64 / n)).collect();
    let map = |u: f64| {
        let v = eta + u;
        v * d2.iter().map(|&(d, w)| w / (d + v * v)).sum::<f64>()
    };
    let mut u = eta / (1.0 + eta * eta);
    for k in 0..500 {
        let next = map(u);
        if (next - u).abs() <= 4.0 * f64::EPSILON * next.abs() {
            return Ok(next);
        }
        u = next;
        if k == 499 {
            return Err(Error::NoConvergence { iterations: 500, residual: (map(u) - u).abs() });
        }
    }
    Ok(u)
}

/// `2N ∫_{η₀}^∞ [Im⟨M(iη)⟩ − η/(1 + η²)] dη`, on geometric panels below
/// `η = 1` and in the variable `s = 1/η` above.
pub fn deterministic_log_det(spec: &DeformationSpectrum, z: C64, eta0: f64, cfg: &SolverConfig) -> Result<f64> {
    let n = spec.n() as f64;
    let integrand = |eta: f64| -> Result<f64> { Ok(im_m_trace(spec, z, eta, cfg)? - eta / (1.0 + eta * eta)) };
    let gl = GaussLegendre::new(NonZeroUsize::new(12).expect("nonzero"));
    let mut total = 0.0;
    if eta0 < 1.0 {
        for (a, b) in geometric_panels(eta0, 1.0, 2.0) {
            for &(x, w) in gl.as_node_weight_pairs() {
                let eta = 0.5 * (a + b) + 0.5 * (b - a) * x;
                total += 0.5 * (b - a) * w * integrand(eta)?;
            }
        }
    }
    let s_top = 1.0 / eta0.max(1.0);
    for (a, b) in geometric_panels(s_top * 1e-6, s_top, 4.0).into_iter().chain([(0.0, s_top * 1e-6)]) {
        for &(x, w) in gl.as_node_weight_pairs() {
            let s = 0.5 * (a + b) + 0.5 * (b - a) * x;
            total += 0.5 * (b - a) * w * integrand(1.0 / s)? / (s * s);
        }
    }
    Ok(2.0 * n * total)
}

/// `L_t(w) = Tr log|H^z − iη_t| − Tr⟨log|𝔥^z − iη_t|⟩` at `z = γ_t⁻¹N^{−1/4}w`,
/// as the stochastic part `Σᵢ log((1 + η_t²)/(σᵢ² + η_t²))` minus
/// [`deterministic_log_det`].
pub fn log_det_statistic(spec: &DeformationSpectrum, x: &Mat<C64>, w: C64, scalings: &FlowScalings) -> Result<f64> {
    let n = spec.n();
    let z = unscale_point(w, scalings, n);
    let eta = scalings.eta_t;
    if !(eta > 0.0) {
        return Err(Error::InvalidEta(eta));
    }
    let sigmas = singular_values(&deformed_matrix(spec, x)?, z)?;
    let stochastic: f64 = sigmas.iter().map(|s| ((1.0 + eta * eta) / (s * s + eta * eta)).ln()).sum();
    Ok(stochastic - deterministic_log_det(spec, z, eta, &SolverConfig::default())?)
}

/// `Im⟨G^z(iη)⟩ − Im⟨M(iη)⟩` for one matrix.
pub fn local_law_deviation(spec: &DeformationSpectrum, x: &Mat<C64>, z: C64, eta: f64) -> Result<f64> {
    let sigmas = singular_values(&deformed_matrix(spec, x)?, z)?;
    let n = sigmas.len() as f64;
    let g = sigmas.iter().map(|s| eta / (s * s + eta * eta)).sum::<f64>() / n;
    Ok(g - im_m_trace(spec, z, eta, &SolverConfig::default())?)
}

/// Smallest singular values of `A + X − z` over trials, or of `|A − z| + X`
/// when `modulus` is set.
pub fn smallest_singular_values(
    spec: &DeformationSpectrum,
    model: Model,
    z: C64,
    trials: usize,
    seed0: u64,
    modulus: bool,
) -> Result<Vec<f64>> {
    let base = if modulus { spec.map(|l| C64::new((l - z).norm(), 0.0))? } else { spec.clone() };
    let point = if modulus { C64::new(0.0, 0.0) } else { z };
    let n = spec.n() as usize;
    (0..trials as u64)
        .into_par_iter()
        .map(|j| {
            let x = sample_matrix(model, n, seed0.wrapping_add(j))?;
            Ok(singular_values(&deformed_matrix(&base, &x)?, point)?[0])
        })
        .collect()
}

/// Fraction of trials whose smallest singular value is below `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub probability: f64,
    /// Binomial standard error `√(p(1 − p)/trials)`.
    pub std_error: f64,
    pub hits: usize,
    pub trials: usize,
}

pub fn smallest_sv_tail(spec: &DeformationSpectrum, model: Model, z: C64, eta: f64, trials: usize, seed0: u64) -> Result<TailEstimate> {
    if trials == 0 {
        return Err(Error::InvalidInput("at least one trial is needed".into()));
    }
    let s = smallest_singular_values(spec, model, z, trials, seed0, false)?;
    let hits = s.iter().filter(|&&v| v < eta).count();
    let p = hits as f64 / trials as f64;
    Ok(TailEstimate { probability: p, std_error: (p * (1.0 - p) / trials as f64).sqrt(), hits, trials })
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("both samples must be nonempty".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    let ne = (n1 * n2 / (n1 + n2)).sqrt();
    let p_value = kolmogorov_q((ne + 0.12 + 0.11 / ne) * d);
    Ok(KsTest { statistic: d, p_value, n1: x.len(), n2: y.len() })
}
