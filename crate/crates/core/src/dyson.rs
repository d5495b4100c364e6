//! Dyson equation of the Hermitized deformed model on the imaginary axis.
//!
//! For `H = [[0, A+X−z], [(A+X−z)*, 0]]` the deterministic approximation `M` of
//! the resolvent at `iη` solves `1/M = [[0, A−z], [(A−z)*, 0]] − iη − ⟨M⟩`.
//! On the imaginary axis `⟨M⟩ = i(v − η)`, and for normal `A` the equation
//! reduces to the scalar fixed point `v = η + v⟨1/(|A−z|² + v²)⟩`.

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criticality::{CriticalityReport, Moments};
use crate::error::{Error, Result};
use crate::spectrum::{DeformationSpectrum, C64};

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Absolute tolerance on the scalar defect.
    pub tol: f64,
    /// Tolerance of the full solve, normalized Frobenius norm.
    pub tol_full: f64,
    /// Defect below which the damped iteration hands over to Newton.
    pub newton_switch: f64,
    /// Cap on damped fixed-point steps.
    pub max_fixed_point: usize,
    /// Cap on Newton steps.
    pub max_newton: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-12, tol_full: 1e-10, newton_switch: 1e-4, max_fixed_point: 500, max_newton: 200 }
    }
}

/// Solution at one point `(z, η)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdeSolution {
    #[serde(with = "crate::spectrum::complex_pair")]
    pub z: C64,
    pub eta: f64,
    /// `v = Im⟨M⟩ + η`.
    pub v: f64,
    /// `⟨M⟩`, normalized trace over `2N`.
    #[serde(with = "crate::spectrum::complex_pair")]
    pub m_trace: C64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Full `2N×2N` solution when produced by the dense solver.
    #[serde(skip)]
    pub m_full: Option<Mat<C64>>,
}

impl MdeSolution {
    /// Turns a non-converged iterate into `NoConvergence`.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence { iterations: self.iterations, residual: self.residual })
        }
    }
}

/// `S(v) = ⟨1/(|λ−z|² + v²)⟩` and its derivative, from squared distances.
fn s_and_ds(d2: &[(f64, f64)], v: f64) -> (f64, f64) {
    let (mut s, mut ds) = (0.0, 0.0);
    for &(d, w) in d2 {
        let q = 1.0 / (d + v * v);
        s += w * q;
        ds -= w * 2.0 * v * q * q;
    }
    (s, ds)
}

/// Solves the scalar equation from the default initial guess
/// `v₀ = max(η, (η/⟨|A|⁻⁴⟩)^{1/3})`.
pub fn solve_v_scalar(spec: &DeformationSpectrum, z: C64, eta: f64, cfg: &SolverConfig) -> Result<MdeSolution> {
    if !(eta > 0.0) {
        return Err(Error::InvalidEta(eta));
    }
    spec.check_away_from(z)?;
    let i4 = spec.trace_re(|l| (l - z).norm_sqr().powi(-2));
    let v0 = eta.max((eta / i4).cbrt());
    solve_v_scalar_from(spec, z, eta, v0, cfg)
}

/// Solves the scalar equation from a caller-supplied positive start.
pub fn solve_v_scalar_from(
    spec: &DeformationSpectrum,
    z: C64,
    eta: f64,
    v0: f64,
    cfg: &SolverConfig,
) -> Result<MdeSolution> {
    if !(eta > 0.0) {
        return Err(Error::InvalidEta(eta));
    }
    spec.check_away_from(z)?;
    let n = spec.n() as f64;
    let d2: Vec<(f64, f64)> = spec.iter().map(|(l, m)| ((l - z).norm_sqr(), m as f64 / n)).collect();
    let defect = |v: f64| eta + v * s_and_ds(&d2, v).0 - v;

    // Damped fixed point v ← v + ω(η + vS(v) − v), ω halved on oscillation.
    let mut v = v0.max(eta);
    let mut d = defect(v);
    let mut omega = 1.0;
    let mut iterations = 0;
    while d.abs() > cfg.newton_switch && iterations < cfg.max_fixed_point {
        let trial = (v + omega * d).max(eta);
        let dt = defect(trial);
        iterations += 1;
        if dt.abs() > d.abs() || dt * d < 0.0 && dt.abs() > 0.5 * d.abs() {
            omega *= 0.5;
            if omega < 1e-8 {
                break;
            }
            continue;
        }
        v = trial;
        d = dt;
    }

    // Newton on g(v) = D(v)/v = η/v + S(v) − 1, strictly decreasing, kept in a bracket.
    let g = |v: f64| {
        let (s, ds) = s_and_ds(&d2, v);
        (eta / v + s - 1.0, -eta / (v * v) + ds)
    };
    let mut lo = eta;
    let mut hi = v.max(eta) * 2.0 + 1.0;
    while g(hi).0 > 0.0 {
        hi *= 2.0;
    }
    if g(v).0 > 0.0 {
        lo = lo.max(v);
    } else {
        hi = hi.min(v);
    }
    let mut converged = false;
    for _ in 0..cfg.max_newton {
        iterations += 1;
        let (gv, dg) = g(v);
        if gv > 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        let mut next = if dg < 0.0 { v - gv / dg } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - v).abs();
        v = next;
        if (v * g(v).0).abs() <= cfg.tol && step <= 1e-14 * v {
            converged = true;
            break;
        }
        if hi - lo <= 4.0 * f64::EPSILON * v {
            converged = (v * g(v).0).abs() <= cfg.tol;
            break;
        }
    }
    let residual = defect(v).abs();
    Ok(MdeSolution {
        z,
        eta,
        v,
        m_trace: C64::new(0.0, v - eta),
        residual,
        iterations,
        converged: converged || residual <= cfg.tol,
        m_full: None,
    })
}

/// Solves many `(z, η)` points in parallel.
pub fn solve_grid(spec: &DeformationSpectrum, points: &[(C64, f64)], cfg: &SolverConfig) -> Vec<Result<MdeSolution>> {
    points.par_iter().map(|&(z, eta)| solve_v_scalar(spec, z, eta, cfg)).collect()
}

/// The `2N×2N` matrix `[[0, A−z], [(A−z)*, 0]]`.
fn hermitization(a: &Mat<C64>, z: C64) -> Mat<C64> {
    let n = a.nrows();
    let mut e = Mat::<C64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let x = a[(i, j)] - if i == j { z } else { C64::new(0.0, 0.0) };
            e[(i, n + j)] = x;
            e[(n + j, i)] = x.conj();
        }
    }
    e
}

/// Dense diagonal matrix holding a spectrum, eigenvalues repeated.
pub fn diagonal_matrix(spec: &DeformationSpectrum) -> Mat<C64> {
    let eigs = spec.expanded();
    let n = eigs.len();
    Mat::from_fn(n, n, |i, j| if i == j { eigs[i] } else { C64::new(0.0, 0.0) })
}

/// `(E − ζ)⁻¹`, its normalized trace and `⟨G²⟩`.
fn resolvent(e: &Mat<C64>, zeta: C64) -> Option<(Mat<C64>, C64, C64)> {
    let n2 = e.nrows();
    let mut shifted = e.clone();
    for i in 0..n2 {
        shifted[(i, i)] -= zeta;
    }
    let g = shifted.partial_piv_lu().inverse();
    let mut tr = C64::new(0.0, 0.0);
    let mut tr2 = C64::new(0.0, 0.0);
    for i in 0..n2 {
        tr += g[(i, i)];
        for j in 0..n2 {
            tr2 += g[(i, j)] * g[(j, i)];
        }
    }
    if !tr.re.is_finite() || !tr.im.is_finite() {
        return None;
    }
    Some((g, tr / n2 as f64, tr2 / n2 as f64))
}

fn normalized_frobenius_diff(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            s += (a[(i, j)] - b[(i, j)]).norm_sqr();
        }
    }
    (s / n as f64).sqrt()
}

/// Solves the full `2N×2N` equation for a dense `A`.
///
/// The unknown is the scalar `m = ⟨M⟩`; every evaluation inverts the full
/// matrix `E − iη − m`. The reported residual is `‖M(m) − M(⟨M(m)⟩)‖` in the
/// normalized Frobenius norm, an upper bound for the normalized trace norm.
pub fn solve_mde_full(a: &Mat<C64>, z: C64, eta: f64, cfg: &SolverConfig) -> Result<MdeSolution> {
    if !(eta > 0.0) {
        return Err(Error::InvalidEta(eta));
    }
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows() as u64, got: a.ncols() as u64 });
    }
    let e = hermitization(a, z);
    let ieta = C64::new(0.0, eta);
    let eval = |m: C64, it: usize| resolvent(&e, ieta + m).ok_or(Error::SingularIterate { iteration: it });

    let mut m = C64::new(0.0, 1.0);
    let (_, mut phi, mut dphi) = eval(m, 0)?;
    let mut iterations = 0;
    let mut omega = 1.0;
    while (phi - m).norm() > cfg.newton_switch && iterations < cfg.max_fixed_point {
        iterations += 1;
        let trial = m + (phi - m) * omega;
        if trial.im <= 0.0 {
            omega *= 0.5;
            continue;
        }
        let (_, p, dp) = eval(trial, iterations)?;
        if (p - trial).norm() > (phi - m).norm() {
            omega *= 0.5;
            if omega < 1e-8 {
                break;
            }
            continue;
        }
        m = trial;
        phi = p;
        dphi = dp;
    }
    // Newton on F(m) = Φ(m) − m with F'(m) = ⟨G²⟩ − 1, step-halving keeps Im m > 0.
    for _ in 0..cfg.max_newton {
        let f = phi - m;
        if f.norm() <= 1e-3 * cfg.tol_full {
            break;
        }
        iterations += 1;
        let step = -f / (dphi - 1.0);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = m + step * t;
            if trial.im > 0.0 {
                if let Ok((_, p, dp)) = eval(trial, iterations) {
                    if (p - trial).norm() < f.norm() {
                        m = trial;
                        phi = p;
                        dphi = dp;
                        accepted = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (g_m, _, _) = eval(m, iterations)?;
    let (g_next, _, _) = eval(phi, iterations)?;
    let residual = normalized_frobenius_diff(&g_m, &g_next);
    Ok(MdeSolution {
        z,
        eta,
        v: phi.im + eta,
        m_trace: phi,
        residual,
        iterations,
        converged: residual <= cfg.tol_full,
        m_full: Some(g_next),
    })
}

/// Full solve for a normal deformation given by its spectrum.
pub fn solve_mde_full_spectrum(
    spec: &DeformationSpectrum,
    z: C64,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<MdeSolution> {
    solve_mde_full(&diagonal_matrix(spec), z, eta, cfg)
}

/// `|⟨|A|⁻⁴⟩v³ − ½(x, y)ℋ(x, y)ᵀ v − η|` at the solution `v(z, η)`.
pub fn cubic_residual(
    spec: &DeformationSpectrum,
    report: &CriticalityReport,
    z: C64,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let v = solve_v_scalar(spec, z, eta, cfg)?.require_converged()?.v;
    let q = report.hessian().quadratic(z);
    Ok((report.i4 * v * v * v - 0.5 * q * v - eta).abs())
}

/// Time-dependent scalings of a deformation along a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowScalings {
    /// `⟨|A|⁻⁴⟩`.
    pub i4: f64,
    /// `⟨A⁻²(A*)⁻²⟩`.
    pub i4_tilde: f64,
    /// `I₄^{−1/4}`.
    pub c_t: f64,
    /// `2 I₄^{−1/4} Ĩ₄^{1/2} e^{−iθ}`, equal to the static scaling parameter.
    #[serde(with = "crate::spectrum::complex_pair")]
    pub gamma_t: C64,
    pub theta: f64,
    pub alpha: f64,
    /// `N^{−3/4−δ}`.
    pub eta_inf: f64,
    /// `c_t⁻¹ η_∞`.
    pub eta_t: f64,
}

/// Evaluates the scalings of `spec` at dimension `n` with exponent offset `delta`.
pub fn flow_scalings(spec: &DeformationSpectrum, n: u64, delta: f64) -> Result<FlowScalings> {
    let m = Moments::of_spectrum(spec)?;
    let h = crate::criticality::Hessian::from_moments(&m);
    let alpha = crate::criticality::shape_alpha(&h)?;
    let theta = h.theta();
    let c_t = m.i4.powf(-0.25);
    let gamma_t = C64::from_polar(2.0 * c_t * m.a22.sqrt(), -theta);
    let eta_inf = (n as f64).powf(-0.75 - delta);
    Ok(FlowScalings { i4: m.i4, i4_tilde: m.a22, c_t, gamma_t, theta, alpha, eta_inf, eta_t: eta_inf / c_t })
}

/// Maps a rescaled point `w` back to `z = γ_t⁻¹ N^{−1/4} w`.
pub fn unscale_point(w: C64, scalings: &FlowScalings, n: u64) -> C64 {
    w / (scalings.gamma_t * (n as f64).powf(0.25))
}

/// Residual of the rescaled cubic at `w`:
/// `|u³ − N^{−1/2}·½((Re w)² + α(Im w)²)/(1+α)·u − η_∞|` with `u = I₄^{1/4}v`.
pub fn rescaled_cubic_residual(
    spec: &DeformationSpectrum,
    w: C64,
    scalings: &FlowScalings,
    n: u64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let z = unscale_point(w, scalings, n);
    let v = solve_v_scalar(spec, z, scalings.eta_t, cfg)?.require_converged()?.v;
    let u = v / scalings.c_t;
    let a = scalings.alpha;
    let q = 0.5 * (w.re * w.re + a * w.im * w.im) / (1.0 + a);
    Ok((u * u * u - q * u / (n as f64).sqrt() - scalings.eta_inf).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn pm_one(n: u64) -> DeformationSpectrum {
        DeformationSpectrum::from_real(&[1.0, -1.0], vec![n / 2, n / 2]).unwrap()
    }

    /// Plain bisection on `v³/(1+v²) = η`, the reduced equation for `diag(±1)` at `z = 0`.
    fn bisect_pm_one(eta: f64) -> f64 {
        let (mut lo, mut hi) = (eta, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid.powi(3) / (1.0 + mid * mid) < eta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn pm_one_matches_reduced_equation() {
        let cfg = SolverConfig::default();
        let sol = solve_v_scalar(&pm_one(10), c(0.0, 0.0), 1e-6, &cfg).unwrap();
        assert!(sol.converged);
        let oracle = bisect_pm_one(1e-6);
        assert!((sol.v - oracle).abs() < 1e-12 * oracle);
        assert!((sol.v - 1.00003e-2).abs() < 1e-7);
        assert!(sol.residual <= 1e-12);
    }

    #[test]
    fn large_eta_limit() {
        let cfg = SolverConfig::default();
        for &eta in &[1e2, 1e3, 1e4] {
            let v = solve_v_scalar(&pm_one(4), c(0.0, 0.0), eta, &cfg).unwrap().v;
            assert!((v / eta - 1.0).abs() < 2.0 / (eta * eta));
        }
    }

    #[test]
    fn outside_support_branch_is_linear() {
        let cfg = SolverConfig::default();
        let s = pm_one(4);
        let z = c(0.0, 0.5);
        let level = s.trace_re(|l| 1.0 / (l - z).norm_sqr());
        assert!(level < 1.0);
        for &eta in &[1e-6, 1e-8] {
            let v = solve_v_scalar(&s, z, eta, &cfg).unwrap().v;
            let pred = eta / (1.0 - level);
            assert!(((v - eta) / (pred - eta) - 1.0).abs() < 1e-4, "{v} vs {pred}");
        }
    }

    #[test]
    fn invalid_eta_is_rejected() {
        let cfg = SolverConfig::default();
        assert!(matches!(solve_v_scalar(&pm_one(4), c(0.0, 0.0), 0.0, &cfg), Err(Error::InvalidEta(_))));
        let a = diagonal_matrix(&pm_one(4));
        assert!(matches!(solve_mde_full(&a, c(0.0, 0.0), -1.0, &cfg), Err(Error::InvalidEta(_))));
    }

    #[test]
    fn two_starts_reach_the_same_root() {
        let cfg = SolverConfig::default();
        let s = DeformationSpectrum::from_points(vec![c(1.2, 0.3), c(-0.7, 0.9), c(0.4, -1.1)]).unwrap();
        for &eta in &[1e-8, 1e-4, 1e-1] {
            let a = solve_v_scalar_from(&s, c(0.1, 0.05), eta, eta, &cfg).unwrap().v;
            let b = solve_v_scalar_from(&s, c(0.1, 0.05), eta, 10.0, &cfg).unwrap().v;
            assert!((a - b).abs() <= 1e-10 * a.max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn v_increases_with_eta() {
        let cfg = SolverConfig::default();
        let s = pm_one(6);
        let vs: Vec<f64> = [1e-9, 1e-7, 1e-5, 1e-3, 1e-1, 1.0]
            .iter()
            .map(|&e| solve_v_scalar(&s, c(0.05, 0.02), e, &cfg).unwrap().v)
            .collect();
        assert!(vs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn full_solver_free_case() {
        // A = 0 and z = 0: m = 1/(−iη − m) gives m = i(√(η²+4) − η)/2.
        let cfg = SolverConfig::default();
        let a = Mat::<C64>::zeros(6, 6);
        for &eta in &[0.01, 0.5, 3.0] {
            let sol = solve_mde_full(&a, c(0.0, 0.0), eta, &cfg).unwrap();
            let exact = c(0.0, ((eta * eta + 4.0).sqrt() - eta) / 2.0);
            assert!((sol.m_trace - exact).norm() < 1e-11, "{:?} vs {exact}", sol.m_trace);
            assert!(sol.converged);
        }
    }

    #[test]
    fn full_solver_large_eta() {
        let cfg = SolverConfig::default();
        let s = DeformationSpectrum::from_points(vec![c(1.2, 0.3), c(-0.7, 0.9), c(0.4, -1.1), c(-1.0, 0.0)]).unwrap();
        let eta = 10.0;
        let sol = solve_mde_full_spectrum(&s, c(0.0, 0.0), eta, &cfg).unwrap();
        let m = sol.m_full.unwrap();
        let n2 = m.nrows();
        let mut diff = Mat::<C64>::zeros(n2, n2);
        for i in 0..n2 {
            for j in 0..n2 {
                diff[(i, j)] = m[(i, j)] - if i == j { c(0.0, 1.0 / eta) } else { c(0.0, 0.0) };
            }
        }
        let trace_norm: f64 = diff.singular_values().unwrap().iter().sum::<f64>() / n2 as f64;
        assert!(trace_norm <= 2.0 / (eta * eta));
    }

    #[test]
    fn scalar_and_full_agree() {
        let cfg = SolverConfig::default();
        let s = DeformationSpectrum::new(vec![c(1.2, 0.3), c(-0.7, 0.9), c(0.4, -1.1)], vec![2, 1, 3]).unwrap();
        for &(z, eta) in &[(c(0.0, 0.0), 1e-3), (c(0.3, -0.2), 0.05), (c(1.0, 1.0), 0.5)] {
            let a = solve_v_scalar(&s, z, eta, &cfg).unwrap();
            let b = solve_mde_full_spectrum(&s, z, eta, &cfg).unwrap();
            assert!((a.m_trace - b.m_trace).norm() < 1e-10, "{:?} vs {:?}", a.m_trace, b.m_trace);
            assert!(b.m_trace.im > 0.0);
        }
    }

    #[test]
    fn cubic_residual_at_origin() {
        let cfg = SolverConfig::default();
        let s = pm_one(8);
        let r = crate::criticality::verify_criticality(&s, 2.0, 1e-8).unwrap();
        let eta = 1e-6;
        let res = cubic_residual(&s, &r, c(0.0, 0.0), eta, &cfg).unwrap();
        let v = bisect_pm_one(eta);
        assert!((res - eta * v * v).abs() < 1e-3 * eta * v * v);
        assert!(res <= 10.0 * eta.powf(4.0 / 3.0));
    }

    #[test]
    fn flow_scalings_examples() {
        let s = pm_one(8);
        let f = flow_scalings(&s, 8, 0.05).unwrap();
        assert!((f.i4 - 1.0).abs() < 1e-15 && (f.c_t - 1.0).abs() < 1e-15);
        let f = flow_scalings(&s, 4096, 0.01).unwrap();
        assert!((f.eta_inf - 4096f64.powf(-0.76)).abs() < 1e-18);
        // A_c at c = 1: eigenvalues (±1 ± i)/√2 all of modulus one.
        let k = 0.5f64.sqrt();
        let ac = DeformationSpectrum::from_points(vec![c(k, k), c(k, -k), c(-k, k), c(-k, -k)]).unwrap();
        let f = flow_scalings(&ac, 4, 0.05).unwrap();
        let direct: f64 = ac.eigenvalues().iter().map(|l| (l * l).norm_sqr().recip()).sum::<f64>() / 4.0;
        assert!((f.i4_tilde - direct).abs() < 1e-15);
        let (g, _) = crate::criticality::scaling_gamma(&ac).unwrap();
        assert!((f.gamma_t - g).norm() < 1e-14);
    }

    #[test]
    fn rescaled_cubic_at_zero_matches_plain_cubic() {
        let cfg = SolverConfig::default();
        let s = pm_one(8);
        let n = 10_000;
        let f = flow_scalings(&s, n, 0.05).unwrap();
        let r = crate::criticality::verify_criticality(&s, 2.0, 1e-8).unwrap();
        let a = rescaled_cubic_residual(&s, c(0.0, 0.0), &f, n, &cfg).unwrap();
        let b = cubic_residual(&s, &r, c(0.0, 0.0), f.eta_t, &cfg).unwrap() * f.c_t;
        assert!((a - b).abs() < 1e-20 + 1e-9 * b);
        for &w in &[c(0.5, 0.0), c(0.0, 0.7), c(0.6, -0.6)] {
            assert!(rescaled_cubic_residual(&s, w, &f, n, &cfg).unwrap() < 1.0 / n as f64);
        }
    }
}
