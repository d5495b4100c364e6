//! Quantitative implicit function theorem.
//!
//! For `F: ℝⁿ × ℝᵐ → ℝᵐ` with `F(0, 0) = 0`, the solution `y = g(x)` of
//! `F(x, y) = 0` is the fixed point of `f_x(y) = y − D_yF(0,0)⁻¹ F(x, y)`.
//! When `‖I − D_yF(0,0)⁻¹ D_yF(x, y)‖ ≤ ½` on the product of balls
//! `|x| ≤ h_x`, `|y| ≤ h_y`, the map `f_x` is a ½-contraction of the `y`-ball
//! for every `|x| ≤ h̃_x = min(h_x, h_y / (2C₁C₂))`, and `g` is Lipschitz
//! with constant `2C₁C₂`. Both balls use Euclidean norms.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// A `C¹` map `F(x, y)` with its partial differentials.
pub trait ImplicitMap {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    fn jac_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64>;
    fn jac_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64>;
}

/// Closure-backed [`ImplicitMap`].
pub struct FnMap<F, Jy, Jx> {
    pub dim_x: usize,
    pub dim_y: usize,
    pub value: F,
    pub jac_y: Jy,
    pub jac_x: Jx,
}

impl<F, Jy, Jx> ImplicitMap for FnMap<F, Jy, Jx>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    Jy: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64>,
    Jx: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64>,
{
    fn dim_x(&self) -> usize {
        self.dim_x
    }
    fn dim_y(&self) -> usize {
        self.dim_y
    }
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        (self.value)(x, y)
    }
    fn jac_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        (self.jac_y)(x, y)
    }
    fn jac_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        (self.jac_x)(x, y)
    }
}

/// An implicit equation around `(0, 0)` with the radii of its domain.
pub struct IftProblem<M> {
    pub map: M,
    pub h_x: f64,
    pub h_y: f64,
    /// Restricts the control to the nonnegative half of its ball (the
    /// interval `[0, h_x]` for a scalar control).
    pub one_sided: bool,
}

/// Constants established by the contraction precheck.
#[derive(Debug, Clone, Serialize)]
pub struct IftCertificate {
    /// `max(1, ‖D_yF(0,0)⁻¹‖)`.
    pub c1: f64,
    /// Largest sampled `‖D_xF‖`.
    pub c2: f64,
    pub h_x: f64,
    pub h_y: f64,
    /// `min(h_x, h_y / (2 c1 c2))`.
    pub h_x_tilde: f64,
    /// Largest sampled `‖I − D_yF(0,0)⁻¹ D_yF(x, y)‖`.
    pub contraction: f64,
    /// `2 c1 c2`, the Lipschitz bound of the implicit solution.
    pub lipschitz_bound: f64,
    pub samples: usize,
    #[serde(skip)]
    pub j0_inv: DMatrix<f64>,
}

/// Fixed-point solution of `F(x, y) = 0` for one control `x`.
#[derive(Debug, Clone, Serialize)]
pub struct IftSolution {
    pub y: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// `‖g_{n+1} − g_n‖` for every fixed-point step.
    pub steps: Vec<f64>,
    /// True when the Newton fallback finished the solve.
    pub newton: bool,
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Slack allowed on top of the contraction bound ½ for sampled estimates.
pub const CONTRACTION_SLACK: f64 = 0.05;

/// Deterministic sample directions in `ℝᵈ`: the signed basis vectors and
/// the normalized corners of the cube (all corners for `d ≤ 6`).
fn directions(d: usize, nonnegative: bool) -> Vec<DVector<f64>> {
    let mut out = Vec::new();
    for k in 0..d {
        for s in [1.0, -1.0] {
            if nonnegative && s < 0.0 {
                continue;
            }
            let mut e = DVector::zeros(d);
            e[k] = s;
            out.push(e);
        }
    }
    if d > 1 && d <= 6 {
        for mask in 0..(1u32 << d) {
            let v = DVector::from_fn(d, |k, _| if mask >> k & 1 == 1 { -1.0 } else { 1.0 });
            if nonnegative && v.iter().any(|&x| x < 0.0) {
                continue;
            }
            out.push(v / (d as f64).sqrt());
        }
    }
    out
}

fn ball_samples(d: usize, radius: f64, nonnegative: bool) -> Vec<DVector<f64>> {
    let mut out = vec![DVector::zeros(d)];
    for r in [0.25, 0.5, 0.75, 1.0] {
        for e in directions(d, nonnegative) {
            out.push(e * (r * radius));
        }
    }
    out
}

impl<M: ImplicitMap> IftProblem<M> {
    /// Computes `C₁`, `C₂` and the sampled contraction defect; fails with
    /// `ContractionFailed` when the defect exceeds `½ + CONTRACTION_SLACK`.
    pub fn precheck(&self) -> Result<IftCertificate> {
        let (n, m) = (self.map.dim_x(), self.map.dim_y());
        let x0 = DVector::zeros(n);
        let y0 = DVector::zeros(m);
        let j0 = self.map.jac_y(&x0, &y0);
        let det = j0.determinant();
        let j0_inv = j0.clone().try_inverse().ok_or(Error::SingularJacobian { det })?;
        if !j0_inv.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularJacobian { det });
        }
        let c1 = spectral_norm(&j0_inv).max(1.0);
        let xs = ball_samples(n, self.h_x, self.one_sided);
        let ys = ball_samples(m, self.h_y, false);
        let eye = DMatrix::<f64>::identity(m, m);
        let (mut contraction, mut c2) = (0.0f64, 0.0f64);
        for x in &xs {
            for y in &ys {
                let jy = self.map.jac_y(x, y);
                contraction = contraction.max(spectral_norm(&(&eye - &j0_inv * jy)));
                c2 = c2.max(spectral_norm(&self.map.jac_x(x, y)));
            }
        }
        if !(contraction <= 0.5 + CONTRACTION_SLACK) {
            return Err(Error::ContractionFailed { defect: contraction });
        }
        let h_x_tilde = if c2 > 0.0 { self.h_x.min(self.h_y / (2.0 * c1 * c2)) } else { self.h_x };
        Ok(IftCertificate {
            c1,
            c2,
            h_x: self.h_x,
            h_y: self.h_y,
            h_x_tilde,
            contraction,
            lipschitz_bound: 2.0 * c1 * c2,
            samples: xs.len() * ys.len(),
            j0_inv,
        })
    }

    /// Solves `F(x, y) = 0` for `y` by the fixed-point iteration started at
    /// `y0` (the origin when `None`), switching to Newton if the iterate
    /// stalls or leaves the `y`-ball.
    pub fn solve(
        &self,
        cert: &IftCertificate,
        x: &DVector<f64>,
        y0: Option<&DVector<f64>>,
        tol: f64,
    ) -> Result<IftSolution> {
        let radius = x.norm();
        if radius > cert.h_x_tilde * (1.0 + 1e-12) {
            return Err(Error::RadiusExceeded { target: radius, radius: cert.h_x_tilde });
        }
        if self.one_sided && x.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidInput("control must be nonnegative".into()));
        }
        let m = self.map.dim_y();
        let mut y = y0.cloned().unwrap_or_else(|| DVector::zeros(m));
        let mut steps = Vec::new();
        let mut f = self.map.value(x, &y);
        const MAX_FIXED_POINT: usize = 200;
        while steps.len() < MAX_FIXED_POINT {
            if f.norm() <= tol {
                return Ok(IftSolution { y: y.iter().copied().collect(), residual: f.norm(), iterations: steps.len(), steps, newton: false });
            }
            let step = -(&cert.j0_inv * &f);
            steps.push(step.norm());
            y += step;
            if y.norm() > cert.h_y * (1.0 + 1e-9) {
                break;
            }
            f = self.map.value(x, &y);
            let k = steps.len();
            if k >= 2 && steps[k - 1] <= 1e-3 * tol && f.norm() > tol {
                break;
            }
        }
        self.newton(x, y, steps, tol)
    }

    fn newton(&self, x: &DVector<f64>, mut y: DVector<f64>, steps: Vec<f64>, tol: f64) -> Result<IftSolution> {
        let iterations = steps.len();
        let mut f = self.map.value(x, &y);
        for k in 0..50 {
            if f.norm() <= tol {
                return Ok(IftSolution { y: y.iter().copied().collect(), residual: f.norm(), iterations: iterations + k, steps, newton: true });
            }
            let j = self.map.jac_y(x, &y);
            let det = j.determinant();
            let dy = j.lu().solve(&f).ok_or(Error::SingularJacobian { det })?;
            y -= dy;
            f = self.map.value(x, &y);
        }
        Err(Error::NoConvergence { iterations: iterations + 50, residual: f.norm() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn cubic_problem(eps: f64) -> IftProblem<impl ImplicitMap> {
        let map = FnMap {
            dim_x: 1,
            dim_y: 1,
            value: move |x: &DVector<f64>, y: &DVector<f64>| scalar(y[0] + eps * y[0].powi(3) - x[0]),
            jac_y: move |_: &DVector<f64>, y: &DVector<f64>| DMatrix::from_element(1, 1, 1.0 + 3.0 * eps * y[0] * y[0]),
            jac_x: |_: &DVector<f64>, _: &DVector<f64>| DMatrix::from_element(1, 1, -1.0),
        };
        IftProblem { map, h_x: 0.5, h_y: 1.0, one_sided: false }
    }

    #[test]
    fn identity_equation_is_solved_in_one_step() {
        let p = cubic_problem(0.0);
        let cert = p.precheck().unwrap();
        assert_eq!(cert.c1, 1.0);
        assert_eq!(cert.contraction, 0.0);
        let s = p.solve(&cert, &scalar(0.3), None, 1e-14).unwrap();
        assert_eq!(s.iterations, 1);
        assert!((s.y[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cubic_perturbation_matches_root_finder() {
        let eps = 0.1;
        let p = cubic_problem(eps);
        let cert = p.precheck().unwrap();
        assert!(cert.contraction <= 0.5);
        for &x in &[-0.4, -0.1, 0.2, 0.45] {
            let s = p.solve(&cert, &scalar(x), None, 1e-14).unwrap();
            // Bisection oracle on the increasing cubic.
            let (mut lo, mut hi) = (-2.0f64, 2.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid + eps * mid.powi(3) - x > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            assert!((s.y[0] - 0.5 * (lo + hi)).abs() < 1e-13, "{x}");
            assert!(!s.newton);
        }
    }

    #[test]
    fn steps_decay_geometrically() {
        let p = cubic_problem(0.1);
        let cert = p.precheck().unwrap();
        let s = p.solve(&cert, &scalar(0.45), None, 1e-15).unwrap();
        let first = s.steps[0];
        for (n, step) in s.steps.iter().enumerate() {
            assert!(*step <= first * 0.5f64.powi(n as i32) * (1.0 + 1e-12), "step {n}");
        }
    }

    #[test]
    fn radius_is_enforced() {
        let p = cubic_problem(0.1);
        let cert = p.precheck().unwrap();
        let too_far = cert.h_x_tilde * 1.5;
        assert!(matches!(p.solve(&cert, &scalar(too_far), None, 1e-12), Err(Error::RadiusExceeded { .. })));
    }

    #[test]
    fn strong_nonlinearity_fails_precheck() {
        let p = IftProblem { h_y: 3.0, ..cubic_problem(1.0) };
        assert!(matches!(p.precheck(), Err(Error::ContractionFailed { .. })));
    }

    #[test]
    fn solution_is_lipschitz_within_bound() {
        let p = cubic_problem(0.1);
        let cert = p.precheck().unwrap();
        let xs: Vec<f64> = (0..21).map(|k| -0.45 + 0.045 * k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| p.solve(&cert, &scalar(x), None, 1e-15).unwrap().y[0]).collect();
        for k in 1..xs.len() {
            let lip = (ys[k] - ys[k - 1]).abs() / (xs[k] - xs[k - 1]);
            assert!(lip <= cert.lipschitz_bound);
        }
    }
}
