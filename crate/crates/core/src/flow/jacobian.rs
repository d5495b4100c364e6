//! The two-point map whose Jacobian controls the stability of the conserved
//! pair `(⟨B²B*⟩, ⟨B³B*⟩ − χ⟨|B|⁴⟩)` under a move of two eigenvalues.
//!
//! Complex numbers are identified with `ℝ²` in the order `(Re, Im)`, so the
//! unknown is `(Re z₁, Im z₁, Re z₂, Im z₂)` and the value is
//! `(Re F₁, Im F₁, Re F₂, Im F₂)`.

use nalgebra::{Matrix2, Matrix4};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectrum::C64;

/// `z²z̄`.
pub fn cubic_moment(z: C64) -> C64 {
    z * z * z.conj()
}

/// `z³z̄ − χ|z|⁴`.
pub fn quartic_moment(z: C64, chi: f64) -> C64 {
    z * z * z * z.conj() - chi * z.norm_sqr() * z.norm_sqr()
}

/// Real 2×2 Jacobian of `f` from its Wirtinger derivatives `∂f` and `∂̄f`.
fn real_jacobian(dz: C64, dzbar: C64) -> Matrix2<f64> {
    let dx = dz + dzbar;
    let dy = C64::i() * (dz - dzbar);
    Matrix2::new(dx.re, dy.re, dx.im, dy.im)
}

/// Real Jacobian of `z ↦ z²z̄`.
pub fn d_cubic_moment(z: C64) -> Matrix2<f64> {
    real_jacobian(2.0 * z * z.conj(), z * z)
}

/// Real Jacobian of `z ↦ z³z̄ − χ|z|⁴`.
pub fn d_quartic_moment(z: C64, chi: f64) -> Matrix2<f64> {
    let zb = z.conj();
    real_jacobian(3.0 * z * z * zb - 2.0 * chi * z * zb * zb, z * z * z - 2.0 * chi * z * z * zb)
}

/// Real 4×2 block `(D(z²z̄); D(z³z̄ − χ|z|⁴))` for one eigenvalue.
pub fn moment_jacobian(z: C64, chi: f64) -> nalgebra::Matrix4x2<f64> {
    let mut m = nalgebra::Matrix4x2::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(&d_cubic_moment(z));
    m.fixed_view_mut::<2, 2>(2, 0).copy_from(&d_quartic_moment(z, chi));
    m
}

/// Value and differential of the two-point map at `(z₁, z₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointMap {
    pub f: [C64; 2],
    pub df: Matrix4<f64>,
    pub det: f64,
    /// Spectral norm of `DF⁻¹`; infinite when `DF` is singular.
    pub inv_norm: f64,
}

/// Evaluates `F₁ = p z₁²z̄₁ + (1−p) z₂²z̄₂` and
/// `F₂ = p z₁³z̄₁ + (1−p) z₂³z̄₂ − χ[p|z₁|⁴ + (1−p)|z₂|⁴]` with their
/// differential. No admissibility check is made.
pub fn f_chi_p(z1: C64, z2: C64, chi: f64, p: f64) -> TwoPointMap {
    let f1 = p * cubic_moment(z1) + (1.0 - p) * cubic_moment(z2);
    let f2 = p * quartic_moment(z1, chi) + (1.0 - p) * quartic_moment(z2, chi);
    let mut df = Matrix4::zeros();
    df.fixed_view_mut::<4, 2>(0, 0).copy_from(&(moment_jacobian(z1, chi) * p));
    df.fixed_view_mut::<4, 2>(0, 2).copy_from(&(moment_jacobian(z2, chi) * (1.0 - p)));
    let det = df.determinant();
    let inv_norm = inverse_norm(&df);
    TwoPointMap { f: [f1, f2], df, det, inv_norm }
}

/// Spectral norm of `m⁻¹`, i.e. the reciprocal of the smallest singular value.
pub fn inverse_norm(m: &Matrix4<f64>) -> f64 {
    let s = m.singular_values();
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
    if smin > 0.0 {
        1.0 / smin
    } else {
        f64::INFINITY
    }
}

/// Admissible region of the two-point map with margin `c ∈ (0, ½)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Admissibility {
    pub c: f64,
}

impl Admissibility {
    /// Lists every violated condition; empty when `(z₁, z₂, χ, p)` is admissible.
    pub fn violations(&self, z1: C64, z2: C64, chi: f64, p: f64) -> Vec<String> {
        let c = self.c;
        let mut out = Vec::new();
        for (name, z) in [("z1", z1), ("z2", z2)] {
            if z.norm() < c || z.norm() > 1.0 / c {
                out.push(format!("|{name}| = {} outside [{c}, {}]", z.norm(), 1.0 / c));
            }
        }
        if z1.re * z2.re > 0.0 {
            out.push(format!("Re z1 = {} and Re z2 = {} on the same side", z1.re, z2.re));
        }
        if z1.re.abs() + z2.re.abs() < c {
            out.push(format!("|Re z1| + |Re z2| = {} below {c}", z1.re.abs() + z2.re.abs()));
        }
        if chi > 1.0 - c {
            out.push(format!("chi = {chi} above {}", 1.0 - c));
        }
        if p < c || p > 1.0 - c {
            out.push(format!("p = {p} outside [{c}, {}]", 1.0 - c));
        }
        out
    }

    /// Same test as [`Self::violations`] without building messages.
    pub fn holds(&self, z1: C64, z2: C64, chi: f64, p: f64) -> bool {
        let c = self.c;
        let modulus_ok = |z: C64| z.norm() >= c && z.norm() <= 1.0 / c;
        modulus_ok(z1)
            && modulus_ok(z2)
            && z1.re * z2.re <= 0.0
            && z1.re.abs() + z2.re.abs() >= c
            && chi <= 1.0 - c
            && p >= c
            && p <= 1.0 - c
    }

    pub fn check(&self, z1: C64, z2: C64, chi: f64, p: f64) -> Result<()> {
        let v = self.violations(z1, z2, chi, p);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::ConditionViolated(v.join("; ")))
        }
    }
}

/// Determinants below this multiple of `‖DF‖⁴` count as singular.
pub const SINGULAR_REL: f64 = 1e-13;

/// [`f_chi_p`] after checking admissibility with margin `c`.
pub fn f_chi_p_checked(z1: C64, z2: C64, chi: f64, p: f64, c: f64) -> Result<TwoPointMap> {
    Admissibility { c }.check(z1, z2, chi, p)?;
    let map = f_chi_p(z1, z2, chi, p);
    let scale = map.df.norm().powi(4);
    if !(map.det.abs() > SINGULAR_REL * scale) {
        return Err(Error::SingularJacobian { det: map.det });
    }
    Ok(map)
}

/// Result of a sweep of `|det DF|` over the admissible region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianSweep {
    pub points: usize,
    pub min_abs_det: f64,
    /// `(Re z₁, Im z₁, Re z₂, Im z₂, χ, p)` at the minimum.
    pub argmin: [f64; 6],
}

impl JacobianSweep {
    fn empty() -> Self {
        Self { points: 0, min_abs_det: f64::INFINITY, argmin: [0.0; 6] }
    }

    fn merge(self, other: Self) -> Self {
        Self {
            points: self.points + other.points,
            min_abs_det: self.min_abs_det.min(other.min_abs_det),
            argmin: if self.min_abs_det <= other.min_abs_det { self.argmin } else { other.argmin },
        }
    }
}

/// Determinant of the unweighted block matrix `(DH(z₁) DH(z₂))`; the
/// weighted one is `p²(1−p)²` times this.
pub fn unweighted_det(z1: C64, z2: C64, chi: f64) -> f64 {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<4, 2>(0, 0).copy_from(&moment_jacobian(z1, chi));
    m.fixed_view_mut::<4, 2>(0, 2).copy_from(&moment_jacobian(z2, chi));
    m.determinant()
}

/// Sweeps `z₁` over the right half of the annulus `c ≤ |z| ≤ 1/c`, `z₂` over
/// the left half, `χ ∈ [0, 1 − c]` and `p ∈ [c, 1 − c]`, all on lattices of
/// spacing `step`, keeping admissible points only.
pub fn sweep_determinant(c: f64, step: f64) -> JacobianSweep {
    use rayon::prelude::*;

    let adm = Admissibility { c };
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| lo + k as f64 * step).collect()
    };
    let r = 1.0 / c;
    let ys = axis(-r, r);
    let half = |sign: f64| -> Vec<C64> {
        axis(0.0, r)
            .iter()
            .flat_map(|&x| ys.iter().map(move |&y| C64::new(sign * x, y)))
            .filter(|z| z.norm() >= c && z.norm() <= r)
            .collect()
    };
    let (right, left) = (half(1.0), half(-1.0));
    let chis = axis(0.0, 1.0 - c);
    let ps = axis(c, 1.0 - c);

    right
        .par_iter()
        .map(|&z1| {
            let mut local = JacobianSweep::empty();
            for &z2 in &left {
                for &chi in &chis {
                    if !adm.holds(z1, z2, chi, 0.5) {
                        continue;
                    }
                    let d = unweighted_det(z1, z2, chi).abs();
                    for &p in &ps {
                        let det = d * (p * (1.0 - p)).powi(2);
                        local.points += 1;
                        if det < local.min_abs_det {
                            local.min_abs_det = det;
                            local.argmin = [z1.re, z1.im, z2.re, z2.im, chi, p];
                        }
                    }
                }
            }
            local
        })
        .reduce(JacobianSweep::empty, JacobianSweep::merge)
}
