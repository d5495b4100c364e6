//! Scalar functionals characterizing a critical edge of `A + X` at the origin.
//!
//! For a normal `A` every functional is a weighted trace over the spectrum.
//! The Hessian of `z ↦ ⟨|A−z|⁻²⟩` at the origin only needs the two moments
//! `a₃ = ⟨A⁻³(A*)⁻¹⟩` and `a₂₂ = ⟨A⁻²(A*)⁻²⟩`, which also makes sense for a
//! dense (possibly non-normal) matrix.

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{DeformationSpectrum, C64, MODULUS_FLOOR};

/// Relative gap below which the two Hessian eigenvalues count as equal.
pub const TIE_TOL: f64 = 1e-9;

/// Default relative tolerance of the criticality conditions.
pub const DEFAULT_TOL: f64 = 1e-8;

/// The moments entering the Hessian at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    /// `⟨|A|⁻²⟩`.
    pub inv2: f64,
    /// `⟨A⁻²(A*)⁻¹⟩`.
    pub skew: C64,
    /// `⟨A⁻³(A*)⁻¹⟩`.
    pub a3: C64,
    /// `⟨A⁻²(A*)⁻²⟩`.
    pub a22: f64,
    /// `⟨|A|⁻⁴⟩`; equals `a22` for normal `A`.
    pub i4: f64,
}

impl Moments {
    pub fn of_spectrum(spec: &DeformationSpectrum) -> Result<Self> {
        spec.check_nonzero()?;
        let inv2 = spec.trace_re(|l| 1.0 / l.norm_sqr());
        let skew = spec.trace(|l| 1.0 / (l * l * l.conj()));
        let a3 = spec.trace(|l| 1.0 / (l * l * l * l.conj()));
        let a22 = spec.trace_re(|l| 1.0 / (l.norm_sqr() * l.norm_sqr()));
        Ok(Self { inv2, skew, a3, a22, i4: a22 })
    }

    /// Moments of a dense square matrix, through its inverse.
    pub fn of_dense(a: &Mat<C64>) -> Result<Self> {
        let inv = dense_inverse(a)?;
        let n = a.nrows() as f64;
        let p = &inv * &inv;
        let q = &p * &inv;
        let frob2 = |m: &Mat<C64>| -> f64 {
            (0..m.ncols()).map(|j| (0..m.nrows()).map(|i| m[(i, j)].norm_sqr()).sum::<f64>()).sum()
        };
        // tr(P R*) = Σ P_ij conj(R_ij).
        let tr_conj = |p: &Mat<C64>, r: &Mat<C64>| -> C64 {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..p.ncols() {
                for i in 0..p.nrows() {
                    s += p[(i, j)] * r[(i, j)].conj();
                }
            }
            s
        };
        // ⟨|A|⁻⁴⟩ = ⟨(A*A)⁻²⟩ = ‖(A*A)⁻¹‖²_F / N with (A*A)⁻¹ = A⁻¹A⁻*.
        let gram_inv = &inv * inv.adjoint();
        Ok(Self {
            inv2: frob2(&inv) / n,
            skew: tr_conj(&p, &inv) / n,
            a3: tr_conj(&q, &inv) / n,
            a22: frob2(&p) / n,
            i4: frob2(&gram_inv) / n,
        })
    }
}

fn dense_inverse(a: &Mat<C64>) -> Result<Mat<C64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows() as u64, got: a.ncols() as u64 });
    }
    let inv = a.partial_piv_lu().inverse();
    for j in 0..inv.ncols() {
        for i in 0..inv.nrows() {
            let x = inv[(i, j)];
            if !x.re.is_finite() || !x.im.is_finite() {
                return Err(Error::ZeroEigenvalue { index: j, modulus: 0.0 });
            }
        }
    }
    Ok(inv)
}

/// Real symmetric 2×2 Hessian of `(x, y) ↦ ⟨|A − x − iy|⁻²⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hessian {
    pub h11: f64,
    pub h12: f64,
    pub h22: f64,
}

impl Hessian {
    pub fn from_moments(m: &Moments) -> Self {
        Self {
            h11: 4.0 * m.a3.re + 2.0 * m.a22,
            h22: -4.0 * m.a3.re + 2.0 * m.a22,
            h12: -4.0 * m.a3.im,
        }
    }

    pub fn as_array(&self) -> [[f64; 2]; 2] {
        [[self.h11, self.h12], [self.h12, self.h22]]
    }

    pub fn trace(&self) -> f64 {
        self.h11 + self.h22
    }

    /// Eigenvalues `λ₁ ≥ λ₂`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.h11 + self.h22);
        let rad = (0.25 * (self.h11 - self.h22).powi(2) + self.h12 * self.h12).sqrt();
        (mean + rad, mean - rad)
    }

    /// Angle in `[0, π)` of the `λ₁` eigenvector; zero on a tie.
    pub fn theta(&self) -> f64 {
        let (l1, l2) = self.eigenvalues();
        if (l1 - l2).abs() <= TIE_TOL * l1.abs() {
            return 0.0;
        }
        let t = 0.5 * (2.0 * self.h12).atan2(self.h11 - self.h22);
        t.rem_euclid(std::f64::consts::PI)
    }

    /// Quadratic form `(x, y) ℋ (x, y)ᵀ`.
    pub fn quadratic(&self, z: C64) -> f64 {
        self.h11 * z.re * z.re + 2.0 * self.h12 * z.re * z.im + self.h22 * z.im * z.im
    }
}

/// Hessian at the origin of a normal deformation.
pub fn hessian_at_origin(spec: &DeformationSpectrum) -> Result<Hessian> {
    Ok(Hessian::from_moments(&Moments::of_spectrum(spec)?))
}

/// Hessian at the origin of a dense matrix.
pub fn hessian_dense(a: &Mat<C64>) -> Result<Hessian> {
    Ok(Hessian::from_moments(&Moments::of_dense(a)?))
}

/// Shape parameter `α = λ₂/λ₁`.
pub fn shape_alpha(h: &Hessian) -> Result<f64> {
    let (l1, l2) = h.eigenvalues();
    if l1 <= 0.0 {
        return Err(Error::DegenerateHessian { lambda1: l1 });
    }
    Ok(l2 / l1)
}

/// Scaling parameter `γ = (Tr ℋ)^{1/2} ⟨|A|⁻⁴⟩^{−1/4} e^{−iθ}` from a Hessian
/// and `⟨|A|⁻⁴⟩`. The phase makes `w = γz` align the `λ₁` direction with the
/// real axis. Returns `(γ, θ)`.
pub fn gamma_from_hessian(h: &Hessian, i4: f64) -> Result<(C64, f64)> {
    let (l1, _) = h.eigenvalues();
    if l1 <= 0.0 {
        return Err(Error::DegenerateHessian { lambda1: l1 });
    }
    let theta = h.theta();
    let modulus = h.trace().sqrt() / i4.powf(0.25);
    Ok((C64::from_polar(modulus, -theta), theta))
}

/// `(γ, θ)` of a normal deformation.
pub fn scaling_gamma(spec: &DeformationSpectrum) -> Result<(C64, f64)> {
    let m = Moments::of_spectrum(spec)?;
    gamma_from_hessian(&Hessian::from_moments(&m), m.i4)
}

/// `β = N^{1/2}(1 − ⟨|A − z|⁻²⟩)`.
pub fn beta_offset(spec: &DeformationSpectrum, z: C64) -> Result<f64> {
    spec.check_away_from(z)?;
    let s = spec.trace_re(|l| 1.0 / (l - z).norm_sqr());
    Ok((spec.n() as f64).sqrt() * (1.0 - s))
}

/// `χ(B) = ⟨B³B*⟩ / ⟨|B|⁴⟩`, split into real value and imaginary diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi {
    pub value: f64,
    pub imag: f64,
}

pub fn chi(spec_b: &DeformationSpectrum) -> Result<Chi> {
    spec_b.check_nonzero()?;
    let num = spec_b.trace(|b| b * b * b * b.conj());
    let den = spec_b.trace_re(|b| b.norm_sqr() * b.norm_sqr());
    Ok(Chi { value: num.re / den, imag: num.im / den })
}

/// `α = (1 − 2χ)/(1 + 2χ)`.
pub fn alpha_from_chi(chi: f64) -> f64 {
    (1.0 - 2.0 * chi) / (1.0 + 2.0 * chi)
}

/// Rotation angle `φ = arg⟨A⁻³(A*)⁻¹⟩ / 2 ∈ [0, π)`, zero when the moment vanishes.
pub fn rotation_angle(a3: C64) -> f64 {
    if a3.norm() <= MODULUS_FLOOR {
        return 0.0;
    }
    0.5 * a3.arg().rem_euclid(2.0 * std::f64::consts::PI)
}

/// Every functional at the origin, with the verdict of the criticality test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub n: u64,
    pub inv2: f64,
    #[serde(with = "crate::spectrum::complex_pair")]
    pub skew: C64,
    pub hessian: [[f64; 2]; 2],
    pub lambda1: f64,
    pub lambda2: f64,
    /// `4⟨A⁻²(A*)⁻²⟩`, which must equal `λ₁ + λ₂`.
    pub lambda_sum_check: f64,
    pub alpha: f64,
    pub theta: f64,
    #[serde(with = "crate::spectrum::complex_pair")]
    pub gamma: C64,
    pub beta: Option<f64>,
    pub chi: f64,
    pub chi_imag: f64,
    pub phi: f64,
    pub i4: f64,
    pub norm_a: f64,
    pub norm_a_inv: f64,
    pub inv2_ok: bool,
    pub skew_ok: bool,
    pub norms_ok: bool,
    pub is_critical: bool,
    pub tol: f64,
    pub frak_c: f64,
}

/// Evaluates every functional and checks criticality with parameter `frak_c`.
pub fn verify_criticality(spec: &DeformationSpectrum, frak_c: f64, tol: f64) -> Result<CriticalityReport> {
    let m = Moments::of_spectrum(spec)?;
    let h = Hessian::from_moments(&m);
    let (lambda1, lambda2) = h.eigenvalues();
    let alpha = shape_alpha(&h)?;
    let (gamma, theta) = gamma_from_hessian(&h, m.i4)?;
    let phi = rotation_angle(m.a3);
    let rot = C64::from_polar(1.0, -phi);
    let b = spec.map(|l| rot / l)?;
    let c = chi(&b)?;
    let norm_a = spec.norm();
    let norm_a_inv = spec.inverse_norm();
    let inv2_ok = (m.inv2 - 1.0).abs() <= tol;
    let skew_ok = m.skew.norm() <= tol;
    let norms_ok = norm_a <= frak_c * (1.0 + tol) && norm_a_inv <= frak_c * (1.0 + tol);
    Ok(CriticalityReport {
        n: spec.n(),
        inv2: m.inv2,
        skew: m.skew,
        hessian: h.as_array(),
        lambda1,
        lambda2,
        lambda_sum_check: 4.0 * m.a22,
        alpha,
        theta,
        gamma,
        beta: None,
        chi: c.value,
        chi_imag: c.imag,
        phi,
        i4: m.i4,
        norm_a,
        norm_a_inv,
        inv2_ok,
        skew_ok,
        norms_ok,
        is_critical: inv2_ok && skew_ok && norms_ok,
        tol,
        frak_c,
    })
}

impl CriticalityReport {
    pub fn hessian(&self) -> Hessian {
        Hessian { h11: self.hessian[0][0], h12: self.hessian[0][1], h22: self.hessian[1][1] }
    }

    /// Fills in `β` at the base point `z`.
    pub fn with_beta(mut self, spec: &DeformationSpectrum, z: C64) -> Result<Self> {
        self.beta = Some(beta_offset(spec, z)?);
        Ok(self)
    }
}

/// Quadratic approximation of the density of `γ(A + x)` at `z`:
/// `1(⟨|A − γ⁻¹z|⁻²⟩ ≥ 1)/(8π) · [(x²+αy²)/(1+α) + 2(x²+α²y²)/(1+α)²]`.
/// Only meaningful for small `|z|` at a critical `A`.
pub fn density_quadratic(spec: &DeformationSpectrum, report: &CriticalityReport, z: C64) -> Result<f64> {
    let zeta = z / report.gamma;
    spec.check_away_from(zeta)?;
    let level = spec.trace_re(|l| 1.0 / (l - zeta).norm_sqr());
    if level < 1.0 {
        return Ok(0.0);
    }
    Ok(quadratic_profile(report.alpha, z))
}

/// The bracket of the density expansion divided by `8π`, without the indicator.
pub fn quadratic_profile(alpha: f64, z: C64) -> f64 {
    let (x2, y2) = (z.re * z.re, z.im * z.im);
    let a = alpha;
    ((x2 + a * y2) / (1.0 + a) + 2.0 * (x2 + a * a * y2) / ((1.0 + a) * (1.0 + a)))
        / (8.0 * std::f64::consts::PI)
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

    /// `A_c = ⟨|D|⁻²⟩^{1/2} D`, `D = diag(±1 ± ic)`.
    fn a_c(cc: f64) -> DeformationSpectrum {
        let k = (1.0 / (1.0 + cc * cc)).sqrt();
        let eigs = vec![c(k, k * cc), c(k, -k * cc), c(-k, k * cc), c(-k, -k * cc)];
        DeformationSpectrum::new(eigs, vec![5; 4]).unwrap()
    }

    /// Central finite-difference Hessian of `⟨|A − z|⁻²⟩`.
    fn fd_hessian(spec: &DeformationSpectrum) -> [[f64; 2]; 2] {
        let f = |z: C64| spec.trace_re(|l| 1.0 / (l - z).norm_sqr());
        let e = 1e-4;
        let fxx = (f(c(e, 0.0)) - 2.0 * f(c(0.0, 0.0)) + f(c(-e, 0.0))) / (e * e);
        let fyy = (f(c(0.0, e)) - 2.0 * f(c(0.0, 0.0)) + f(c(0.0, -e))) / (e * e);
        let fxy = (f(c(e, e)) - f(c(e, -e)) - f(c(-e, e)) + f(c(-e, -e))) / (4.0 * e * e);
        [[fxx, fxy], [fxy, fyy]]
    }

    #[test]
    fn plus_minus_one_is_critical_with_alpha_minus_third() {
        let r = verify_criticality(&pm_one(10), 2.0, DEFAULT_TOL).unwrap();
        assert!((r.inv2 - 1.0).abs() < 1e-15);
        assert!(r.skew.norm() < 1e-15);
        assert!(r.is_critical);
        assert!((r.alpha + 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(r.hessian, [[6.0, 0.0], [0.0, -2.0]]);
        assert!((r.chi - 1.0).abs() < 1e-15);
        assert_eq!(r.theta, 0.0);
    }

    #[test]
    fn unbalanced_real_spectrum_is_not_critical() {
        let s = DeformationSpectrum::from_real(&[1.0, -1.0], vec![3, 6]).unwrap();
        let r = verify_criticality(&s, 2.0, DEFAULT_TOL).unwrap();
        assert!((r.inv2 - 1.0).abs() < 1e-15);
        assert!((r.skew - c(-1.0 / 3.0, 0.0)).norm() < 1e-15);
        assert!(!r.is_critical);
    }

    #[test]
    fn a_c_family_matches_closed_form() {
        for &cc in &[0.0, 0.25, 0.5, 1.0] {
            let r = verify_criticality(&a_c(cc), 4.0, DEFAULT_TOL).unwrap();
            assert!(r.is_critical, "c = {cc}");
            let expected = (-1.0 + 3.0 * cc * cc) / (3.0 - cc * cc);
            assert!((r.alpha - expected).abs() < 1e-12, "c = {cc}: {} vs {expected}", r.alpha);
            assert!((alpha_from_chi(r.chi) - expected).abs() < 1e-12);
        }
        let r = verify_criticality(&a_c(0.5), 4.0, DEFAULT_TOL).unwrap();
        assert!((r.alpha + 1.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn hessian_identities_match_finite_differences() {
        let eigs = vec![c(1.2, 0.3), c(-0.7, 0.9), c(0.4, -1.1), c(-1.0, -0.2)];
        let s = DeformationSpectrum::new(eigs, vec![1, 2, 3, 1]).unwrap();
        let h = hessian_at_origin(&s).unwrap().as_array();
        let fd = fd_hessian(&s);
        for i in 0..2 {
            for j in 0..2 {
                assert!((h[i][j] - fd[i][j]).abs() < 1e-5 * (1.0 + h[i][j].abs()), "{h:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn theta_is_the_leading_eigendirection() {
        let eigs = vec![c(1.2, 0.3), c(-0.7, 0.9), c(0.4, -1.1)];
        let s = DeformationSpectrum::from_points(eigs).unwrap();
        let h = hessian_at_origin(&s).unwrap();
        let (l1, _) = h.eigenvalues();
        let t = h.theta();
        let v = (t.cos(), t.sin());
        let hv = (h.h11 * v.0 + h.h12 * v.1, h.h12 * v.0 + h.h22 * v.1);
        assert!((hv.0 - l1 * v.0).abs() < 1e-12 && (hv.1 - l1 * v.1).abs() < 1e-12);
        assert!((0.0..std::f64::consts::PI).contains(&t));
    }

    #[test]
    fn tie_gives_zero_angle_and_unit_alpha() {
        let h = Hessian { h11: 3.0, h12: 0.0, h22: 3.0 };
        assert_eq!(shape_alpha(&h).unwrap(), 1.0);
        assert_eq!(h.theta(), 0.0);
        let h = Hessian { h11: 6.0, h12: 0.0, h22: -2.0 };
        assert!((shape_alpha(&h).unwrap() + 1.0 / 3.0).abs() < 1e-15);
        assert!(shape_alpha(&Hessian { h11: -1.0, h12: 0.0, h22: -2.0 }).is_err());
    }

    #[test]
    fn gamma_modulus_is_twice_quartic_root_for_normal_input() {
        let s = a_c(0.3);
        let (g, _) = scaling_gamma(&s).unwrap();
        let i4 = s.trace_re(|l| l.norm_sqr().powi(-2));
        assert!((g.norm() - 2.0 * i4.powf(0.25)).abs() < 1e-12);
    }

    #[test]
    fn gamma_rescaling_aligns_leading_direction_with_real_axis() {
        let eigs = vec![c(1.2, 0.3), c(-0.7, 0.9), c(0.4, -1.1), c(-0.2, 0.5)];
        let s = DeformationSpectrum::from_points(eigs).unwrap();
        let m = Moments::of_spectrum(&s).unwrap();
        let h = Hessian::from_moments(&m);
        let (g, _) = gamma_from_hessian(&h, m.i4).unwrap();
        let (l1, l2) = h.eigenvalues();
        let x = h.quadratic(c(1.0, 0.0) / g) * g.norm_sqr();
        let y = h.quadratic(c(0.0, 1.0) / g) * g.norm_sqr();
        assert!((x - l1).abs() < 1e-10 && (y - l2).abs() < 1e-10);
    }

    #[test]
    fn beta_examples() {
        let s = pm_one(16);
        assert!(beta_offset(&s, c(0.0, 0.0)).unwrap().abs() < 1e-15);
        let scaled = s.map(|l| l * 1.5).unwrap();
        let b = beta_offset(&scaled, c(0.0, 0.0)).unwrap();
        assert!((b - 4.0 * (1.0 - 1.0 / 2.25)).abs() < 1e-13);
        let b = beta_offset(&s, c(0.1, 0.0)).unwrap();
        let direct = 4.0 * (1.0 - 0.5 * (1.0 / 0.81 + 1.0 / 1.21));
        assert!((b - direct).abs() < 1e-13);
        assert!(matches!(beta_offset(&s, c(1.0, 0.0)), Err(Error::ZeroEigenvalue { .. })));
    }

    #[test]
    fn chi_examples() {
        let s = DeformationSpectrum::from_real(&[2.0, -0.5], vec![3, 1]).unwrap();
        assert!((chi(&s).unwrap().value - 1.0).abs() < 1e-15);
        for &cc in &[0.2, 0.7, 1.0] {
            let b = a_c(cc).map(|l| 1.0 / l).unwrap();
            let x = chi(&b).unwrap();
            assert!((x.value - (1.0 - cc * cc) / (1.0 + cc * cc)).abs() < 1e-14);
            let expected_alpha = (3.0 * cc * cc - 1.0) / (3.0 - cc * cc);
            assert!((alpha_from_chi(x.value) - expected_alpha).abs() < 1e-13);
        }
        let b = DeformationSpectrum::from_points(vec![c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0)])
            .unwrap();
        let x = chi(&b).unwrap();
        assert!(x.value.abs() < 1e-15 && x.imag.abs() < 1e-15);
        assert_eq!(alpha_from_chi(0.0), 1.0);
        assert!((alpha_from_chi(1.0) + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn density_vanishes_at_origin_and_is_radial_for_unit_alpha() {
        let s = a_c(1.0);
        let r = verify_criticality(&s, 4.0, DEFAULT_TOL).unwrap();
        assert_eq!(density_quadratic(&s, &r, c(0.0, 0.0)).unwrap(), 0.0);
        let a = quadratic_profile(1.0, c(0.3, 0.0));
        let b = quadratic_profile(1.0, C64::from_polar(0.3, 1.1));
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn density_is_zero_off_support_for_negative_alpha() {
        let s = pm_one(10);
        let r = verify_criticality(&s, 2.0, DEFAULT_TOL).unwrap();
        let z = c(0.0, 0.05);
        assert!(s.trace_re(|l| 1.0 / (l - z / r.gamma).norm_sqr()) < 1.0);
        assert_eq!(density_quadratic(&s, &r, z).unwrap(), 0.0);
        assert!(density_quadratic(&s, &r, c(0.05, 0.0)).unwrap() > 0.0);
    }

    #[test]
    fn dense_moments_agree_with_spectrum_for_diagonal_input() {
        let eigs = vec![c(1.2, 0.3), c(-0.7, 0.9), c(0.4, -1.1)];
        let s = DeformationSpectrum::from_points(eigs.clone()).unwrap();
        let a = Mat::<C64>::from_fn(3, 3, |i, j| if i == j { eigs[i] } else { c(0.0, 0.0) });
        let md = Moments::of_dense(&a).unwrap();
        let ms = Moments::of_spectrum(&s).unwrap();
        assert!((md.a3 - ms.a3).norm() < 1e-13);
        assert!((md.a22 - ms.a22).abs() < 1e-13);
        assert!((md.i4 - ms.i4).abs() < 1e-13);
        assert!((md.skew - ms.skew).norm() < 1e-13);
    }

    #[test]
    fn zero_eigenvalue_is_rejected() {
        let s = DeformationSpectrum::from_real(&[0.0, 1.0], vec![1, 1]).unwrap();
        assert!(matches!(verify_criticality(&s, 2.0, DEFAULT_TOL), Err(Error::ZeroEigenvalue { index: 0, .. })));
    }
}
