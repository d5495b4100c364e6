//! End-to-end deformation path from a critical `A`.
//!
//! Real spectra take the two-point Hermitian flow. Otherwise the rotated
//! inverse `B₀` is collapsed to finitely many points, then moved to a lattice
//! target that depends only on its spectral measure, and the concatenated
//! path is lifted back to deformations.

use serde::Serialize;

use crate::criticality::{alpha_from_chi, chi, hessian_at_origin, shape_alpha};
use crate::error::Result;
use crate::flow::finite_support::{finite_support_flow, FiniteSupportConfig, FiniteSupportFlow};
use crate::flow::fix_spectrum::{fix_spectrum_flow, lattice_target, FixConfig, FixSpectrumFlow};
use crate::flow::hermitian::{hermitian_flow, REAL_TOL};
use crate::flow::{derive_b0, lift_to_deformation, FlowPath};
use crate::spectrum::DeformationSpectrum;

#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    /// Norm bound of `B₀`; `1.01·max(‖B₀‖, ‖B₀⁻¹‖, 1/(1 − χ))` when absent.
    pub frak_c: Option<f64>,
    /// Spacing of the target lattice.
    pub lattice: f64,
    pub finite_support: FiniteSupportConfig,
    pub fix: FixConfig,
    /// Largest `B`-side residual accepted by the lift.
    pub lift_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frak_c: None,
            lattice: 1.0 / 64.0,
            finite_support: FiniteSupportConfig::default(),
            fix: FixConfig::default(),
            lift_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DeformationPath {
    pub phi: f64,
    pub frak_c: f64,
    pub chi: f64,
    #[serde(skip)]
    pub b_path: FlowPath,
    #[serde(skip)]
    pub a_path: FlowPath,
    pub finite_support: Option<FiniteSupportFlow>,
    pub fix: Option<FixSpectrumFlow>,
    /// Largest distance from a value of `𝒜₀` to the nearest eigenvalue of `A`.
    pub start_error: f64,
    /// `max_t |α(𝒜_t) − α(A)|`.
    pub alpha_drift: f64,
    /// `max_t |⟨|𝒜_t|⁻²⟩ − 1|`.
    pub normalization: f64,
}

/// Norm bound used when none is configured.
pub fn default_frak_c(b: &DeformationSpectrum) -> Result<f64> {
    let x = chi(b)?.value;
    let chi_bound = if x < 1.0 { 1.0 / (1.0 - x) } else { 1.0 };
    Ok(1.01 * b.norm().max(b.inverse_norm()).max(chi_bound))
}

fn is_real(b: &DeformationSpectrum) -> bool {
    b.eigenvalues().iter().all(|z| z.im.abs() <= REAL_TOL)
}

/// Builds and lifts the path for a critical deformation `A`.
pub fn deformation_path(a: &DeformationSpectrum, cfg: &PipelineConfig) -> Result<DeformationPath> {
    let (b0, phi) = derive_b0(a)?;
    let frak_c = match cfg.frak_c {
        Some(c) => c,
        None => default_frak_c(&b0)?,
    };
    let chi0 = chi(&b0)?.value;
    let (b_path, finite, fix) = if is_real(&b0) {
        (hermitian_flow(&b0, frak_c, cfg.finite_support.grid_points)?, None, None)
    } else {
        let fs = finite_support_flow(&b0, frak_c, &cfg.finite_support)?;
        let collapsed = fs.path.last().collapsed();
        let target = lattice_target(&collapsed, cfg.lattice, 0.0)?;
        let fx = fix_spectrum_flow(&collapsed, &target, &cfg.fix)?;
        (fs.path.concat(&fx.path)?, Some(fs), Some(fx))
    };
    let a_path = lift_to_deformation(&b_path, phi, cfg.lift_tol)?;
    let start_error = a_path
        .first()
        .eigenvalues()
        .iter()
        .map(|v| a.eigenvalues().iter().map(|z| (v - z).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let alpha_a = alpha_from_chi(chi0);
    let alpha_drift = a_path
        .states
        .iter()
        .map(|s| Ok((shape_alpha(&hessian_at_origin(s)?)? - alpha_a).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let normalization = a_path.states.iter().map(|s| (s.trace_re(|z| 1.0 / z.norm_sqr()) - 1.0).abs()).fold(0.0, f64::max);
    Ok(DeformationPath { phi, frak_c, chi: chi0, b_path, a_path, finite_support: finite, fix, start_error, alpha_drift, normalization })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::flow::SegmentKind;
    use crate::generate::{random_critical_atoms, random_critical_real};

    fn small() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.finite_support.grid_points = 33;
        cfg.fix.grid_points = 33;
        cfg
    }

    #[test]
    fn complex_atoms_go_through_both_stages() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = loop {
            let a = random_critical_atoms(&mut rng, 200, 6).unwrap();
            if chi(&derive_b0(&a).unwrap().0).unwrap().value <= 0.8 {
                break a;
            }
        };
        let p = deformation_path(&a, &small()).unwrap();
        assert!(p.start_error < 1e-12, "{}", p.start_error);
        assert!(p.normalization < 1e-12 && p.alpha_drift < 1e-8, "{} {}", p.normalization, p.alpha_drift);
        assert!(p.b_path.segments.iter().any(|s| s.kind == SegmentKind::ConcatJunction));
        assert_eq!(p.a_path.len(), 65);
    }

    #[test]
    fn real_spectra_take_the_hermitian_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_critical_real(&mut rng, 40).unwrap();
        let p = deformation_path(&a, &small()).unwrap();
        assert!(p.finite_support.is_none());
        assert_eq!(p.b_path.last().support_size(), 2);
        assert!(p.start_error < 1e-12 && p.alpha_drift < 1e-8);
    }
}
