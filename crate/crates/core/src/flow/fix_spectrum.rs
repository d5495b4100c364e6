//! Flow between two nearby finitely supported spectra.
//!
//! With common indexing `B_j = ⊕ᵢ z_{j,i} I_{n_{j,i}}` and `n̂ᵢ = min(n_{0,i}, n_{1,i})`,
//! the path splits into three blocks: two anchor points of multiplicity
//! `n̂` (one per half-plane) that are fine-tuned, the other common parts
//! `z_{·,i} I_{n̂ᵢ}` that move linearly, and the surplus entries that move by
//! interpolating modulus and angle. The anchors solve
//! `F_{χ_t,p}(z₀ + w) + q(t) = 0` with `χ_t` linear in `t`, where `q(t)` is
//! the moment contribution of the two crude blocks.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::Serialize;

use crate::criticality::chi;
use crate::error::{Error, Result};
use crate::flow::ift::{spectral_norm, FnMap, IftCertificate, IftProblem, ImplicitMap};
use crate::flow::jacobian::{cubic_moment, moment_jacobian, quartic_moment};
use crate::flow::{uniform_grid, FlowPath, SegmentKind};
use crate::spectrum::{DeformationSpectrum, C64};

/// Settings of the fixing flow.
#[derive(Debug, Clone, Serialize)]
pub struct FixConfig {
    /// Largest allowed `‖z₀ − z₁‖_∞` and `‖n₀ − n₁‖_∞ / N`.
    pub delta_tv: f64,
    pub grid_points: usize,
    pub solve_tol: f64,
}

impl Default for FixConfig {
    fn default() -> Self {
        Self { delta_tv: 0.05, grid_points: 257, solve_tol: 1e-14 }
    }
}

/// Path with the data of its construction.
#[derive(Debug, Clone, Serialize)]
pub struct FixSpectrumFlow {
    #[serde(skip)]
    pub path: FlowPath,
    /// Anchor indices (left, right).
    pub anchors: (usize, usize),
    pub weight: f64,
    pub chi0: f64,
    pub chi1: f64,
    pub certificate: IftCertificate,
    /// Largest distance between the solved anchors and the target at `t = 1`.
    pub snap: f64,
}

/// Left and right anchors: the indices maximizing `nᵢ|Re zᵢ|` on each side.
pub fn anchor_indices(b: &DeformationSpectrum) -> Result<(usize, usize)> {
    let pick = |sign: f64| {
        b.iter()
            .enumerate()
            .filter(|(_, (z, _))| sign * z.re > 0.0)
            .max_by(|x, y| {
                let wx = x.1 .1 as f64 * x.1 .0.re.abs();
                let wy = y.1 .1 as f64 * y.1 .0.re.abs();
                wx.total_cmp(&wy).then(y.0.cmp(&x.0))
            })
            .map(|(i, _)| i)
    };
    match (pick(-1.0), pick(1.0)) {
        (Some(l), Some(r)) => Ok((l, r)),
        _ => Err(Error::InvalidInput("spectrum needs points in both half-planes".into())),
    }
}

/// `(Σ n b²b̄, Σ n(b³b̄ − χ|b|⁴))` as a real 4-vector.
fn weighted_moments(items: impl Iterator<Item = (C64, f64)>, chi: f64) -> DVector<f64> {
    let (mut a, mut b) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    for (z, w) in items {
        a += cubic_moment(z) * w;
        b += quartic_moment(z, chi) * w;
    }
    DVector::from_vec(vec![a.re, a.im, b.re, b.im])
}

/// Moves the two anchors of `b` so that `⟨B²B*⟩ = 0` and `χ(B) = chi_target`,
/// by Newton's method on the four real coordinates.
pub fn rebalance(b: &DeformationSpectrum, chi_target: f64) -> Result<DeformationSpectrum> {
    let (l, r) = anchor_indices(b)?;
    let mut eigs = b.eigenvalues().to_vec();
    let mults: Vec<f64> = b.multiplicities().iter().map(|&m| m as f64).collect();
    let residual = |eigs: &[C64]| weighted_moments(eigs.iter().copied().zip(mults.iter().copied()), chi_target);
    for _ in 0..100 {
        let f = residual(&eigs);
        let scale: f64 = mults.iter().sum();
        if f.norm() <= 1e-15 * scale {
            return DeformationSpectrum::with_dimension(b.n(), eigs, b.multiplicities().to_vec());
        }
        let mut j = DMatrix::zeros(4, 4);
        j.view_mut((0, 0), (4, 2)).copy_from(&(moment_jacobian(eigs[l], chi_target) * mults[l]));
        j.view_mut((0, 2), (4, 2)).copy_from(&(moment_jacobian(eigs[r], chi_target) * mults[r]));
        let det = j.determinant();
        let step = j.lu().solve(&f).ok_or(Error::SingularJacobian { det })?;
        eigs[l] -= C64::new(step[0], step[1]);
        eigs[r] -= C64::new(step[2], step[3]);
    }
    let f = residual(&eigs);
    Err(Error::NoConvergence { iterations: 100, residual: f.norm() })
}

/// Target with every point snapped to the lattice `spacing·ℤ²` and the two
/// anchors re-tuned for criticality and `χ = χ(B₀) + chi_shift`. It depends
/// on `B₀` only through its spectral measure.
pub fn lattice_target(b0: &DeformationSpectrum, spacing: f64, chi_shift: f64) -> Result<DeformationSpectrum> {
    let chi0 = chi(b0)?.value;
    let snapped = b0.map(|z| C64::new((z.re / spacing).round() * spacing, (z.im / spacing).round() * spacing))?;
    snapped.check_nonzero()?;
    rebalance(&snapped, chi0 + chi_shift)
}

/// Source and target of one surplus piece.
struct Surplus {
    from: C64,
    to: C64,
    count: u64,
}

/// Positional pairing of the surplus entries of both ends.
fn surplus_pieces(b0: &DeformationSpectrum, b1: &DeformationSpectrum, common: &[u64]) -> Vec<Surplus> {
    let runs = |b: &DeformationSpectrum| -> Vec<(C64, u64)> {
        b.iter().zip(common).filter(|((_, m), &c)| *m > c).map(|((z, m), &c)| (z, m - c)).collect()
    };
    let (mut a, mut b) = (runs(b0), runs(b1));
    a.reverse();
    b.reverse();
    let mut out = Vec::new();
    while let (Some(x), Some(y)) = (a.last_mut(), b.last_mut()) {
        let take = x.1.min(y.1);
        out.push(Surplus { from: x.0, to: y.0, count: take });
        x.1 -= take;
        y.1 -= take;
        if x.1 == 0 {
            a.pop();
        }
        if y.1 == 0 {
            b.pop();
        }
    }
    out
}

fn polar(z: C64) -> (f64, f64) {
    (z.norm(), z.arg().rem_euclid(std::f64::consts::TAU))
}

/// Modulus and angle interpolation with exact endpoints.
fn polar_step(s: &Surplus, t: f64) -> C64 {
    if t == 0.0 {
        return s.from;
    }
    if t == 1.0 {
        return s.to;
    }
    let (ra, ta) = polar(s.from);
    let (rb, tb) = polar(s.to);
    C64::from_polar((1.0 - t) * ra + t * rb, (1.0 - t) * ta + t * tb)
}

fn polar_velocity(s: &Surplus, t: f64) -> C64 {
    let (ra, ta) = polar(s.from);
    let (rb, tb) = polar(s.to);
    let (r, th) = ((1.0 - t) * ra + t * rb, (1.0 - t) * ta + t * tb);
    C64::from_polar(1.0, th) * C64::new(rb - ra, r * (tb - ta))
}

fn linear_step(a: C64, b: C64, t: f64) -> C64 {
    if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        a * (1.0 - t) + b * t
    }
}

/// Derivative of `(z²z̄, z³z̄ − χ|z|⁴)` along a velocity `v` with `χ` moving at rate `dchi`.
fn moment_rate(z: C64, v: C64, chi: f64, dchi: f64) -> DVector<f64> {
    let d = moment_jacobian(z, chi) * Vector2::new(v.re, v.im);
    DVector::from_vec(vec![d[0], d[1], d[2] - dchi * z.norm_sqr().powi(2), d[3]])
}

/// Smallest `y`-radius whose certificate covers the whole time interval:
/// starts at `2.5 C₁C₂` and moves toward `2 C₁C₂` when the contraction fails.
fn calibrate<M: ImplicitMap>(problem: &mut IftProblem<M>, c1: f64, c2: f64) -> Result<IftCertificate> {
    let (mut c1, mut c2, mut factor) = (c1, c2, 2.5);
    let mut last = Error::RadiusExceeded { target: 1.0, radius: 0.0 };
    for _ in 0..12 {
        problem.h_y = (factor * c1 * c2).max(1e-12);
        match problem.precheck() {
            Ok(cert) if cert.h_x_tilde >= 1.0 - 1e-12 => return Ok(cert),
            Ok(cert) => {
                last = Error::RadiusExceeded { target: 1.0, radius: cert.h_x_tilde };
                (c1, c2) = (cert.c1, cert.c2);
            }
            Err(e @ Error::ContractionFailed { .. }) => {
                last = e;
                factor = 2.0 + 0.5 * (factor - 2.0);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Path from `B₀` to `B₁` with `χ` linear in time.
pub fn fix_spectrum_flow(b0: &DeformationSpectrum, b1: &DeformationSpectrum, cfg: &FixConfig) -> Result<FixSpectrumFlow> {
    if b0.len() != b1.len() || b0.n() != b1.n() {
        return Err(Error::DimensionMismatch { expected: b0.len() as u64, got: b1.len() as u64 });
    }
    let n = b0.n() as f64;
    let dz = b0.eigenvalues().iter().zip(b1.eigenvalues()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let dn = b0.multiplicities().iter().zip(b1.multiplicities()).map(|(&a, &b)| a.abs_diff(b)).max().unwrap_or(0);
    if dz > cfg.delta_tv || dn as f64 > cfg.delta_tv * n {
        return Err(Error::DeltaTvExceeded(format!(
            "‖z0 − z1‖ = {dz:.4e}, ‖n0 − n1‖/N = {:.4e}, threshold {}",
            dn as f64 / n,
            cfg.delta_tv
        )));
    }
    let (c0, c1) = (chi(b0)?, chi(b1)?);
    if c0.imag.abs().max(c1.imag.abs()) > 1e-8 {
        return Err(Error::ConditionViolated("chi of an endpoint is not real".into()));
    }
    let (chi0, chi1) = (c0.value, c1.value);
    let (l, r) = anchor_indices(b0)?;
    let common: Vec<u64> = b0.multiplicities().iter().zip(b1.multiplicities()).map(|(&a, &b)| a.min(b)).collect();
    let (z0, z1) = (b0.eigenvalues(), b1.eigenvalues());
    let anchor_mass = (common[l] + common[r]) as f64;
    if common[l] == 0 || common[r] == 0 {
        return Err(Error::DeltaTvExceeded("an anchor has no common multiplicity".into()));
    }
    let p = common[l] as f64 / anchor_mass;
    let linear: Vec<usize> = (0..b0.len()).filter(|&i| i != l && i != r && common[i] > 0).collect();
    let surplus = surplus_pieces(b0, b1, &common);
    let chi_at = |t: f64| (1.0 - t) * chi0 + t * chi1;

    // Crude blocks: value and time derivative of q(t).
    let q = |t: f64| -> DVector<f64> {
        let chi_t = chi_at(t);
        let items = linear
            .iter()
            .map(|&i| (linear_step(z0[i], z1[i], t), common[i] as f64))
            .chain(surplus.iter().map(|s| (polar_step(s, t), s.count as f64)));
        weighted_moments(items, chi_t) / anchor_mass
    };
    let dq = |t: f64| -> DVector<f64> {
        let (chi_t, dchi) = (chi_at(t), chi1 - chi0);
        let mut out = DVector::zeros(4);
        for &i in &linear {
            out += moment_rate(linear_step(z0[i], z1[i], t), z1[i] - z0[i], chi_t, dchi) * common[i] as f64;
        }
        for s in &surplus {
            out += moment_rate(polar_step(s, t), polar_velocity(s, t), chi_t, dchi) * s.count as f64;
        }
        out / anchor_mass
    };
    let anchors = |w: &DVector<f64>| (z0[l] + C64::new(w[0], w[1]), z0[r] + C64::new(w[2], w[3]));
    let value = |x: &DVector<f64>, w: &DVector<f64>| -> DVector<f64> {
        let (a, b) = anchors(w);
        weighted_moments([(a, p), (b, 1.0 - p)].into_iter(), chi_at(x[0])) + q(x[0])
    };
    let jac_y = |x: &DVector<f64>, w: &DVector<f64>| -> DMatrix<f64> {
        let (a, b) = anchors(w);
        let chi_t = chi_at(x[0]);
        let mut j = DMatrix::zeros(4, 4);
        j.view_mut((0, 0), (4, 2)).copy_from(&(moment_jacobian(a, chi_t) * p));
        j.view_mut((0, 2), (4, 2)).copy_from(&(moment_jacobian(b, chi_t) * (1.0 - p)));
        j
    };
    let jac_x = |x: &DVector<f64>, w: &DVector<f64>| -> DMatrix<f64> {
        let (a, b) = anchors(w);
        let dchi = chi1 - chi0;
        let own = -dchi * (p * a.norm_sqr().powi(2) + (1.0 - p) * b.norm_sqr().powi(2));
        let mut d = dq(x[0]);
        d[2] += own;
        DMatrix::from_column_slice(4, 1, d.as_slice())
    };
    let map = FnMap { dim_x: 1, dim_y: 4, value, jac_y, jac_x };
    let mut problem = IftProblem { map, h_x: 1.0, h_y: 0.0, one_sided: true };
    let zero1 = DVector::zeros(1);
    let zero4 = DVector::zeros(4);
    let j0 = (problem.map.jac_y)(&zero1, &zero4);
    let c1 = j0
        .clone()
        .try_inverse()
        .map(|inv| spectral_norm(&inv).max(1.0))
        .ok_or(Error::SingularJacobian { det: j0.determinant() })?;
    let c2 = spectral_norm(&(problem.map.jac_x)(&zero1, &zero4));
    let cert = calibrate(&mut problem, c1, c2)?;

    let grid = uniform_grid(cfg.grid_points);
    let mut counts = vec![common[l], common[r]];
    counts.extend(linear.iter().map(|&i| common[i]));
    counts.extend(surplus.iter().map(|s| s.count));
    let mut positions = Vec::with_capacity(grid.len());
    let mut w = DVector::zeros(4);
    let mut snap = 0.0;
    for &t in &grid {
        let x = DVector::from_element(1, t.min(cert.h_x_tilde));
        w = DVector::from_vec(problem.solve(&cert, &x, Some(&w), cfg.solve_tol)?.y);
        let (mut a, mut b) = anchors(&w);
        if t == 0.0 {
            (a, b) = (z0[l], z0[r]);
        } else if t == 1.0 {
            snap = (a - z1[l]).norm().max((b - z1[r]).norm());
            (a, b) = (z1[l], z1[r]);
        }
        let mut row = vec![a, b];
        row.extend(linear.iter().map(|&i| linear_step(z0[i], z1[i], t)));
        row.extend(surplus.iter().map(|s| polar_step(s, t)));
        positions.push(row);
    }
    let targets = grid.iter().map(|&t| chi_at(t)).collect();
    let path = FlowPath::from_trajectory(grid, &counts, positions, SegmentKind::Fix, targets)?;
    Ok(FixSpectrumFlow { path, anchors: (l, r), weight: p, chi0, chi1, certificate: cert, snap })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// A critical four-point spectrum with `χ ∈ (0, 1)`.
    fn four_point(n: u64) -> DeformationSpectrum {
        let raw = DeformationSpectrum::new(
            vec![c(1.0, 0.4), c(0.8, -0.5), c(-0.9, 0.3), c(-1.1, -0.4)],
            vec![n / 4, n / 4, n / 4, n / 4],
        )
        .unwrap();
        let chi0 = chi(&raw).unwrap().value;
        rebalance(&raw, chi0).unwrap()
    }

    #[test]
    fn rebalance_restores_both_conditions() {
        let b = four_point(40);
        let m = b.trace(|z| z * z * z.conj());
        assert!(m.norm() < 1e-14, "{m}");
        let target = chi(&b).unwrap().value + 0.01;
        let moved = rebalance(&b, target).unwrap();
        assert!((chi(&moved).unwrap().value - target).abs() < 1e-13);
    }

    #[test]
    fn equal_endpoints_give_a_constant_path() {
        let b = four_point(40);
        let f = fix_spectrum_flow(&b, &b, &FixConfig { grid_points: 17, ..Default::default() }).unwrap();
        assert!(f.path.max_derivative() < 1e-12);
        assert!(f.path.first().same_multiset(&b) && f.path.last().same_multiset(&b));
    }

    #[test]
    fn shifted_multiplicity_is_reached_exactly() {
        let n = 400;
        let b0 = four_point(n);
        let mut mults = b0.multiplicities().to_vec();
        mults[1] += 1;
        mults[3] -= 1;
        let shifted = DeformationSpectrum::new(b0.eigenvalues().to_vec(), mults).unwrap();
        let b1 = rebalance(&shifted, chi(&b0).unwrap().value).unwrap();
        let f = fix_spectrum_flow(&b0, &b1, &FixConfig::default()).unwrap();
        assert!(f.path.first().same_multiset(&b0) && f.path.last().same_multiset(&b1));
        assert!(f.snap < 1e-10, "{}", f.snap);
        assert!(f.path.max_residual_crit() <= 1e-10 && f.path.max_residual_chi() <= 1e-10);
    }

    #[test]
    fn chi_moves_linearly() {
        let b0 = four_point(400);
        let eps = 0.005;
        let b1 = rebalance(&b0, chi(&b0).unwrap().value + eps).unwrap();
        let f = fix_spectrum_flow(&b0, &b1, &FixConfig::default()).unwrap();
        assert!(f.path.max_residual_chi() < 1e-10);
        let chis: Vec<f64> = f.path.states.iter().map(|s| chi(s).unwrap().value).collect();
        let dt = f.path.grid[1];
        let rate = chis.windows(2).map(|w| ((w[1] - w[0]) / dt).abs()).fold(0.0, f64::max);
        assert!((rate - eps).abs() < 1e-6, "{rate}");
    }

    #[test]
    fn far_endpoints_are_rejected() {
        let b0 = four_point(40);
        let b1 = b0.map(|z| z * 1.2).unwrap();
        assert!(matches!(fix_spectrum_flow(&b0, &b1, &FixConfig::default()), Err(Error::DeltaTvExceeded(_))));
    }

    #[test]
    fn lattice_target_sits_on_the_lattice_away_from_anchors() {
        let b0 = four_point(400);
        let t = lattice_target(&b0, 1.0 / 64.0, 0.0).unwrap();
        let (l, r) = anchor_indices(&b0).unwrap();
        for (i, z) in t.eigenvalues().iter().enumerate() {
            if i != l && i != r {
                assert_eq!((z.re * 64.0).fract(), 0.0);
                assert_eq!((z.im * 64.0).fract(), 0.0);
            }
        }
        assert!((chi(&t).unwrap().value - chi(&b0).unwrap().value).abs() < 1e-13);
    }
}
