//! Shrinking two clusters of eigenvalues to two points while keeping
//! `Σ b²b̄` and `Σ (b³b̄ − χ|b|⁴)` over both clusters constant.
//!
//! Every entry moves along the straight line to its cluster center and the
//! whole cluster is translated by a correction `wᵢ(t)`:
//! `𝒱ᵢⱼ(t) = (1 − t)vᵢⱼ + t zᵢ + wᵢ(t)`. The correction solves the implicit
//! equation `𝓕(t, w) = 𝓕(0, 0)` with the control `x = t·d`, `d` the largest
//! distance of an entry to its center, so that `𝒱ᵢ(1) = (zᵢ + wᵢ(1))𝟙`.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::ift::{FnMap, IftCertificate, IftProblem};
use crate::flow::jacobian::{cubic_moment, moment_jacobian, quartic_moment};
use crate::spectrum::C64;

/// A rigid sub-block of a cluster: a value with its number of entries.
pub type Piece = (C64, u64);

/// Result of [`shrink_clusters`].
#[derive(Debug, Clone, Serialize)]
pub struct ClusterFlow {
    /// Final points `(z̃₁, z̃₂)`.
    #[serde(with = "crate::spectrum::complex_pairs")]
    pub z_tilde: Vec<C64>,
    /// `positions[k][j]`: value of piece `j` (cluster 1 first) at `grid[k]`.
    #[serde(skip)]
    pub positions: Vec<Vec<C64>>,
    /// Largest `|Δ conserved sum|` over the grid, normalized by the entry count.
    pub conservation: f64,
    /// Largest distance of an entry to its cluster center.
    pub spread: f64,
    pub certificate: Option<IftCertificate>,
    /// True when some grid step needed the Newton fallback.
    pub newton: bool,
}

/// `(Σ n b²b̄, Σ n(b³b̄ − χ|b|⁴)) / Σ n` as a real 4-vector.
fn moments(values: impl Iterator<Item = (C64, f64)>, chi: f64, total: f64) -> DVector<f64> {
    let (mut f1, mut f2) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    for (b, w) in values {
        f1 += cubic_moment(b) * w;
        f2 += quartic_moment(b, chi) * w;
    }
    DVector::from_vec(vec![f1.re / total, f1.im / total, f2.re / total, f2.im / total])
}

/// Shrinks `v1` to one point near `z1` and `v2` to one point near `z2`.
///
/// `h` is the mesh half-width used for the error report; the contraction
/// precheck of the implicit equation fails with `MeshTooCoarse { h }`.
pub fn shrink_clusters(
    v1: &[Piece],
    v2: &[Piece],
    z1: C64,
    z2: C64,
    chi: f64,
    grid: &[f64],
    h: f64,
    solve_tol: f64,
) -> Result<ClusterFlow> {
    if v1.is_empty() || v2.is_empty() {
        return Err(Error::InvalidInput("both clusters must be nonempty".into()));
    }
    let centers = [z1, z2];
    let pieces: Vec<(usize, C64, f64)> = v1
        .iter()
        .map(|&(v, n)| (0, v, n as f64))
        .chain(v2.iter().map(|&(v, n)| (1, v, n as f64)))
        .collect();
    let total: f64 = pieces.iter().map(|p| p.2).sum();
    let spread = pieces.iter().map(|&(c, v, _)| (centers[c] - v).norm()).fold(0.0, f64::max);

    let position = |s: f64, w: &DVector<f64>, c: usize, v: C64| -> C64 {
        let t = if spread > 0.0 { s / spread } else { 0.0 };
        let shift = C64::new(w[2 * c], w[2 * c + 1]);
        v * (1.0 - t) + centers[c] * t + shift
    };
    let start = moments(pieces.iter().map(|&(_, v, n)| (v, n)), chi, total);

    if spread == 0.0 {
        let positions = vec![pieces.iter().map(|p| p.1).collect(); grid.len()];
        return Ok(ClusterFlow { z_tilde: vec![z1, z2], positions, conservation: 0.0, spread, certificate: None, newton: false });
    }

    let value = |x: &DVector<f64>, w: &DVector<f64>| -> DVector<f64> {
        moments(pieces.iter().map(|&(c, v, n)| (position(x[0], w, c, v), n)), chi, total) - &start
    };
    let jac_y = |x: &DVector<f64>, w: &DVector<f64>| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(4, 4);
        for &(c, v, n) in &pieces {
            let m = moment_jacobian(position(x[0], w, c, v), chi) * (n / total);
            let mut block = j.view_mut((0, 2 * c), (4, 2));
            block += m;
        }
        j
    };
    let jac_x = |x: &DVector<f64>, w: &DVector<f64>| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(4, 1);
        for &(c, v, n) in &pieces {
            let dir = (centers[c] - v) / spread;
            let col = moment_jacobian(position(x[0], w, c, v), chi) * Vector2::new(dir.re, dir.im) * (n / total);
            let mut view = j.column_mut(0);
            view += col;
        }
        j
    };
    let map = FnMap { dim_x: 1, dim_y: 4, value, jac_y, jac_x };
    let mut problem = IftProblem { map, h_x: spread, h_y: 0.0, one_sided: true };

    // Size the y-ball so that the certified control radius covers [0, d].
    let zero1 = DVector::zeros(1);
    let zero4 = DVector::zeros(4);
    let j0 = (problem.map.jac_y)(&zero1, &zero4);
    let c1 = j0
        .clone()
        .try_inverse()
        .map(|inv| crate::flow::ift::spectral_norm(&inv).max(1.0))
        .ok_or(Error::SingularJacobian { det: j0.determinant() })?;
    let c2 = crate::flow::ift::spectral_norm(&(problem.map.jac_x)(&zero1, &zero4));
    problem.h_y = 2.5 * c1 * c2.max(1e-300) * spread;
    let mut cert = None;
    for _ in 0..6 {
        let c = problem.precheck().map_err(|e| match e {
            Error::ContractionFailed { .. } => Error::MeshTooCoarse { h },
            other => other,
        })?;
        if c.h_x_tilde >= spread * (1.0 - 1e-12) {
            cert = Some(c);
            break;
        }
        problem.h_y = 2.5 * c.c1 * c.c2 * spread;
    }
    let cert = cert.ok_or(Error::MeshTooCoarse { h })?;

    let mut positions = Vec::with_capacity(grid.len());
    let mut w = DVector::zeros(4);
    let mut newton = false;
    let mut conservation = 0.0f64;
    for &t in grid {
        let x = DVector::from_element(1, (t * spread).min(cert.h_x_tilde));
        let sol = problem.solve(&cert, &x, Some(&w), solve_tol)?;
        newton |= sol.newton;
        w = DVector::from_vec(sol.y);
        let row: Vec<C64> = pieces.iter().map(|&(c, v, _)| advance(t, v, centers[c], &w, c)).collect();
        let now = moments(row.iter().zip(&pieces).map(|(&b, p)| (b, p.2)), chi, total);
        conservation = conservation.max((now - &start).amax());
        positions.push(row);
    }
    let last = grid.last().copied().unwrap_or(0.0);
    let z_tilde = if last == 1.0 {
        vec![z1 + C64::new(w[0], w[1]), z2 + C64::new(w[2], w[3])]
    } else {
        vec![z1, z2]
    };
    Ok(ClusterFlow { z_tilde, positions, conservation, spread, certificate: Some(cert), newton })
}

/// `(1 − t)v + t z + w` written so that `t = 0` returns `v` and `t = 1`
/// returns `z + w` bit for bit.
fn advance(t: f64, v: C64, z: C64, w: &DVector<f64>, c: usize) -> C64 {
    let shift = C64::new(w[2 * c], w[2 * c + 1]);
    if t == 0.0 {
        v + shift
    } else if t == 1.0 {
        z + shift
    } else {
        v * (1.0 - t) + z * t + shift
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn uniform_grid(k: usize) -> Vec<f64> {
        (0..=k).map(|i| i as f64 / k as f64).collect()
    }

    fn sums(pieces: &[Piece], chi: f64) -> (C64, C64) {
        pieces.iter().fold((c(0.0, 0.0), c(0.0, 0.0)), |acc, &(b, n)| {
            (acc.0 + cubic_moment(b) * n as f64, acc.1 + quartic_moment(b, chi) * n as f64)
        })
    }

    #[test]
    fn points_give_the_identity_flow() {
        let (z1, z2) = (c(0.9, 0.2), c(-0.8, -0.1));
        let f = shrink_clusters(&[(z1, 5)], &[(z2, 7)], z1, z2, 0.3, &uniform_grid(8), 0.1, 1e-14).unwrap();
        assert_eq!(f.z_tilde, vec![z1, z2]);
        assert!(f.positions.iter().all(|row| row == &vec![z1, z2]));
    }

    #[test]
    fn clusters_end_at_two_points_with_conserved_sums() {
        let (z1, z2, chi) = (c(0.9, 0.3), c(-1.0, -0.2), 0.4);
        let v1 = vec![(c(0.92, 0.31), 3), (c(0.88, 0.27), 2), (c(0.9, 0.33), 4)];
        let v2 = vec![(c(-0.97, -0.22), 5), (c(-1.03, -0.18), 3)];
        let f = shrink_clusters(&v1, &v2, z1, z2, chi, &uniform_grid(64), 0.1, 1e-14).unwrap();
        let last = f.positions.last().unwrap();
        assert!(last[..3].iter().all(|&b| b == f.z_tilde[0]));
        assert!(last[3..].iter().all(|&b| b == f.z_tilde[1]));
        let first: Vec<Piece> = v1.iter().chain(&v2).copied().collect();
        let end: Vec<Piece> = last.iter().zip(&first).map(|(&b, p)| (b, p.1)).collect();
        let (a0, b0) = sums(&first, chi);
        let (a1, b1) = sums(&end, chi);
        assert!((a0 - a1).norm() < 1e-10 && (b0 - b1).norm() < 1e-10, "{a0} {a1} {b0} {b1}");
        assert!(f.conservation < 1e-12);
    }

    /// Oracle: solve the two complex end-point equations directly by a
    /// damped Newton iteration on finite-difference Jacobians.
    fn direct_endpoints(first: &[Piece], n1: u64, n2: u64, z1: C64, z2: C64, chi: f64) -> (C64, C64) {
        let (a0, b0) = sums(first, chi);
        let residual = |p: [f64; 4]| -> [f64; 4] {
            let (u1, u2) = (c(p[0], p[1]), c(p[2], p[3]));
            let a = cubic_moment(u1) * n1 as f64 + cubic_moment(u2) * n2 as f64 - a0;
            let b = quartic_moment(u1, chi) * n1 as f64 + quartic_moment(u2, chi) * n2 as f64 - b0;
            [a.re, a.im, b.re, b.im]
        };
        let mut p = [z1.re, z1.im, z2.re, z2.im];
        for _ in 0..50 {
            let r = residual(p);
            let mut jac = DMatrix::zeros(4, 4);
            for k in 0..4 {
                let mut q = p;
                q[k] += 1e-7;
                let rq = residual(q);
                for i in 0..4 {
                    jac[(i, k)] = (rq[i] - r[i]) / 1e-7;
                }
            }
            let step = jac.lu().solve(&DVector::from_row_slice(&r)).unwrap();
            for k in 0..4 {
                p[k] -= step[k];
            }
        }
        (c(p[0], p[1]), c(p[2], p[3]))
    }

    #[test]
    fn symmetric_perturbation_moves_endpoints_quadratically() {
        let (z1, z2, chi) = (c(1.0, 0.2), c(-0.9, 0.1), 0.3);
        for eps in [1e-2, 5e-3] {
            let v1 = vec![(z1 + c(eps, 0.0), 2), (z1 - c(eps, 0.0), 2)];
            let v2 = vec![(z2 + c(0.0, eps), 3), (z2 - c(0.0, eps), 3)];
            let f = shrink_clusters(&v1, &v2, z1, z2, chi, &uniform_grid(16), 0.1, 1e-14).unwrap();
            let first: Vec<Piece> = v1.iter().chain(&v2).copied().collect();
            let (e1, e2) = direct_endpoints(&first, 4, 6, z1, z2, chi);
            assert!((f.z_tilde[0] - e1).norm() < 1e-9 && (f.z_tilde[1] - e2).norm() < 1e-9);
            let moved = (f.z_tilde[0] - z1).norm().max((f.z_tilde[1] - z2).norm());
            assert!(moved < 10.0 * eps * eps, "{moved} for eps {eps}");
        }
    }

    #[test]
    fn wide_clusters_fail_the_precheck() {
        let (z1, z2) = (c(1.0, 0.0), c(-1.0, 0.0));
        let v1 = vec![(c(1.9, 0.9), 1), (c(0.1, -0.9), 1)];
        let v2 = vec![(c(-1.9, 0.9), 1), (c(-0.1, -0.9), 1)];
        let r = shrink_clusters(&v1, &v2, z1, z2, 0.2, &uniform_grid(4), 2.0, 1e-14);
        assert!(matches!(r, Err(Error::MeshTooCoarse { h }) if h == 2.0), "{r:?}");
    }
}
