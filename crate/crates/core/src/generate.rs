//! Random critical deformations for tests, audits and the CLI.
//!
//! A spectrum `B` with `⟨B²B̄⟩ = Σ b|b|² = 0` is obtained by shifting random
//! points `u` by the unique minimizer `s` of the strictly convex function
//! `Σ w|u − s|⁴`, whose gradient is `−4Σ w(u − s)|u − s|²`. The deformation
//! `A = k e^{iφ} B⁻¹` with `k = ⟨|B|²⟩^{1/2}` is then critical at the origin.

use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::spectrum::{DeformationSpectrum, C64};

/// Minimizer of `Σ wᵢ|uᵢ − s|⁴` by damped Newton.
pub fn quartic_center(points: &[C64], weights: &[f64]) -> C64 {
    let total: f64 = weights.iter().sum();
    let mut s: C64 = points.iter().zip(weights).map(|(u, w)| u * *w).sum::<C64>() / total;
    let objective = |s: C64| -> f64 { points.iter().zip(weights).map(|(u, w)| w * (u - s).norm_sqr().powi(2)).sum() };
    let gradient = |s: C64| -> C64 { points.iter().zip(weights).map(|(u, w)| -(u - s) * (4.0 * w * (u - s).norm_sqr())).sum() };
    for _ in 0..100 {
        let g = gradient(s);
        let (mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0);
        for (u, &w) in points.iter().zip(weights) {
            let d = u - s;
            let a = d.norm_sqr();
            hxx += w * (4.0 * a + 8.0 * d.re * d.re);
            hxy += w * 8.0 * d.re * d.im;
            hyy += w * (4.0 * a + 8.0 * d.im * d.im);
        }
        let det = hxx * hyy - hxy * hxy;
        if det <= 0.0 {
            break;
        }
        let step = C64::new((hyy * g.re - hxy * g.im) / det, (hxx * g.im - hxy * g.re) / det);
        // Near the minimizer the objective is flat below rounding, so a step
        // that shrinks the gradient is accepted as well.
        let (f0, g0) = (objective(s), g.norm());
        let mut t = 1.0;
        while t > 1e-12 && objective(s - step * t) > f0 && gradient(s - step * t).norm() >= g0 {
            t *= 0.5;
        }
        s -= step * t;
        if step.norm() * t <= 1e-16 * (1.0 + s.norm()) {
            break;
        }
    }
    s
}

/// Shifts the points so that `Σ wᵢ bᵢ|bᵢ|² = 0`.
pub fn balance(points: &[C64], weights: &[f64]) -> Vec<C64> {
    let s = quartic_center(points, weights);
    points.iter().map(|u| u - s).collect()
}

/// Normalized inverse `A = k e^{iφ} B⁻¹` with `⟨|A|⁻²⟩ = 1`.
pub fn deformation_from_b(b: &DeformationSpectrum, phi: f64) -> Result<DeformationSpectrum> {
    b.check_nonzero()?;
    let k = b.trace_re(|x| x.norm_sqr()).sqrt();
    let rot = C64::from_polar(k, phi);
    b.map(|x| rot / x)
}

/// Shape of the random point cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudShape {
    /// Ratio of vertical to horizontal spread.
    pub aspect: f64,
    /// Radii of the annulus the raw points are drawn from.
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for CloudShape {
    fn default() -> Self {
        Self { aspect: 1.0, r_min: 0.5, r_max: 1.5 }
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Random `B` with `N = n` unit multiplicities, `⟨B²B̄⟩ = 0` and
/// `min|bᵢ| ≥ min_modulus`. Retries until the modulus floor holds.
pub fn random_balanced_b<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    shape: CloudShape,
    min_modulus: f64,
) -> Result<DeformationSpectrum> {
    for _ in 0..1000 {
        let offset = C64::new(0.3 * standard_normal(rng), 0.3 * standard_normal(rng));
        let points: Vec<C64> = (0..n)
            .map(|_| {
                let r = rng.random_range(shape.r_min..shape.r_max);
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                C64::new(r * t.cos(), shape.aspect * r * t.sin()) + offset
            })
            .collect();
        let b = balance(&points, &vec![1.0; n]);
        if b.iter().all(|x| x.norm() >= min_modulus) {
            return DeformationSpectrum::from_points(b);
        }
    }
    Err(Error::InvalidInput("could not draw a balanced spectrum above the modulus floor".into()))
}

/// Random normal critical `A` of dimension `n`, with random multiplicities
/// (distinct eigenvalues `m ≤ n`), random anisotropy and random rotation.
pub fn random_critical_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<DeformationSpectrum> {
    let distinct = rng.random_range(2..=n.max(2));
    random_critical_atoms(rng, n, distinct)
}

/// Random normal critical `A` of dimension `n` with exactly `atoms` distinct
/// eigenvalues carrying random multiplicities.
pub fn random_critical_atoms<R: Rng + ?Sized>(rng: &mut R, n: usize, atoms: usize) -> Result<DeformationSpectrum> {
    if atoms < 2 || atoms > n {
        return Err(Error::InvalidInput(format!("need 2 ≤ atoms ≤ n, got {atoms} atoms for n = {n}")));
    }
    let mut mults = vec![1u64; atoms];
    for _ in atoms..n {
        let i = rng.random_range(0..atoms);
        mults[i] += 1;
    }
    let aspect = rng.random_range(0.05..1.5);
    for _ in 0..1000 {
        let offset = C64::new(0.4 * standard_normal(rng), 0.4 * standard_normal(rng));
        let points: Vec<C64> = (0..atoms)
            .map(|_| {
                let r = rng.random_range(0.3..1.7);
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                C64::new(r * t.cos(), aspect * r * t.sin()) + offset
            })
            .collect();
        let weights: Vec<f64> = mults.iter().map(|&m| m as f64).collect();
        let b = balance(&points, &weights);
        if b.iter().all(|x| x.norm() >= 0.05) {
            let b = DeformationSpectrum::new(b, mults.clone())?;
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            return deformation_from_b(&b, phi);
        }
    }
    Err(Error::InvalidInput("could not draw a critical spectrum".into()))
}

/// Random real critical `A` (Hermitian deformation) of dimension `n`.
pub fn random_critical_real<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<DeformationSpectrum> {
    for _ in 0..1000 {
        let frac_pos = rng.random_range(0.25..0.75);
        let points: Vec<C64> = (0..n)
            .map(|_| {
                let r = rng.random_range(0.3..1.5);
                C64::new(if rng.random_bool(frac_pos) { r } else { -r }, 0.0)
            })
            .collect();
        if points.iter().all(|x| x.re > 0.0) || points.iter().all(|x| x.re < 0.0) {
            continue;
        }
        let s = quartic_center(&points, &vec![1.0; n]).re;
        let b: Vec<C64> = points.iter().map(|u| C64::new(u.re - s, 0.0)).collect();
        if b.iter().all(|x| x.norm() >= 0.05) {
            let b = DeformationSpectrum::from_points(b)?;
            return deformation_from_b(&b, 0.0);
        }
    }
    Err(Error::InvalidInput("could not draw a real critical spectrum".into()))
}

/// `A_c = ⟨|D|⁻²⟩^{1/2} D` with `D = diag(±1 ± ic)`, each value with multiplicity `n/4`.
pub fn a_c_family(c: f64, n: u64) -> Result<DeformationSpectrum> {
    if n % 4 != 0 {
        return Err(Error::InvalidInput("dimension must be a multiple of 4".into()));
    }
    let k = (1.0 / (1.0 + c * c)).sqrt();
    let eigs = vec![C64::new(k, k * c), C64::new(k, -k * c), C64::new(-k, k * c), C64::new(-k, -k * c)];
    DeformationSpectrum::new(eigs, vec![n / 4; 4])
}

/// Block diagonal matrix repeating the given 2×2 blocks, scaled by `k`.
fn block_diagonal(blocks: &[[[f64; 2]; 2]], k: f64, n: usize) -> Result<Mat<C64>> {
    let period = 2 * blocks.len();
    if n == 0 || n % period != 0 {
        return Err(Error::InvalidInput(format!("dimension must be a positive multiple of {period}")));
    }
    Ok(Mat::from_fn(n, n, |i, j| {
        if i / 2 != j / 2 {
            return C64::new(0.0, 0.0);
        }
        let b = &blocks[(i / 2) % blocks.len()];
        C64::new(k * b[i % 2][j % 2], 0.0)
    }))
}

/// Non-normal critical deformation `k [[−1, c], [0, 1]]^{⊕N/2}` with
/// `k = (1 + c²/2)^{1/2}`; its shape parameter lies below `−1/3`.
pub fn nonnormal_reflection_blocks(c: f64, n: usize) -> Result<Mat<C64>> {
    let k = (1.0 + 0.5 * c * c).sqrt();
    block_diagonal(&[[[-1.0, c], [0.0, 1.0]]], k, n)
}

/// Non-normal critical deformation `k ([[−1, c], [0, −1]] ⊕ [[1, c], [0, 1]])^{⊕N/4}`
/// with `k = (1 + c²/2)^{1/2}`.
pub fn nonnormal_jordan_blocks(c: f64, n: usize) -> Result<Mat<C64>> {
    let k = (1.0 + 0.5 * c * c).sqrt();
    block_diagonal(&[[[-1.0, c], [0.0, -1.0]], [[1.0, c], [0.0, 1.0]]], k, n)
}
