//! Criticality-preserving flows of diagonal deformations.
//!
//! Paths live on the inverse side `ℬ_t`, where criticality reads
//! `⟨ℬ²ℬ*⟩ = 0` and the shape parameter is a function of
//! `χ(ℬ) = ⟨ℬ³ℬ*⟩/⟨|ℬ|⁴⟩`. [`derive_b0`] maps a critical `A` to its
//! starting point and [`lift_to_deformation`] maps a path back to
//! deformations `𝒜_t` with `⟨|𝒜_t|⁻²⟩ = 1`.
//!
//! A [`FlowPath`] keeps one fixed layout of pieces `(value, count)` for all
//! of its grid points, so derivatives are taken piece by piece.

pub mod finite_support;
pub mod fix_spectrum;
pub mod hermitian;
pub mod ift;
pub mod jacobian;
pub mod partition;
pub mod pipeline;
pub mod shrink;
pub mod validate;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::criticality::{alpha_from_chi, hessian_at_origin, rotation_angle, shape_alpha, Moments};
use crate::error::{Error, Result};
use crate::spectrum::{DeformationSpectrum, C64};

pub use finite_support::{finite_support_flow, half_plane_mass_constant, FiniteSupportFlow, HalfPlaneMass};
pub use fix_spectrum::{fix_spectrum_flow, lattice_target, FixSpectrumFlow};
pub use hermitian::hermitian_flow;
pub use pipeline::{deformation_path, DeformationPath, PipelineConfig};
pub use validate::{validate_assumption, AssumptionReport};

/// Construction behind a stretch of grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentKind {
    Shrink,
    Fix,
    Hermitian,
    ConcatJunction,
    Constant,
}

impl SegmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentKind::Shrink => "shrink",
            SegmentKind::Fix => "fix",
            SegmentKind::Hermitian => "hermitian",
            SegmentKind::ConcatJunction => "concat-junction",
            SegmentKind::Constant => "constant",
        }
    }
}

/// Grid indices `start..=end` produced by one construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
}

/// Whether the states are inverse-side `ℬ_t` or lifted deformations `𝒜_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathSide {
    B,
    A,
}

/// A sampled piecewise-`C¹` path of diagonal matrices.
///
/// On the `B` side `residual_crit` is `|⟨ℬ²ℬ*⟩|` and `residual_chi` is
/// `|χ(ℬ_t) − χ_target(t)|` with the complex ratio. On the `A` side they are
/// `max(|⟨|𝒜|⁻²⟩ − 1|, |⟨𝒜⁻²𝒜*⁻¹⟩|)` and `|α(𝒜_t) − α(χ_target(t))|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPath {
    pub grid: Vec<f64>,
    pub states: Vec<DeformationSpectrum>,
    /// Largest entrywise `|d/dt|` at each grid point.
    pub derivatives: Vec<f64>,
    pub residual_crit: Vec<f64>,
    pub residual_chi: Vec<f64>,
    pub chi_target: Vec<f64>,
    pub segments: Vec<Segment>,
    pub side: PathSide,
}

/// Uniform grid with `points` nodes on `[0, 1]`.
pub fn uniform_grid(points: usize) -> Vec<f64> {
    let k = points.max(2) - 1;
    (0..=k).map(|i| if i == k { 1.0 } else { i as f64 / k as f64 }).collect()
}

/// `(Re, Im)` of `⟨B³B*⟩/⟨|B|⁴⟩`.
fn chi_complex(b: &DeformationSpectrum) -> C64 {
    let num = b.trace(|z| z * z * z * z.conj());
    let den = b.trace_re(|z| z.norm_sqr() * z.norm_sqr());
    num / den
}

fn b_residuals(b: &DeformationSpectrum, chi_target: f64) -> (f64, f64) {
    let crit = b.trace(|z| z * z * z.conj()).norm();
    (crit, (chi_complex(b) - chi_target).norm())
}

fn a_residuals(a: &DeformationSpectrum, chi_target: f64) -> Result<(f64, f64)> {
    let m = Moments::of_spectrum(a)?;
    let crit = (m.inv2 - 1.0).abs().max(m.skew.norm());
    let alpha = shape_alpha(&hessian_at_origin(a)?)?;
    Ok((crit, (alpha - alpha_from_chi(chi_target)).abs()))
}

/// Entrywise finite-difference speeds of a fixed-layout trajectory,
/// one-sided at segment ends and the larger side at interior junctions.
fn piecewise_speeds(grid: &[f64], states: &[DeformationSpectrum], segments: &[Segment]) -> Vec<f64> {
    let diff = |i: usize, j: usize| -> f64 {
        let dt = grid[j] - grid[i];
        if dt <= 0.0 {
            return 0.0;
        }
        states[i]
            .eigenvalues()
            .iter()
            .zip(states[j].eigenvalues())
            .map(|(a, b)| (b - a).norm() / dt)
            .fold(0.0, f64::max)
    };
    let mut out = vec![0.0f64; grid.len()];
    for seg in segments.iter().filter(|s| s.end > s.start) {
        for k in seg.start..=seg.end {
            let v = if k == seg.start {
                diff(k, k + 1)
            } else if k == seg.end {
                diff(k - 1, k)
            } else {
                0.5 * (diff(k - 1, k) + diff(k, k + 1)).max(diff(k - 1, k + 1))
            };
            out[k] = out[k].max(v);
        }
    }
    out
}

impl FlowPath {
    /// Builds a `B`-side path from piece trajectories `positions[k][j]` with
    /// fixed counts, one segment of the given kind.
    pub fn from_trajectory(
        grid: Vec<f64>,
        counts: &[u64],
        positions: Vec<Vec<C64>>,
        kind: SegmentKind,
        chi_target: Vec<f64>,
    ) -> Result<Self> {
        if grid.len() != positions.len() || grid.len() != chi_target.len() || grid.len() < 2 {
            return Err(Error::InvalidInput("grid, positions and targets must have equal length ≥ 2".into()));
        }
        let states = positions
            .into_iter()
            .map(|row| DeformationSpectrum::new(row, counts.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let segments = vec![Segment { kind, start: 0, end: grid.len() - 1 }];
        Self::assemble(grid, states, chi_target, segments, PathSide::B)
    }

    /// Recomputes residuals and speeds from the states.
    pub fn assemble(
        grid: Vec<f64>,
        states: Vec<DeformationSpectrum>,
        chi_target: Vec<f64>,
        segments: Vec<Segment>,
        side: PathSide,
    ) -> Result<Self> {
        let mut residual_crit = Vec::with_capacity(states.len());
        let mut residual_chi = Vec::with_capacity(states.len());
        for (s, &chi) in states.iter().zip(&chi_target) {
            let (a, b) = match side {
                PathSide::B => b_residuals(s, chi),
                PathSide::A => a_residuals(s, chi)?,
            };
            residual_crit.push(a);
            residual_chi.push(b);
        }
        let derivatives = piecewise_speeds(&grid, &states, &segments);
        Ok(Self { grid, states, derivatives, residual_crit, residual_chi, chi_target, segments, side })
    }

    /// The path `ℬ_t ≡ B` on a uniform grid.
    pub fn constant(b: &DeformationSpectrum, points: usize) -> Result<Self> {
        let grid = uniform_grid(points);
        let chi = chi_complex(b).re;
        let states = vec![b.clone(); grid.len()];
        let segments = vec![Segment { kind: SegmentKind::Constant, start: 0, end: grid.len() - 1 }];
        let n = grid.len();
        Self::assemble(grid, states, vec![chi; n], segments, PathSide::B)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn first(&self) -> &DeformationSpectrum {
        &self.states[0]
    }

    pub fn last(&self) -> &DeformationSpectrum {
        self.states.last().expect("path is nonempty")
    }

    pub fn max_residual_crit(&self) -> f64 {
        self.residual_crit.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_residual_chi(&self) -> f64 {
        self.residual_chi.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_derivative(&self) -> f64 {
        self.derivatives.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest and largest eigenvalue modulus over the whole path.
    pub fn modulus_range(&self) -> (f64, f64) {
        self.states.iter().flat_map(|s| s.eigenvalues().iter().map(|z| z.norm())).fold(
            (f64::INFINITY, 0.0f64),
            |(lo, hi), r| (lo.min(r), hi.max(r)),
        )
    }

    /// Segment kind at each grid point; later segments win at shared ends.
    pub fn kind_at(&self, k: usize) -> SegmentKind {
        self.segments
            .iter()
            .rev()
            .find(|s| s.start <= k && k <= s.end)
            .map(|s| s.kind)
            .unwrap_or(SegmentKind::Constant)
    }

    /// Reorders every state into a new layout. `split[j]` lists, for each new
    /// piece, the old piece it comes from and its count.
    fn relayout(&self, split: &[(usize, u64)]) -> Result<Vec<DeformationSpectrum>> {
        self.states
            .iter()
            .map(|s| {
                let eigs = split.iter().map(|&(j, _)| s.eigenvalues()[j]).collect();
                DeformationSpectrum::new(eigs, split.iter().map(|&(_, m)| m).collect())
            })
            .collect()
    }

    /// Concatenates `self` followed by `next`, mapping time proportionally to
    /// the number of grid intervals of each part.
    ///
    /// The junction states must be equal as multisets; both layouts are
    /// refined to a common one by splitting pieces with bitwise-equal values.
    pub fn concat(&self, next: &FlowPath) -> Result<FlowPath> {
        if self.side != next.side {
            return Err(Error::InvalidInput("cannot concatenate paths of different sides".into()));
        }
        let (end, start) = (self.last(), next.first());
        if !end.same_multiset(start) {
            return Err(Error::InvalidInput("junction states differ".into()));
        }
        // Queue the pieces of `next` by value, then split both sides in step.
        let key = |z: C64| (z.re.to_bits(), z.im.to_bits());
        let mut queues: HashMap<(u64, u64), Vec<(usize, u64)>> = HashMap::new();
        for (j, (z, m)) in start.iter().enumerate() {
            queues.entry(key(z)).or_default().push((j, m));
        }
        for q in queues.values_mut() {
            q.reverse();
        }
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for (i, (z, m)) in end.iter().enumerate() {
            let q = queues.get_mut(&key(z)).expect("multisets agree");
            let mut need = m;
            while need > 0 {
                let (j, avail) = q.last_mut().expect("multisets agree");
                let take = need.min(*avail);
                left.push((i, take));
                right.push((*j, take));
                need -= take;
                *avail -= take;
                if *avail == 0 {
                    q.pop();
                }
            }
        }
        let mut states = self.relayout(&left)?;
        states.extend(next.relayout(&right)?.into_iter().skip(1));

        let (k1, k2) = (self.len() - 1, next.len() - 1);
        let split = k1 as f64 / (k1 + k2) as f64;
        let mut grid: Vec<f64> = self.grid.iter().map(|&t| t * split).collect();
        grid.extend(next.grid.iter().skip(1).map(|&t| split + t * (1.0 - split)));
        *grid.last_mut().unwrap() = 1.0;
        let mut chi_target = self.chi_target.clone();
        chi_target.extend(next.chi_target.iter().skip(1));

        let mut segments = self.segments.clone();
        segments.push(Segment { kind: SegmentKind::ConcatJunction, start: k1, end: k1 });
        segments.extend(next.segments.iter().map(|s| Segment { kind: s.kind, start: s.start + k1, end: s.end + k1 }));
        Self::assemble(grid, states, chi_target, segments, self.side)
    }

    /// Writes one JSON object per grid point.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for k in 0..self.len() {
            let rec = PathRecord {
                t: self.grid[k],
                eigenvalues: self.states[k].eigenvalues().iter().map(|z| [z.re, z.im]).collect(),
                multiplicities: self.states[k].multiplicities().to_vec(),
                residual_crit: self.residual_crit[k],
                residual_chi: self.residual_chi[k],
                deriv_max: self.derivatives[k],
                chi_target: self.chi_target[k],
                segment: self.kind_at(k),
                side: self.side,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a path written by [`FlowPath::write_jsonl`]; residuals and
    /// speeds are recomputed from the states.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<FlowPath> {
        let mut recs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PathRecord =
                serde_json::from_str(&line).map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1)))?;
            recs.push(rec);
        }
        if recs.len() < 2 {
            return Err(Error::InvalidInput("a path needs at least two grid points".into()));
        }
        let side = recs[0].side;
        let mut segments: Vec<Segment> = Vec::new();
        for (k, rec) in recs.iter().enumerate() {
            match segments.last_mut() {
                Some(s) if s.kind == rec.segment => s.end = k,
                _ => {
                    // A new run starts at the shared junction point.
                    let start = if k > 0 { k - 1 } else { 0 };
                    segments.push(Segment { kind: rec.segment, start, end: k });
                }
            }
        }
        let grid = recs.iter().map(|r| r.t).collect();
        let chi = recs.iter().map(|r| r.chi_target).collect();
        let states = recs
            .into_iter()
            .map(|r| DeformationSpectrum::new(r.eigenvalues.iter().map(|p| C64::new(p[0], p[1])).collect(), r.multiplicities))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(grid, states, chi, segments, side)
    }
}

/// One line of the JSONL path format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathRecord {
    pub t: f64,
    pub eigenvalues: Vec<[f64; 2]>,
    pub multiplicities: Vec<u64>,
    pub residual_crit: f64,
    pub residual_chi: f64,
    pub deriv_max: f64,
    pub chi_target: f64,
    pub segment: SegmentKind,
    pub side: PathSide,
}

/// Rotated inverse `B = e^{−iφ}A⁻¹` with `φ = arg⟨A⁻³A*⁻¹⟩/2 ∈ [0, π)`,
/// so that `χ(B) ≥ 0`.
pub fn derive_b0(a: &DeformationSpectrum) -> Result<(DeformationSpectrum, f64)> {
    a.check_nonzero()?;
    let a3 = a.trace(|z| {
        let inv = z.inv();
        inv * inv * inv * inv.conj()
    });
    let phi = rotation_angle(a3);
    let rot = C64::from_polar(1.0, -phi);
    Ok((a.map(|z| rot / z)?, phi))
}

/// `𝒜 = e^{−iφ}⟨|ℬ|²⟩^{1/2}ℬ⁻¹`, the inverse of [`derive_b0`] up to the
/// normalization `⟨|𝒜|⁻²⟩ = 1`.
pub fn lift_state(b: &DeformationSpectrum, phi: f64) -> Result<DeformationSpectrum> {
    b.check_nonzero()?;
    let k = b.trace_re(|z| z.norm_sqr()).sqrt();
    let rot = C64::from_polar(k, -phi);
    b.map(|z| rot / z)
}

/// Lifts a `B`-side path to deformations. Fails with `ResidualExceeded`
/// when the `B`-side residuals exceed `tol`.
pub fn lift_to_deformation(path: &FlowPath, phi: f64, tol: f64) -> Result<FlowPath> {
    if path.side != PathSide::B {
        return Err(Error::InvalidInput("path is already on the deformation side".into()));
    }
    for (k, (&c, &x)) in path.residual_crit.iter().zip(&path.residual_chi).enumerate() {
        if c > tol {
            return Err(Error::ResidualExceeded { what: format!("criticality at grid point {k}"), value: c, tol });
        }
        if x > tol {
            return Err(Error::ResidualExceeded { what: format!("chi at grid point {k}"), value: x, tol });
        }
    }
    let states = path.states.iter().map(|b| lift_state(b, phi)).collect::<Result<Vec<_>>>()?;
    FlowPath::assemble(path.grid.clone(), states, path.chi_target.clone(), path.segments.clone(), PathSide::A)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::criticality::chi;
    use crate::generate::{a_c_family, random_critical_normal};

    #[test]
    fn real_deformation_has_zero_rotation() {
        let a = DeformationSpectrum::from_real(&[1.0, -1.0], vec![3, 3]).unwrap();
        let (b, phi) = derive_b0(&a).unwrap();
        assert_eq!(phi, 0.0);
        assert_eq!(b.eigenvalues(), &[C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]);
        assert!((chi(&b).unwrap().value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rotation_makes_chi_real_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let a = random_critical_normal(&mut rng, 30).unwrap();
            let (b, phi) = derive_b0(&a).unwrap();
            // Oracle: ψ from the raw moment, then the definition of χ.
            let psi = a.trace(|z| z.powi(-3) * z.conj().inv()).arg().rem_euclid(std::f64::consts::TAU);
            assert!((phi - psi / 2.0).abs() < 1e-12);
            let m = b.trace(|z| z * z * z * z.conj());
            assert!(m.im.abs() < 1e-12 * m.norm().max(1.0) && m.re >= 0.0, "{m}");
        }
    }

    #[test]
    fn a_c_family_chi_closed_form() {
        for c in [0.0, 0.25, 0.5, 1.0, 2.0] {
            let (b, _) = derive_b0(&a_c_family(c, 8).unwrap()).unwrap();
            let expected = (1.0 - c * c) / (1.0 + c * c);
            assert!((chi(&b).unwrap().value - expected.abs()).abs() < 1e-12, "c = {c}");
        }
    }

    #[test]
    fn lifting_a_constant_path_recovers_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_critical_normal(&mut rng, 20).unwrap();
        let (b, phi) = derive_b0(&a).unwrap();
        let lifted = lift_to_deformation(&FlowPath::constant(&b, 5).unwrap(), phi, 1e-8).unwrap();
        for s in &lifted.states {
            for (x, y) in s.eigenvalues().iter().zip(a.eigenvalues()) {
                assert!((x - y).norm() < 1e-12);
            }
        }
        assert!(lifted.max_residual_crit() < 1e-12 && lifted.max_residual_chi() < 1e-9);
    }

    #[test]
    fn concat_refines_layouts_at_the_junction() {
        let z = [C64::new(1.0, 0.0), C64::new(-1.0, 0.0)];
        let p1 = FlowPath::constant(&DeformationSpectrum::new(z.to_vec(), vec![4, 4]).unwrap(), 3).unwrap();
        let p2 = FlowPath::constant(&DeformationSpectrum::new(vec![z[0], z[1], z[0]], vec![1, 4, 3]).unwrap(), 5).unwrap();
        let joined = p1.concat(&p2).unwrap();
        assert_eq!(joined.len(), 7);
        assert_eq!(joined.grid[2], 2.0 / 6.0);
        assert!(joined.states.iter().all(|s| s.len() == joined.states[0].len()));
        assert!(joined.states[0].same_multiset(p1.first()));
        assert_eq!(joined.max_derivative(), 0.0);
    }

    #[test]
    fn jsonl_round_trip() {
        let b = DeformationSpectrum::from_real(&[1.0, -1.0], vec![2, 2]).unwrap();
        let path = FlowPath::constant(&b, 4).unwrap();
        let mut buf = Vec::new();
        path.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 4);
        let back = FlowPath::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, path);
    }
}
