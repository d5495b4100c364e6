//! Flow from a general critical `B` to a spectrum with finitely many points.
//!
//! Entries are split by their real part into inside sets
//! `I_i^± = {0 < ±Re b ≤ c₀}` and outside sets `I_o^± = {±Re b > c₀}`
//! (with `Re b = 0` inside the left set and `Re b = −c₀` outside it). A
//! fraction of each outside set, `I_oi^±`, is reserved as partners for the
//! inside set of the other sign and the rest, `I_oo^±`, is paired across the
//! imaginary axis. Each of the three pairings is partitioned by boxes of side
//! `h/2`, the partitions are matched, and every matched pair of sub-clusters
//! is shrunk to two points at the box centers with conserved moments.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::criticality::chi;
use crate::error::{Error, Result};
use crate::flow::jacobian::Admissibility;
use crate::flow::partition::{check_matching, greedy_matching, match_partitions, MatchMethod, PartitionMatching};
use crate::flow::shrink::{shrink_clusters, Piece};
use crate::flow::{uniform_grid, FlowPath, SegmentKind};
use crate::spectrum::{DeformationSpectrum, C64};

/// Dyadic constant `c₀` with both half-plane counts above `c₀N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HalfPlaneMass {
    pub c: f64,
    /// `#{Re b < −c}`.
    pub left: u64,
    /// `#{Re b > c}`.
    pub right: u64,
    pub n: u64,
}

fn half_plane_counts(b: &DeformationSpectrum, c: f64) -> (u64, u64) {
    b.iter().fold((0, 0), |(l, r), (z, m)| {
        (l + if z.re < -c { m } else { 0 }, r + if z.re > c { m } else { 0 })
    })
}

/// Largest `c = 2⁻ᵏ < 1/(2𝔠)` with `#{Re b < −c} > cN` and `#{Re b > c} > cN`.
pub fn half_plane_mass_constant(b: &DeformationSpectrum, frak_c: f64) -> Result<HalfPlaneMass> {
    let n = b.n();
    let bound = 1.0 / (2.0 * frak_c);
    let mut last = (0, 0);
    for k in 1..=60 {
        let c = 0.5f64.powi(k);
        if c >= bound {
            continue;
        }
        let (left, right) = half_plane_counts(b, c);
        last = (left, right);
        let need = c * n as f64;
        if left as f64 > need && right as f64 > need {
            return Ok(HalfPlaneMass { c, left, right, n });
        }
    }
    Err(Error::NoValidConstant { left: last.0, right: last.1, n })
}

/// Settings of the finite-support construction.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteSupportConfig {
    /// Initial mesh half-width; `0.1/𝔠` when absent.
    pub h0: Option<f64>,
    /// The calibration gives up below this mesh half-width.
    pub h_min: f64,
    pub grid_points: usize,
    /// Tolerance of each implicit solve.
    pub solve_tol: f64,
}

impl Default for FiniteSupportConfig {
    fn default() -> Self {
        Self { h0: None, h_min: 1e-8, grid_points: 257, solve_tol: 1e-14 }
    }
}

/// Summary of one matched pair of sub-clusters.
#[derive(Debug, Clone, Serialize)]
pub struct PairSummary {
    pub pairing: usize,
    pub sizes: (u64, u64),
    #[serde(with = "crate::spectrum::complex_pairs")]
    pub centers: Vec<C64>,
    #[serde(with = "crate::spectrum::complex_pairs")]
    pub endpoints: Vec<C64>,
    pub margin: f64,
    pub conservation: f64,
}

/// Finite-support path with the calibration that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteSupportFlow {
    #[serde(skip)]
    pub path: FlowPath,
    pub mass: HalfPlaneMass,
    /// Final mesh half-width.
    pub h: f64,
    /// Fraction of each inside set reserved from the opposite outside set.
    pub kappa: f64,
    /// `100𝔠²/h²`.
    pub support_bound: f64,
    pub final_support: usize,
    pub methods: Vec<Option<MatchMethod>>,
    pub pairs: Vec<PairSummary>,
    /// Calibration attempts `(h, κ, outcome)`.
    pub attempts: Vec<(f64, f64, String)>,
}

/// Entry indices of the four sets, in input order.
struct IndexSets {
    inside_pos: Vec<usize>,
    inside_neg: Vec<usize>,
    outside_pos: Vec<usize>,
    outside_neg: Vec<usize>,
}

fn index_sets(values: &[C64], c0: f64) -> IndexSets {
    let mut s = IndexSets { inside_pos: vec![], inside_neg: vec![], outside_pos: vec![], outside_neg: vec![] };
    for (i, z) in values.iter().enumerate() {
        let x = z.re;
        if x > c0 {
            s.outside_pos.push(i);
        } else if x > 0.0 {
            s.inside_pos.push(i);
        } else if x > -c0 {
            s.inside_neg.push(i);
        } else {
            s.outside_neg.push(i);
        }
    }
    s
}

/// Box `(kh/2, (k+1)h/2] × (ℓh/2, (ℓ+1)h/2]` containing `z`.
fn box_key(z: C64, h: f64) -> (i64, i64) {
    let side = h / 2.0;
    ((z.re / side).ceil() as i64 - 1, (z.im / side).ceil() as i64 - 1)
}

fn box_center(key: (i64, i64), h: f64) -> C64 {
    let side = h / 2.0;
    C64::new((key.0 as f64 + 0.5) * side, (key.1 as f64 + 0.5) * side)
}

fn box_partition(indices: &[usize], values: &[C64], h: f64) -> Vec<Vec<usize>> {
    let mut boxes: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for &i in indices {
        boxes.entry(box_key(values[i], h)).or_default().push(i);
    }
    boxes.into_values().collect()
}

/// Matches two box partitions, preferring the bounded-ratio construction.
fn match_boxes(s1: &[Vec<usize>], s2: &[Vec<usize>]) -> Result<PartitionMatching> {
    let (n1, n2) = (s1.iter().map(Vec::len).sum::<usize>(), s2.iter().map(Vec::len).sum::<usize>());
    let c = (n1 as f64 / n2 as f64).min(n2 as f64 / n1 as f64);
    let m = match match_partitions(s1, s2, c) {
        Ok(m) => m,
        Err(Error::SizePreconditionFailed(_) | Error::PairingInfeasible(_)) => greedy_matching(s1, s2)?,
        Err(e) => return Err(e),
    };
    check_matching(s1, s2, &m, None).map_err(Error::PairingInfeasible)?;
    Ok(m)
}

/// Groups entry indices into pieces `(value, count)` by their source block.
fn pieces(indices: &[usize], owner: &[usize], values: &[C64]) -> Vec<Piece> {
    let mut by_block: BTreeMap<usize, Piece> = BTreeMap::new();
    for &i in indices {
        by_block.entry(owner[i]).or_insert((values[i], 0)).1 += 1;
    }
    by_block.into_values().collect()
}

enum Attempt {
    /// The mesh is too coarse or a pair violated admissibility.
    Refine(String),
    /// No pairing exists for this reservation fraction.
    Widen(String),
}

struct Built {
    counts: Vec<u64>,
    positions: Vec<Vec<C64>>,
    methods: Vec<Option<MatchMethod>>,
    pairs: Vec<PairSummary>,
}

/// Flow from `B` to a spectrum supported on at most `100𝔠²/h²` points.
///
/// Requires `‖B‖, ‖B⁻¹‖ ≤ 𝔠`, `⟨B²B*⟩ = 0` and `0 ≤ χ(B) ≤ 1 − 1/𝔠`. The mesh
/// starts at `h₀` and halves until every matched pair passes admissibility
/// and the contraction precheck; the reserved fraction `κ` starts at `c₀/2`
/// and doubles when the box partitions admit no matching.
pub fn finite_support_flow(b: &DeformationSpectrum, frak_c: f64, cfg: &FiniteSupportConfig) -> Result<FiniteSupportFlow> {
    b.check_nonzero()?;
    if b.norm() > frak_c || b.inverse_norm() > frak_c {
        return Err(Error::ConditionViolated(format!(
            "norms {:.4} and {:.4} exceed {frak_c}",
            b.norm(),
            b.inverse_norm()
        )));
    }
    let chi_b = chi(b)?;
    if chi_b.imag.abs() > 1e-8 {
        return Err(Error::ConditionViolated(format!("chi has imaginary part {:.3e}; rotate the input first", chi_b.imag)));
    }
    let chi0 = chi_b.value;
    if chi0 < -1e-12 || chi0 > 1.0 - 1.0 / frak_c + 1e-12 {
        return Err(Error::ConditionViolated(format!("chi = {chi0} outside [0, 1 − 1/C = {}]", 1.0 - 1.0 / frak_c)));
    }
    let skew = b.trace(|z| z * z * z.conj()).norm();
    if skew > 1e-8 {
        return Err(Error::ResidualExceeded { what: "criticality of the initial spectrum".into(), value: skew, tol: 1e-8 });
    }
    let mass = half_plane_mass_constant(b, frak_c)?;
    let c0 = mass.c;
    let c_geom = c0.min(1.0 / (2.0 * frak_c));

    // Entry layout: blocks expanded in input order.
    let mut values = Vec::with_capacity(b.n() as usize);
    let mut owner = Vec::with_capacity(b.n() as usize);
    for (k, (z, m)) in b.iter().enumerate() {
        for _ in 0..m {
            values.push(z);
            owner.push(k);
        }
    }
    let sets = index_sets(&values, c0);
    let grid = uniform_grid(cfg.grid_points);
    let mut attempts = Vec::new();
    let mut kappa = c0 / 2.0;
    let mut h = cfg.h0.unwrap_or(0.1 / frak_c);

    loop {
        if kappa > 1.0 {
            return Err(Error::PairingInfeasible(format!("no matching up to full reservation; last attempts {attempts:?}")));
        }
        if h < cfg.h_min {
            return Err(Error::MeshTooCoarse { h });
        }
        let reserve = |outside: &[usize], inside: &[usize]| -> Option<usize> {
            let k = (kappa * inside.len() as f64).ceil() as usize;
            (k <= outside.len()).then_some(k)
        };
        let (Some(k_pos), Some(k_neg)) =
            (reserve(&sets.outside_pos, &sets.inside_neg), reserve(&sets.outside_neg, &sets.inside_pos))
        else {
            return Err(Error::PairingInfeasible(format!("outside sets too small for reservation {kappa}")));
        };
        let (oi_pos, oo_pos) = sets.outside_pos.split_at(k_pos);
        let (oi_neg, oo_neg) = sets.outside_neg.split_at(k_neg);
        let pairings: [(&[usize], &[usize]); 3] =
            [(oi_pos, &sets.inside_neg), (oi_neg, &sets.inside_pos), (oo_neg, oo_pos)];

        match build(&pairings, &values, &owner, h, c_geom, chi0, &grid, cfg) {
            Ok(built) => {
                attempts.push((h, kappa, "ok".to_string()));
                let n = grid.len();
                let path = FlowPath::from_trajectory(grid, &built.counts, built.positions, SegmentKind::Shrink, vec![chi0; n])?;
                let final_support = path.last().support_size();
                return Ok(FiniteSupportFlow {
                    path,
                    mass,
                    h,
                    kappa,
                    support_bound: 100.0 * frak_c * frak_c / (h * h),
                    final_support,
                    methods: built.methods,
                    pairs: built.pairs,
                    attempts,
                });
            }
            Err(Attempt::Refine(why)) => {
                attempts.push((h, kappa, why));
                h /= 2.0;
            }
            Err(Attempt::Widen(why)) => {
                attempts.push((h, kappa, why));
                kappa *= 2.0;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn build(
    pairings: &[(&[usize], &[usize]); 3],
    values: &[C64],
    owner: &[usize],
    h: f64,
    c_geom: f64,
    chi0: f64,
    grid: &[f64],
    cfg: &FiniteSupportConfig,
) -> std::result::Result<Built, Attempt> {
    let mut counts = Vec::new();
    let mut positions: Vec<Vec<C64>> = vec![Vec::new(); grid.len()];
    let mut methods = Vec::new();
    let mut pairs = Vec::new();
    for (p, &(first, second)) in pairings.iter().enumerate() {
        if first.is_empty() && second.is_empty() {
            methods.push(None);
            continue;
        }
        if first.is_empty() || second.is_empty() {
            return Err(Attempt::Widen(format!("pairing {p} has an empty side")));
        }
        let s1 = box_partition(first, values, h);
        let s2 = box_partition(second, values, h);
        let matching = match match_boxes(&s1, &s2) {
            Ok(m) => m,
            Err(e) => return Err(Attempt::Widen(format!("pairing {p}: {e}"))),
        };
        methods.push(Some(matching.method));
        for (j1, j2) in matching.pairs() {
            let z1 = box_center(box_key(values[j1[0]], h), h);
            let z2 = box_center(box_key(values[j2[0]], h), h);
            let (n1, n2) = (j1.len() as f64, j2.len() as f64);
            let weight = n1 / (n1 + n2);
            let margin = c_geom.min(weight).min(1.0 - weight);
            if let Err(e) = (Admissibility { c: margin }).check(z1, z2, chi0, weight) {
                return Err(Attempt::Refine(format!("pairing {p}: {e}")));
            }
            let v1 = pieces(j1, owner, values);
            let v2 = pieces(j2, owner, values);
            let flow = match shrink_clusters(&v1, &v2, z1, z2, chi0, grid, h, cfg.solve_tol) {
                Ok(f) => f,
                Err(e @ (Error::MeshTooCoarse { .. } | Error::ContractionFailed { .. } | Error::RadiusExceeded { .. })) => {
                    return Err(Attempt::Refine(format!("pairing {p}: {e}")))
                }
                Err(e) => return Err(Attempt::Refine(format!("pairing {p}: solve failed: {e}"))),
            };
            counts.extend(v1.iter().chain(&v2).map(|piece| piece.1));
            for (row, new) in positions.iter_mut().zip(&flow.positions) {
                row.extend_from_slice(new);
            }
            pairs.push(PairSummary {
                pairing: p,
                sizes: (j1.len() as u64, j2.len() as u64),
                centers: vec![z1, z2],
                endpoints: flow.z_tilde.clone(),
                margin,
                conservation: flow.conservation,
            });
        }
    }
    Ok(Built { counts, positions, methods, pairs })
}
