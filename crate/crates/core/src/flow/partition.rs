//! Common refinements of two set partitions with a size-controlled bijection.
//!
//! Given partitions `S₁` of `I₁` and `S₂` of `I₂`, [`match_partitions`]
//! returns refinements of equal length at most `m₁ + m₂` and pairs their
//! blocks in order so that every pair has size ratio in `[c/4, 4/c]`. The
//! construction lays each partition out on an integer interval with blocks
//! as consecutive runs and cuts both lines at the points of a common set
//! `𝒴`, after the small blocks of the larger side have been absorbed by the
//! largest block of the smaller side.
//!
//! [`greedy_matching`] is a staircase matcher with no size preconditions,
//! used when the sets are too small for the bounded-ratio construction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which construction produced a matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMethod {
    /// Bounded-ratio construction with size preconditions.
    Stretch,
    /// Staircase fallback without preconditions.
    Greedy,
}

/// Refinements of two partitions with the pairing `refined_s1[k] ↔ refined_s2[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionMatching {
    pub refined_s1: Vec<Vec<usize>>,
    pub refined_s2: Vec<Vec<usize>>,
    /// Index pairs `(k, k)` of the bijection between the refinements.
    pub bijection: Vec<(usize, usize)>,
    /// Smallest and largest `|f(J)| / |J|` over matched pairs.
    pub ratio_bounds: (f64, f64),
    pub method: MatchMethod,
}

impl PartitionMatching {
    fn from_pairs(pairs: Vec<(Vec<usize>, Vec<usize>)>, method: MatchMethod) -> Self {
        let (refined_s1, refined_s2): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let bijection = (0..refined_s1.len()).map(|k| (k, k)).collect();
        let mut m = Self { refined_s1, refined_s2, bijection, ratio_bounds: (0.0, 0.0), method };
        m.ratio_bounds = m.measured_ratios();
        m
    }

    fn measured_ratios(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for &(a, b) in &self.bijection {
            let r = self.refined_s2[b].len() as f64 / self.refined_s1[a].len() as f64;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }

    fn swapped(self) -> Self {
        let bijection = self.bijection.iter().map(|&(a, b)| (b, a)).collect();
        let (lo, hi) = self.ratio_bounds;
        Self {
            refined_s1: self.refined_s2,
            refined_s2: self.refined_s1,
            bijection,
            ratio_bounds: (1.0 / hi, 1.0 / lo),
            method: self.method,
        }
    }

    /// Number of matched pairs.
    pub fn len(&self) -> usize {
        self.bijection.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bijection.is_empty()
    }

    /// Matched pairs of blocks.
    pub fn pairs(&self) -> impl Iterator<Item = (&[usize], &[usize])> + '_ {
        self.bijection.iter().map(|&(a, b)| (self.refined_s1[a].as_slice(), self.refined_s2[b].as_slice()))
    }
}

fn total(s: &[Vec<usize>]) -> usize {
    s.iter().map(Vec::len).sum()
}

/// Rejects empty blocks and repeated indices.
fn validate_partition(s: &[Vec<usize>], name: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for (k, block) in s.iter().enumerate() {
        if block.is_empty() {
            return Err(Error::InvalidInput(format!("{name}: block {k} is empty")));
        }
        for &i in block {
            if !seen.insert(i) {
                return Err(Error::InvalidInput(format!("{name}: index {i} appears twice")));
            }
        }
    }
    Ok(())
}

/// Blocks with sorted members, ordered by `(size, lowest index)`.
fn size_sorted(s: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = s
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.sort_unstable();
            b
        })
        .collect();
    out.sort_by_key(|b| (b.len(), b[0]));
    out
}

/// Checks the size preconditions `c ≤ N₁/N₂ ≤ 1/c` and `N₁, N₂ ≥ 8m₁m₂/c`.
pub fn check_preconditions(n1: usize, n2: usize, m1: usize, m2: usize, c: f64) -> Result<()> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidInput(format!("ratio constant c = {c} outside (0, 1]")));
    }
    let ratio = n1 as f64 / n2 as f64;
    if ratio < c || ratio > 1.0 / c {
        return Err(Error::SizePreconditionFailed(format!("N1/N2 = {n1}/{n2} outside [c, 1/c] with c = {c}")));
    }
    let floor = 8.0 * (m1 * m2) as f64 / c;
    if (n1.min(n2) as f64) < floor {
        return Err(Error::SizePreconditionFailed(format!(
            "min(N1, N2) = {} below 8 m1 m2 / c = {floor} (m1 = {m1}, m2 = {m2}, c = {c})",
            n1.min(n2)
        )));
    }
    Ok(())
}

/// Bounded-ratio matching of two partitions.
///
/// Requires `c ≤ N₁/N₂ ≤ 1/c` and `N₁, N₂ ≥ 8m₁m₂/c`; fails with
/// `SizePreconditionFailed` naming the violated inequality otherwise.
pub fn match_partitions(s1: &[Vec<usize>], s2: &[Vec<usize>], c: f64) -> Result<PartitionMatching> {
    validate_partition(s1, "S1")?;
    validate_partition(s2, "S2")?;
    let (n1, n2) = (total(s1), total(s2));
    check_preconditions(n1, n2, s1.len(), s2.len(), c)?;
    if n1 >= n2 {
        matching_larger_first(s1, s2, c)
    } else {
        Ok(matching_larger_first(s2, s1, c)?.swapped())
    }
}

/// The construction with `N₁ ≥ N₂`.
fn matching_larger_first(s1: &[Vec<usize>], s2: &[Vec<usize>], c: f64) -> Result<PartitionMatching> {
    let sorted1 = size_sorted(s1);
    let mut sorted2 = size_sorted(s2);
    let cutoff = 4.0 / c;
    let k = sorted1.iter().take_while(|b| b.len() as f64 <= cutoff).count();
    if k == sorted1.len() {
        return Err(Error::SizePreconditionFailed(format!("every block of S1 has size at most 4/c = {cutoff}")));
    }
    // The largest block of S2 donates one piece per small block of S1.
    let largest = sorted2.pop().expect("partition is nonempty");
    let absorbed: usize = sorted1[..k].iter().map(Vec::len).sum();
    if absorbed >= largest.len() {
        return Err(Error::SizePreconditionFailed(format!(
            "largest block of S2 ({}) cannot absorb the small blocks of S1 ({absorbed})",
            largest.len()
        )));
    }
    let mut small_pairs = Vec::with_capacity(k);
    let mut offset = 0;
    for block in &sorted1[..k] {
        small_pairs.push((block.clone(), largest[offset..offset + block.len()].to_vec()));
        offset += block.len();
    }
    sorted2.push(largest[offset..].to_vec());

    let mut pairs = small_pairs;
    pairs.extend(stretch_matching(&sorted1[k..], &sorted2)?);
    Ok(PartitionMatching::from_pairs(pairs, MatchMethod::Stretch))
}

/// Cumulative block boundaries `0 = x₀ < x₁ < … < x_m` of a layout.
fn boundaries(blocks: &[Vec<usize>]) -> Vec<usize> {
    let mut out = Vec::with_capacity(blocks.len() + 1);
    out.push(0);
    for b in blocks {
        out.push(out.last().unwrap() + b.len());
    }
    out
}

/// Interval matching of two laid-out partitions with `N̂₁ ≥ N̂₂`.
///
/// Blocks are laid out in the given order on `⟦1, N̂ⱼ⟧`. With
/// `g(x) = ⌈x N̂₂/N̂₁⌉` and the stretching `g→` that sends `y` to the block
/// boundary `xᵢ ∈ ((y−1)N̂₁/N̂₂, yN̂₁/N̂₂]` when there is one and to
/// `⌊yN̂₁/N̂₂⌋` otherwise, the second line is cut at
/// `𝒴 = {g(xᵢ)} ∪ {y_ℓ}` and the first at `g→(𝒴)`. The stretching is
/// injective when every block of the first layout is longer than
/// `2N̂₁/N̂₂`; otherwise this fails with `PairingInfeasible`.
pub fn stretch_matching(blocks1: &[Vec<usize>], blocks2: &[Vec<usize>]) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let layout1: Vec<usize> = blocks1.iter().flatten().copied().collect();
    let layout2: Vec<usize> = blocks2.iter().flatten().copied().collect();
    let (n1, n2) = (layout1.len(), layout2.len());
    if n2 == 0 || n1 < n2 {
        return Err(Error::PairingInfeasible(format!("stretch needs N1 >= N2 > 0, got {n1} and {n2}")));
    }
    let xs = boundaries(blocks1);
    let ys = boundaries(blocks2);
    let g = |x: usize| (x * n2).div_ceil(n1);
    let g_right = |y: usize| -> usize {
        if y == 0 {
            return 0;
        }
        // (y−1)N̂₁ < xᵢN̂₂ ≤ yN̂₁ in integers.
        match xs.iter().find(|&&x| (y - 1) * n1 < x * n2 && x * n2 <= y * n1) {
            Some(&x) => x,
            None => y * n1 / n2,
        }
    };
    let mut cuts: Vec<usize> = xs[1..].iter().map(|&x| g(x)).chain(ys[1..].iter().copied()).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut pairs = Vec::with_capacity(cuts.len());
    let (mut prev_y, mut prev_x) = (0, 0);
    for &y in &cuts {
        let x = g_right(y);
        if x <= prev_x {
            return Err(Error::PairingInfeasible(format!("stretching is not injective at y = {y}")));
        }
        pairs.push((layout1[prev_x..x].to_vec(), layout2[prev_y..y].to_vec()));
        prev_x = x;
        prev_y = y;
    }
    if prev_x != n1 || prev_y != n2 {
        return Err(Error::PairingInfeasible(format!("cuts end at ({prev_x}, {prev_y}) instead of ({n1}, {n2})")));
    }
    Ok(pairs)
}

/// Staircase matching with no size preconditions.
///
/// Block boundaries of both layouts become cut events, ordered by their
/// relative position `x/N₁` versus `y/N₂`. A block of size `s` can hold at
/// most `s − 1` cuts of the other side, so an event that would exceed that
/// budget is merged with the matching boundary of the other side. The free
/// coordinate of each cut is the proportional target clamped between its
/// fixed neighbours. Fails with `PairingInfeasible` when the budgets cannot
/// be met.
pub fn greedy_matching(s1: &[Vec<usize>], s2: &[Vec<usize>]) -> Result<PartitionMatching> {
    validate_partition(s1, "S1")?;
    validate_partition(s2, "S2")?;
    let (b1, b2) = (size_sorted(s1), size_sorted(s2));
    let (xs, ys) = (boundaries(&b1), boundaries(&b2));
    let (m1, m2) = (b1.len(), b2.len());
    let (n1, n2) = (xs[m1], ys[m2]);

    // Event schedule: each entry closes an S1 block, an S2 block, or both.
    #[derive(Clone, Copy)]
    enum Close {
        First,
        Second,
        Both,
    }
    let mut budget1: Vec<usize> = b1.iter().map(|b| b.len() - 1).collect();
    let mut budget2: Vec<usize> = b2.iter().map(|b| b.len() - 1).collect();
    let (mut i, mut l) = (0usize, 0usize);
    let mut events = Vec::with_capacity(m1 + m2);
    while i < m1 && l < m2 {
        let first_ok = i + 1 < m1 && budget2[l] > 0;
        let second_ok = l + 1 < m2 && budget1[i] > 0;
        let both_ok = (i + 1 == m1) == (l + 1 == m2);
        let (lhs, rhs) = (xs[i + 1] * n2, ys[l + 1] * n1);
        let preferred = match lhs.cmp(&rhs) {
            std::cmp::Ordering::Less => [Close::First, Close::Both, Close::Second],
            std::cmp::Ordering::Greater => [Close::Second, Close::Both, Close::First],
            std::cmp::Ordering::Equal => [Close::Both, Close::First, Close::Second],
        };
        let choice = preferred
            .into_iter()
            .find(|c| match c {
                Close::First => first_ok,
                Close::Second => second_ok,
                Close::Both => both_ok,
            })
            .ok_or_else(|| Error::PairingInfeasible(format!("no admissible cut after {i} + {l} closed blocks")))?;
        match choice {
            Close::First => {
                budget2[l] -= 1;
                i += 1;
            }
            Close::Second => {
                budget1[i] -= 1;
                l += 1;
            }
            Close::Both => {
                i += 1;
                l += 1;
            }
        }
        events.push((choice, i, l));
    }

    // Cut coordinates: fixed where a block closes, proportional otherwise.
    let mut cuts = Vec::with_capacity(events.len());
    let (mut px, mut py) = (0usize, 0usize);
    for (k, &(choice, i, l)) in events.iter().enumerate() {
        let free_room = |fixed_next: usize, is_free: &dyn Fn(Close) -> bool| -> usize {
            let between = events[k + 1..].iter().take_while(|e| is_free(e.0)).count();
            fixed_next - between - 1
        };
        let (x, y) = match choice {
            Close::Both => (xs[i], ys[l]),
            Close::First => {
                // y is free; the next fixed y is the end of the open S2 block.
                let hi = free_room(ys[l + 1], &|c| matches!(c, Close::First));
                let target = (xs[i] as f64 * n2 as f64 / n1 as f64).round() as usize;
                (xs[i], target.clamp(py + 1, hi))
            }
            Close::Second => {
                let hi = free_room(xs[i + 1], &|c| matches!(c, Close::Second));
                let target = (ys[l] as f64 * n1 as f64 / n2 as f64).round() as usize;
                (target.clamp(px + 1, hi), ys[l])
            }
        };
        if x <= px || y <= py {
            return Err(Error::PairingInfeasible(format!("cut ({x}, {y}) does not advance past ({px}, {py})")));
        }
        cuts.push((x, y));
        px = x;
        py = y;
    }

    let layout1: Vec<usize> = b1.into_iter().flatten().collect();
    let layout2: Vec<usize> = b2.into_iter().flatten().collect();
    let mut pairs = Vec::with_capacity(cuts.len());
    let (mut px, mut py) = (0, 0);
    for (x, y) in cuts {
        pairs.push((layout1[px..x].to_vec(), layout2[py..y].to_vec()));
        px = x;
        py = y;
    }
    Ok(PartitionMatching::from_pairs(pairs, MatchMethod::Greedy))
}

/// Independent audit of a matching: both refinements partition the original
/// index sets, every refined block sits inside exactly one original block,
/// the two refinements have equal length at most `m₁ + m₂`, and, when `c`
/// is given, every matched ratio lies in `[c/4, 4/c]`.
pub fn check_matching(
    s1: &[Vec<usize>],
    s2: &[Vec<usize>],
    m: &PartitionMatching,
    c: Option<f64>,
) -> std::result::Result<(), String> {
    fn check_refinement(orig: &[Vec<usize>], refined: &[Vec<usize>], name: &str) -> std::result::Result<(), String> {
        let owner: HashMap<usize, usize> =
            orig.iter().enumerate().flat_map(|(k, b)| b.iter().map(move |&i| (i, k))).collect();
        let mut covered: HashMap<usize, usize> = HashMap::new();
        for (r, block) in refined.iter().enumerate() {
            if block.is_empty() {
                return Err(format!("{name}: refined block {r} is empty"));
            }
            let parent = owner.get(&block[0]).ok_or_else(|| format!("{name}: index {} is foreign", block[0]))?;
            for i in block {
                match owner.get(i) {
                    Some(p) if p == parent => {}
                    Some(_) => return Err(format!("{name}: refined block {r} straddles two blocks")),
                    None => return Err(format!("{name}: index {i} is foreign")),
                }
                if covered.insert(*i, r).is_some() {
                    return Err(format!("{name}: index {i} covered twice"));
                }
            }
        }
        if covered.len() != owner.len() {
            return Err(format!("{name}: {} of {} indices covered", covered.len(), owner.len()));
        }
        Ok(())
    }
    check_refinement(s1, &m.refined_s1, "S1")?;
    check_refinement(s2, &m.refined_s2, "S2")?;
    if m.refined_s1.len() != m.refined_s2.len() || m.bijection.len() != m.refined_s1.len() {
        return Err("refinements have different lengths".into());
    }
    if m.refined_s1.len() > s1.len() + s2.len() {
        return Err(format!("{} pairs exceed m1 + m2 = {}", m.refined_s1.len(), s1.len() + s2.len()));
    }
    let mut left: Vec<usize> = m.bijection.iter().map(|p| p.0).collect();
    let mut right: Vec<usize> = m.bijection.iter().map(|p| p.1).collect();
    left.sort_unstable();
    right.sort_unstable();
    let ident: Vec<usize> = (0..m.refined_s1.len()).collect();
    if left != ident || right != ident {
        return Err("pairing is not a bijection".into());
    }
    if let Some(c) = c {
        for &(a, b) in &m.bijection {
            let r = m.refined_s2[b].len() as f64 / m.refined_s1[a].len() as f64;
            if r < c / 4.0 || r > 4.0 / c {
                return Err(format!("pair ({a}, {b}) has ratio {r} outside [{}, {}]", c / 4.0, 4.0 / c));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Consecutive blocks of the given sizes starting at `start`.
    fn blocks(sizes: &[usize], start: usize) -> Vec<Vec<usize>> {
        let mut next = start;
        sizes
            .iter()
            .map(|&s| {
                let b: Vec<usize> = (next..next + s).collect();
                next += s;
                b
            })
            .collect()
    }

    #[test]
    fn single_blocks_of_equal_size_match_once() {
        let s1 = blocks(&[200], 0);
        let s2 = blocks(&[200], 1000);
        let m = match_partitions(&s1, &s2, 0.5).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.ratio_bounds, (1.0, 1.0));
        check_matching(&s1, &s2, &m, Some(0.5)).unwrap();
    }

    #[test]
    fn stretch_cuts_at_union_of_boundaries() {
        let s1 = blocks(&[4, 4], 0);
        let s2 = blocks(&[3, 5], 100);
        let pairs = stretch_matching(&s1, &s2).unwrap();
        let sizes: Vec<(usize, usize)> = pairs.iter().map(|(a, b)| (a.len(), b.len())).collect();
        assert_eq!(sizes, vec![(3, 3), (1, 1), (4, 4)]);
    }

    #[test]
    fn preconditions_name_the_violation() {
        let s1 = blocks(&[10, 10], 0);
        let s2 = blocks(&[100], 100);
        match match_partitions(&s1, &s2, 0.5) {
            Err(Error::SizePreconditionFailed(msg)) => assert!(msg.contains("N1/N2"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let s2 = blocks(&[20], 100);
        match match_partitions(&s1, &s2, 0.5) {
            Err(Error::SizePreconditionFailed(msg)) => assert!(msg.contains("8 m1 m2 / c"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_blocks_are_absorbed_by_the_largest() {
        let c = 0.5;
        // Sizes 3 and 5 are at most 4/c = 8 and get exact partners.
        let s1 = blocks(&[3, 5, 60, 80], 0);
        let s2 = blocks(&[40, 100], 500);
        let m = match_partitions(&s1, &s2, c).unwrap();
        check_matching(&s1, &s2, &m, Some(c)).unwrap();
        let small: Vec<(usize, usize)> = m.pairs().take(2).map(|(a, b)| (a.len(), b.len())).collect();
        assert_eq!(small, vec![(3, 3), (5, 5)]);
    }

    #[test]
    fn swapped_sides_keep_orientation() {
        let s1 = blocks(&[60, 100], 0);
        let s2 = blocks(&[140, 180, 80], 1000);
        let m = match_partitions(&s1, &s2, 0.4).unwrap();
        check_matching(&s1, &s2, &m, Some(0.4)).unwrap();
        assert!(m.refined_s1.iter().flatten().all(|&i| i < 1000));
    }

    #[test]
    fn randomized_instances_pass_the_checker() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let c = 0.2;
        for _ in 0..2000 {
            let m1 = rng.random_range(1..=6);
            let m2 = rng.random_range(1..=6);
            let floor = (8.0 * (m1 * m2) as f64 / c).ceil() as usize;
            let n1 = rng.random_range(floor.max(m1)..=floor * 3);
            let lo = ((n1 as f64 * c).ceil() as usize).max(floor);
            let hi = (n1 as f64 / c).floor() as usize;
            let n2 = rng.random_range(lo..=hi.max(lo));
            let s1 = random_partition(&mut rng, n1, m1, 0);
            let s2 = random_partition(&mut rng, n2, m2, 1_000_000);
            let m = match_partitions(&s1, &s2, c).unwrap();
            check_matching(&s1, &s2, &m, Some(c)).unwrap();
        }
    }

    #[test]
    fn greedy_handles_unbalanced_sets() {
        let s1 = blocks(&[15, 14], 0);
        let s2 = blocks(&[3], 100);
        let m = greedy_matching(&s1, &s2).unwrap();
        check_matching(&s1, &s2, &m, None).unwrap();
        assert_eq!(m.len(), 2);
        assert!(greedy_matching(&blocks(&[1, 1, 1], 0), &blocks(&[2], 10)).is_err());
    }

    #[test]
    fn randomized_greedy_passes_the_checker() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..3000 {
            let m1 = rng.random_range(1..=8);
            let m2 = rng.random_range(1..=8);
            let n1 = rng.random_range(m1.max(m2)..=m1.max(m2) * 10);
            let n2 = rng.random_range(m1.max(m2)..=m1.max(m2) * 10);
            let s1 = random_partition(&mut rng, n1, m1, 0);
            let s2 = random_partition(&mut rng, n2, m2, 1_000_000);
            let m = greedy_matching(&s1, &s2).unwrap();
            check_matching(&s1, &s2, &m, None).unwrap();
        }
    }

    #[test]
    fn checker_rejects_straddling_blocks() {
        let s1 = blocks(&[2, 2], 0);
        let s2 = blocks(&[4], 10);
        let bad = PartitionMatching {
            refined_s1: vec![vec![0, 2], vec![1, 3]],
            refined_s2: vec![vec![10, 11], vec![12, 13]],
            bijection: vec![(0, 0), (1, 1)],
            ratio_bounds: (1.0, 1.0),
            method: MatchMethod::Greedy,
        };
        assert!(check_matching(&s1, &s2, &bad, None).unwrap_err().contains("straddles"));
    }

    fn random_partition(rng: &mut ChaCha8Rng, n: usize, m: usize, start: usize) -> Vec<Vec<usize>> {
        let mut labels: Vec<usize> = (0..m).collect();
        labels.extend((m..n).map(|_| rng.random_range(0..m)));
        let mut out = vec![Vec::new(); m];
        for (k, l) in labels.into_iter().enumerate() {
            out[l].push(start + k);
        }
        out
    }
}
