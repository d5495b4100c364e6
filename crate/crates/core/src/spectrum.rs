//! Normal deformations stored by their eigenvalues and multiplicities.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = num_complex::Complex64;

/// Moduli below this are treated as zero eigenvalues.
pub const MODULUS_FLOOR: f64 = 1e-60;

/// A normal `N×N` matrix `U diag(λ) U*`, stored as eigenvalues with
/// multiplicities. Eigenvalues may repeat; the weighted trace of `f` is
/// `Σ (mᵢ/N) f(λᵢ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectrumFile", into = "SpectrumFile")]
pub struct DeformationSpectrum {
    eigenvalues: Vec<C64>,
    multiplicities: Vec<u64>,
    n: u64,
    basis_id: Option<String>,
}

impl DeformationSpectrum {
    /// Builds a spectrum whose dimension is the sum of the multiplicities.
    pub fn new(eigenvalues: Vec<C64>, multiplicities: Vec<u64>) -> Result<Self> {
        let n = multiplicities.iter().sum();
        Self::with_dimension(n, eigenvalues, multiplicities)
    }

    /// Builds a spectrum and checks that the multiplicities sum to `n`.
    pub fn with_dimension(n: u64, eigenvalues: Vec<C64>, multiplicities: Vec<u64>) -> Result<Self> {
        if eigenvalues.len() != multiplicities.len() {
            return Err(Error::DimensionMismatch {
                expected: eigenvalues.len() as u64,
                got: multiplicities.len() as u64,
            });
        }
        let total: u64 = multiplicities.iter().sum();
        if total != n || n == 0 {
            return Err(Error::DimensionMismatch { expected: n, got: total });
        }
        if multiplicities.contains(&0) {
            return Err(Error::InvalidInput("multiplicities must be positive".into()));
        }
        if let Some(i) = eigenvalues.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput(format!("eigenvalue {i} is not finite")));
        }
        Ok(Self { eigenvalues, multiplicities, n, basis_id: None })
    }

    /// Every point with multiplicity one.
    pub fn from_points(points: Vec<C64>) -> Result<Self> {
        let m = vec![1; points.len()];
        Self::new(points, m)
    }

    /// Real eigenvalues with the given multiplicities.
    pub fn from_real(values: &[f64], multiplicities: Vec<u64>) -> Result<Self> {
        Self::new(values.iter().map(|&x| C64::new(x, 0.0)).collect(), multiplicities)
    }

    pub fn with_basis_id(mut self, id: impl Into<String>) -> Self {
        self.basis_id = Some(id.into());
        self
    }

    pub fn eigenvalues(&self) -> &[C64] {
        &self.eigenvalues
    }

    pub fn multiplicities(&self) -> &[u64] {
        &self.multiplicities
    }

    /// Matrix dimension `N`.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn basis_id(&self) -> Option<&str> {
        self.basis_id.as_deref()
    }

    /// Number of stored (not necessarily distinct) eigenvalues.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Pairs `(λᵢ, mᵢ)`.
    pub fn iter(&self) -> impl Iterator<Item = (C64, u64)> + '_ {
        self.eigenvalues.iter().copied().zip(self.multiplicities.iter().copied())
    }

    /// Normalized trace `Σ (mᵢ/N) f(λᵢ)` of a complex function.
    pub fn trace(&self, f: impl Fn(C64) -> C64) -> C64 {
        let s: C64 = self.iter().map(|(z, m)| f(z) * m as f64).sum();
        s / self.n as f64
    }

    /// Normalized trace of a real function.
    pub fn trace_re(&self, f: impl Fn(C64) -> f64) -> f64 {
        let s: f64 = self.iter().map(|(z, m)| f(z) * m as f64).sum();
        s / self.n as f64
    }

    /// Applies `f` eigenvalue-wise, keeping multiplicities.
    pub fn map(&self, f: impl Fn(C64) -> C64) -> Result<Self> {
        let eigs = self.eigenvalues.iter().map(|&z| f(z)).collect();
        let mut out = Self::with_dimension(self.n, eigs, self.multiplicities.clone())?;
        out.basis_id = self.basis_id.clone();
        Ok(out)
    }

    /// Errors with `ZeroEigenvalue` if some eigenvalue is below the floor.
    pub fn check_nonzero(&self) -> Result<()> {
        self.check_away_from(C64::new(0.0, 0.0))
    }

    /// Errors with `ZeroEigenvalue` if some eigenvalue sits on `z`.
    pub fn check_away_from(&self, z: C64) -> Result<()> {
        for (index, &l) in self.eigenvalues.iter().enumerate() {
            let modulus = (l - z).norm();
            if modulus < MODULUS_FLOOR {
                return Err(Error::ZeroEigenvalue { index, modulus });
            }
        }
        Ok(())
    }

    /// Operator norm `max |λᵢ|`.
    pub fn norm(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Operator norm of the inverse, `1 / min |λᵢ|`.
    pub fn inverse_norm(&self) -> f64 {
        1.0 / self.eigenvalues.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min)
    }

    /// Merges bitwise-equal eigenvalues, keeping the order of first appearance.
    pub fn collapsed(&self) -> Self {
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut eigs = Vec::new();
        let mut mults: Vec<u64> = Vec::new();
        for (z, m) in self.iter() {
            let key = (z.re.to_bits(), z.im.to_bits());
            match index.get(&key) {
                Some(&i) => mults[i] += m,
                None => {
                    index.insert(key, eigs.len());
                    eigs.push(z);
                    mults.push(m);
                }
            }
        }
        Self { eigenvalues: eigs, multiplicities: mults, n: self.n, basis_id: self.basis_id.clone() }
    }

    /// Number of distinct eigenvalues.
    pub fn support_size(&self) -> usize {
        self.collapsed().len()
    }

    /// Every eigenvalue repeated according to its multiplicity.
    pub fn expanded(&self) -> Vec<C64> {
        self.iter().flat_map(|(z, m)| std::iter::repeat_n(z, m as usize)).collect()
    }

    /// True when both describe the same multiset of eigenvalues.
    pub fn same_multiset(&self, other: &Self) -> bool {
        let key = |z: &C64| (z.re.to_bits(), z.im.to_bits());
        let mut a: Vec<_> = self.collapsed().iter().map(|(z, m)| (key(&z), m)).collect();
        let mut b: Vec<_> = other.collapsed().iter().map(|(z, m)| (key(&z), m)).collect();
        a.sort_unstable();
        b.sort_unstable();
        self.n == other.n && a == b
    }
}

/// On-disk layout: `{"n", "eigenvalues": [[re, im], ...], "multiplicities"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumFile {
    pub n: u64,
    pub eigenvalues: Vec<[f64; 2]>,
    pub multiplicities: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_id: Option<String>,
}

impl TryFrom<SpectrumFile> for DeformationSpectrum {
    type Error = Error;

    fn try_from(f: SpectrumFile) -> Result<Self> {
        let eigs = f.eigenvalues.iter().map(|p| C64::new(p[0], p[1])).collect();
        let mut s = Self::with_dimension(f.n, eigs, f.multiplicities)?;
        s.basis_id = f.basis_id;
        Ok(s)
    }
}

impl From<DeformationSpectrum> for SpectrumFile {
    fn from(s: DeformationSpectrum) -> Self {
        Self {
            n: s.n,
            eigenvalues: s.eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
            multiplicities: s.multiplicities,
            basis_id: s.basis_id,
        }
    }
}

/// Serializes a complex number as `[re, im]`.
pub mod complex_pair {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::C64;

    pub fn serialize<S: Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(C64::new(re, im))
    }
}

/// Serializes a complex sequence as `[[re, im], ...]`.
pub mod complex_pairs {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::C64;

    pub fn serialize<S: Serializer>(v: &[C64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<C64>, D::Error> {
        let v = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(v.into_iter().map(|[re, im]| C64::new(re, im)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_multiplicities() {
        let e = DeformationSpectrum::with_dimension(4, vec![C64::new(1.0, 0.0)], vec![3]);
        assert!(matches!(e, Err(Error::DimensionMismatch { expected: 4, got: 3 })));
        assert!(DeformationSpectrum::new(vec![C64::new(1.0, 0.0)], vec![0]).is_err());
    }

    #[test]
    fn weighted_trace_uses_multiplicities() {
        let s = DeformationSpectrum::from_real(&[1.0, -2.0], vec![3, 1]).unwrap();
        assert_eq!(s.n(), 4);
        assert!((s.trace_re(|z| z.re) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn collapse_merges_equal_values() {
        let s = DeformationSpectrum::from_real(&[1.0, -1.0, 1.0], vec![1, 2, 3]).unwrap();
        let c = s.collapsed();
        assert_eq!(c.eigenvalues().len(), 2);
        assert_eq!(c.multiplicities(), &[4, 2]);
        assert!(s.same_multiset(&c));
        assert_eq!(s.expanded().len(), 6);
    }

    #[test]
    fn json_round_trip() {
        let s = DeformationSpectrum::new(vec![C64::new(1.0, 0.5), C64::new(-1.0, 0.0)], vec![2, 2]).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"eigenvalues\":[[1.0,0.5],[-1.0,0.0]]"));
        let back: DeformationSpectrum = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"n": 3, "eigenvalues": [[1,0]], "multiplicities": [2]}"#;
        assert!(serde_json::from_str::<DeformationSpectrum>(bad).is_err());
    }
}
