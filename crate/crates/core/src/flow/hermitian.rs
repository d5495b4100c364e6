//! Two-point flow for real spectra.
//!
//! With `f_±(s) = N⁻¹ Σ_{±bᵢ>0} (±bᵢ + s)³` and `g = f₋⁻¹ ∘ f₊`, positive
//! entries move to `bᵢ + s` and negative ones to `bᵢ − g(s)`, which keeps
//! `Σ b³ = 0`. Rescaling by `1/(1 + s)` with `s = t/(1 − t)` gives a path on
//! `[0, 1]` that ends at `{1, −(n₊/n₋)^{1/3}}`.

use crate::error::{Error, Result};
use crate::flow::{uniform_grid, FlowPath, SegmentKind};
use crate::spectrum::{DeformationSpectrum, C64};

/// Largest tolerated `|Im bᵢ|` for a real spectrum.
pub const REAL_TOL: f64 = 1e-12;

/// The two monotone cubic sums of a real critical spectrum.
#[derive(Debug, Clone)]
pub struct CubicSums {
    positive: Vec<(f64, f64)>,
    negative: Vec<(f64, f64)>,
    n: f64,
}

impl CubicSums {
    pub fn new(b: &DeformationSpectrum) -> Result<Self> {
        let mut positive = Vec::new();
        let mut negative = Vec::new();
        for (index, (z, m)) in b.iter().enumerate() {
            if z.im.abs() > REAL_TOL {
                return Err(Error::NotReal { index, im: z.im });
            }
            if z.re > 0.0 {
                positive.push((z.re, m as f64));
            } else if z.re < 0.0 {
                negative.push((-z.re, m as f64));
            } else {
                return Err(Error::ZeroEigenvalue { index, modulus: 0.0 });
            }
        }
        if positive.is_empty() || negative.is_empty() {
            return Err(Error::InvalidInput("a real critical spectrum needs entries of both signs".into()));
        }
        Ok(Self { positive, negative, n: b.n() as f64 })
    }

    fn sum(part: &[(f64, f64)], s: f64, n: f64) -> f64 {
        part.iter().map(|&(x, m)| m * (x + s).powi(3)).sum::<f64>() / n
    }

    pub fn f_plus(&self, s: f64) -> f64 {
        Self::sum(&self.positive, s, self.n)
    }

    pub fn f_minus(&self, s: f64) -> f64 {
        Self::sum(&self.negative, s, self.n)
    }

    /// `f₋⁻¹(f₊(s))` by bisection down to adjacent floating-point numbers.
    pub fn g(&self, s: f64) -> f64 {
        let target = self.f_plus(s);
        let mut lo = 0.0;
        let mut hi = 1.0 + s;
        while self.f_minus(hi) < target {
            hi *= 2.0;
        }
        if self.f_minus(lo) >= target {
            return 0.0;
        }
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi.max(1.0) {
                return mid;
            }
            if self.f_minus(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }

    pub fn count_positive(&self) -> f64 {
        self.positive.iter().map(|p| p.1).sum()
    }

    pub fn count_negative(&self) -> f64 {
        self.negative.iter().map(|p| p.1).sum()
    }
}

/// Path from a real critical `B` to a spectrum with two support points.
pub fn hermitian_flow(b: &DeformationSpectrum, frak_c: f64, points: usize) -> Result<FlowPath> {
    let sums = CubicSums::new(b)?;
    if b.norm() > frak_c || b.inverse_norm() > frak_c {
        return Err(Error::ConditionViolated(format!(
            "norms {:.4} and {:.4} exceed {frak_c}",
            b.norm(),
            b.inverse_norm()
        )));
    }
    let tail = -(sums.count_positive() / sums.count_negative()).cbrt();
    let grid = uniform_grid(points);
    let positions: Vec<Vec<C64>> = grid
        .iter()
        .map(|&t| {
            b.eigenvalues()
                .iter()
                .map(|z| {
                    let x = z.re;
                    let v = if t == 0.0 {
                        x
                    } else if t == 1.0 {
                        if x > 0.0 {
                            1.0
                        } else {
                            tail
                        }
                    } else {
                        let s = t / (1.0 - t);
                        if x > 0.0 {
                            (x + s) / (1.0 + s)
                        } else {
                            (x - sums.g(s)) / (1.0 + s)
                        }
                    };
                    C64::new(v, 0.0)
                })
                .collect()
        })
        .collect();
    let n = grid.len();
    FlowPath::from_trajectory(grid, b.multiplicities(), positions, SegmentKind::Hermitian, vec![1.0; n])
}
