//! Geometric mass grid and per-bin number densities.
//!
//! Bins are indexed from zero. Bin `k` holds particles of mass `x[k]`, and the
//! grid is built by repeated multiplication so `x[k + 1] == ratio * x[k]`
//! holds exactly in floating point.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Default bin count, matching the FSBM scheme.
pub const DEFAULT_NKR: usize = 33;
/// Default smallest bin mass, roughly a 2 µm radius water drop (kg).
pub const DEFAULT_X1: f64 = 3.35e-14;
pub const DEFAULT_RATIO: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MassGrid {
    x: Vec<f64>,
    ratio: f64,
}

impl MassGrid {
    pub fn new(nkr: usize, x1: f64, ratio: f64) -> Result<Self> {
        if nkr < 2 {
            return Err(Error::domain(format!("nkr must be at least 2, got {nkr}")));
        }
        if !(x1.is_finite() && x1 > 0.0) {
            return Err(Error::domain(format!("x1 must be positive, got {x1}")));
        }
        if !(ratio.is_finite() && ratio > 1.0) {
            return Err(Error::domain(format!("ratio must exceed 1, got {ratio}")));
        }
        let mut x = Vec::with_capacity(nkr);
        let mut m = x1;
        for _ in 0..nkr {
            x.push(m);
            m *= ratio;
        }
        if !x[nkr - 1].is_finite() {
            return Err(Error::domain("largest bin mass overflows"));
        }
        Ok(MassGrid { x, ratio })
    }

    pub fn with_defaults(nkr: usize) -> Result<Self> {
        Self::new(nkr, DEFAULT_X1, DEFAULT_RATIO)
    }

    #[inline]
    pub fn nkr(&self) -> usize {
        self.x.len()
    }

    #[inline]
    pub fn masses(&self) -> &[f64] {
        &self.x
    }

    #[inline]
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x[0]
    }

    #[inline]
    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// Lower bracketing bin for a coalesced mass `m` with `x1 <= m < x_max`:
    /// the `k` with `x[k] <= m < x[k + 1]`.
    ///
    /// Uses the closed form `floor(log(m / x1) / log(ratio))` and then nudges
    /// by one bin where rounding in the logarithms lands on the wrong side of
    /// a bin edge.
    pub fn lower_bin(&self, m: f64) -> usize {
        let last = self.x.len() - 1;
        let guess = libm::floor(libm::log(m / self.x[0]) / libm::log(self.ratio));
        let mut k = if guess <= 0.0 {
            0
        } else {
            (guess as usize).min(last - 1)
        };
        while k + 1 < last && self.x[k + 1] <= m {
            k += 1;
        }
        while k > 0 && self.x[k] > m {
            k -= 1;
        }
        k
    }
}

/// Number density per bin (m⁻³) for one category at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct BinDistribution {
    n: Vec<f64>,
}

impl BinDistribution {
    pub fn zeros(nkr: usize) -> Self {
        BinDistribution { n: vec![0.0; nkr] }
    }

    /// Wraps a vector of densities, rejecting negative or non-finite entries.
    pub fn from_vec(n: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = n.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        if let Some(k) = n.iter().position(|&v| v < 0.0) {
            return Err(Error::domain(format!("bin {k} has negative density {}", n[k])));
        }
        Ok(BinDistribution { n })
    }

    /// Exponential-in-mass initial condition, normalized discretely so the
    /// bins sum to `n_total`: `n[k] ∝ x[k]·exp(−x[k]/xbar)`.
    pub fn exponential(grid: &MassGrid, n_total: f64, xbar: f64) -> Result<Self> {
        if !(n_total.is_finite() && n_total >= 0.0) {
            return Err(Error::domain(format!("n_total must be >= 0, got {n_total}")));
        }
        if !(xbar.is_finite() && xbar > 0.0) {
            return Err(Error::domain(format!("xbar must be > 0, got {xbar}")));
        }
        if n_total == 0.0 {
            return Ok(Self::zeros(grid.nkr()));
        }
        let w: Vec<f64> = grid.masses().iter().map(|&x| x * libm::exp(-x / xbar)).collect();
        let sum: f64 = w.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::domain("exponential weights underflow on this grid"));
        }
        Ok(BinDistribution {
            n: w.into_iter().map(|wk| n_total * wk / sum).collect(),
        })
    }

    #[inline]
    pub fn nkr(&self) -> usize {
        self.n.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.n
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.n
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.n
    }

    pub fn total_number(&self) -> f64 {
        total_number(&self.n)
    }

    pub fn total_mass(&self, grid: &MassGrid) -> Result<f64> {
        total_mass(&self.n, grid)
    }
}

/// Σ n[k].
pub fn total_number(n: &[f64]) -> f64 {
    n.iter().sum()
}

/// Σ n[k]·x[k] (kg·m⁻³).
pub fn total_mass(n: &[f64], grid: &MassGrid) -> Result<f64> {
    if n.len() != grid.nkr() {
        return Err(Error::DimensionMismatch {
            expected: grid.nkr(),
            found: n.len(),
        });
    }
    Ok(n.iter().zip(grid.masses()).map(|(n, x)| n * x).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn three_bin_grid() {
        let g = MassGrid::new(3, 1.0, 2.0).unwrap();
        assert_eq!(g.masses(), &[1.0, 2.0, 4.0]);
    }

    #[test]
    fn default_grid_top_bin() {
        let g = MassGrid::new(33, 3.35e-14, 2.0).unwrap();
        // 3.35e-14 * 2^32
        let expected = 3.35e-14 * 4_294_967_296.0;
        assert_eq!(g.x_max(), expected);
        assert!(rel(g.x_max(), 1.4388e-4) < 1e-4);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(matches!(MassGrid::new(1, 1.0, 2.0), Err(Error::Domain(_))));
        assert!(matches!(MassGrid::new(3, 0.0, 2.0), Err(Error::Domain(_))));
        assert!(matches!(MassGrid::new(3, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(MassGrid::new(3, -1.0, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn exponential_zero_total() {
        let g = MassGrid::with_defaults(33).unwrap();
        let d = BinDistribution::exponential(&g, 0.0, 1e-12).unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exponential_flat_limit() {
        let g = MassGrid::new(3, 1.0, 2.0).unwrap();
        let d = BinDistribution::exponential(&g, 100.0, 1e30).unwrap();
        let expect = [100.0 / 7.0, 200.0 / 7.0, 400.0 / 7.0];
        for (a, b) in d.as_slice().iter().zip(expect) {
            assert!(rel(*a, b) < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn exponential_two_bins_by_hand() {
        let g = MassGrid::new(2, 1.0, 2.0).unwrap();
        let d = BinDistribution::exponential(&g, 10.0, 1.0).unwrap();
        let e1 = (-1.0f64).exp();
        let e2 = 2.0 * (-2.0f64).exp();
        let expect = [10.0 * e1 / (e1 + e2), 10.0 * e2 / (e1 + e2)];
        for (a, b) in d.as_slice().iter().zip(expect) {
            assert!(rel(*a, b) < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn exponential_rejects_bad_arguments() {
        let g = MassGrid::new(2, 1.0, 2.0).unwrap();
        assert!(BinDistribution::exponential(&g, -1.0, 1.0).is_err());
        assert!(BinDistribution::exponential(&g, 1.0, 0.0).is_err());
    }

    #[test]
    fn mass_and_number_by_hand() {
        let g = MassGrid::new(2, 1.0, 2.0).unwrap();
        assert_eq!(total_mass(&[0.0, 0.0], &g).unwrap(), 0.0);
        assert_eq!(total_mass(&[2.0, 0.0], &g).unwrap(), 2.0);
        assert_eq!(total_mass(&[1.6, 0.2], &g).unwrap(), 2.0);
        assert_eq!(total_number(&[0.0, 0.0]), 0.0);
        assert_eq!(total_number(&[2.0, 0.0]), 2.0);
        assert!(rel(total_number(&[1.6, 0.2]), 1.8) < 1e-15);
    }

    #[test]
    fn mass_dimension_mismatch() {
        let g = MassGrid::new(2, 1.0, 2.0).unwrap();
        assert_eq!(
            total_mass(&[1.0, 2.0, 3.0], &g),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        );
    }

    #[test]
    fn from_vec_rejects_negative() {
        assert!(BinDistribution::from_vec(alloc::vec![1.0, -1e-30]).is_err());
        assert!(BinDistribution::from_vec(alloc::vec![f64::NAN]).is_err());
    }

    #[test]
    fn lower_bin_matches_linear_scan() {
        for ratio in [1.5, 2.0, 3.0] {
            let g = MassGrid::new(33, 3.35e-14, ratio).unwrap();
            let x = g.masses();
            for a in 0..33 {
                for b in 0..33 {
                    let m = x[a] + x[b];
                    if m >= g.x_max() {
                        continue;
                    }
                    let scan = (0..32).find(|&k| x[k] <= m && m < x[k + 1]).unwrap();
                    assert_eq!(g.lower_bin(m), scan, "ratio {ratio} m {m}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn grid_ratio_is_exact(nkr in 2usize..64, x1 in 1e-20f64..1.0, ratio in 1.01f64..4.0) {
            let g = MassGrid::new(nkr, x1, ratio).unwrap();
            for w in g.masses().windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!(((w[1] / w[0]) - ratio).abs() <= 1e-15 * ratio);
            }
        }

        #[test]
        fn exponential_normalizes(n_total in 0.0f64..1e12, xbar_exp in -13.0f64..-8.0) {
            let g = MassGrid::with_defaults(33).unwrap();
            let d = BinDistribution::exponential(&g, n_total, 10f64.powf(xbar_exp)).unwrap();
            let total = d.total_number();
            prop_assert!((total - n_total).abs() <= 1e-12 * n_total);
        }

        #[test]
        fn diagnostics_scale_linearly(
            n in proptest::collection::vec(0.0f64..1e9, 8),
            e in -20i32..20,
        ) {
            let g = MassGrid::new(8, 1e-12, 2.0).unwrap();
            let a = 2f64.powi(e);
            let scaled: Vec<f64> = n.iter().map(|v| v * a).collect();
            prop_assert_eq!(total_number(&scaled), a * total_number(&n));
            prop_assert_eq!(total_mass(&scaled, &g).unwrap(), a * total_mass(&n, &g).unwrap());
        }
    }
}
