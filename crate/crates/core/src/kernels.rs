//! Pair-interaction collision kernels.
//!
//! Every registered interaction pair owns two `nkr × nkr` reference tables,
//! one at 750 hPa and one at 500 hPa. A kernel value at pressure `p` is
//!
//! ```text
//! K(p) = K500 + (K750 - K500) * w,   w = clamp((p - 500) / (750 - 500), 0, 1)
//! ```
//!
//! evaluated in exactly that operation order. Two strategies read these
//! tables: [`PrecomputedKernels`] fills all pairs for one pressure up front
//! (the global-array baseline) and [`OnDemand`] evaluates single entries as
//! they are needed. Because both go through [`interpolate`], they agree
//! bitwise.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::bins::MassGrid;
use crate::category::Category;
use crate::error::{Error, Result};

pub const P_HIGH_HPA: f64 = 750.0;
pub const P_LOW_HPA: f64 = 500.0;
pub const DEFAULT_LEVEL_SCALE: f64 = 1.5;
pub const DEFAULT_PAIR_COUNT: usize = 20;

/// Ordered interaction pair `a + b -> dest`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionPair {
    pub name: String,
    pub a: Category,
    pub b: Category,
    pub dest: Category,
}

impl InteractionPair {
    pub fn new(name: impl Into<String>, a: Category, b: Category, dest: Category) -> Self {
        InteractionPair {
            name: name.into(),
            a,
            b,
            dest,
        }
    }

    /// Destination used when a registry entry leaves it unspecified: liquid
    /// pairs stay liquid, a frozen partner of liquid wins, snow + graupel
    /// makes graupel and self-pairs stay in their category.
    pub fn default_dest(a: Category, b: Category) -> Category {
        use Category::*;
        match (a, b) {
            _ if a == b => a,
            (Liquid, x) | (x, Liquid) => x,
            (Snow, Graupel) | (Graupel, Snow) => Graupel,
            (Snow, _) | (_, Snow) => Snow,
            (Graupel, _) | (_, Graupel) => Graupel,
            _ => b,
        }
    }

    #[inline]
    pub fn is_self_pair(&self) -> bool {
        self.a == self.b
    }
}

/// The ordered list of interaction pairs. Iteration order is the
/// accumulation order of the coalescence solver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRegistry {
    pairs: Vec<InteractionPair>,
}

impl PairRegistry {
    /// Validates and wraps a pair list. With `expected = Some(n)` the list
    /// must hold exactly `n` pairs.
    pub fn new(pairs: Vec<InteractionPair>, expected: Option<usize>) -> Result<Self> {
        if let Some(n) = expected {
            if pairs.len() != n {
                return Err(Error::Config(format!(
                    "pair registry holds {} pairs, expected {n}",
                    pairs.len()
                )));
            }
        }
        if pairs.is_empty() {
            return Err(Error::Config("pair registry is empty".to_string()));
        }
        for (idx, p) in pairs.iter().enumerate() {
            for q in &pairs[..idx] {
                if q.name == p.name {
                    return Err(Error::Config(format!("duplicate pair name {:?}", p.name)));
                }
                if q.a == p.a && q.b == p.b {
                    return Err(Error::Config(format!(
                        "pairs {} and {} both map {} + {}",
                        q.name, p.name, p.a, p.b
                    )));
                }
            }
        }
        Ok(PairRegistry { pairs })
    }

    /// The twenty default pairs: every self-pair, liquid with each frozen
    /// category, each ice habit with snow and graupel, snow with graupel, and
    /// two riming channels turning plates and dendrites into graupel.
    pub fn fsbm_default() -> Self {
        use Category::*;
        let spec: [(&str, Category, Category, Category); DEFAULT_PAIR_COUNT] = [
            ("cwll", Liquid, Liquid, Liquid),
            ("cwli_1", Liquid, Ice1, Ice1),
            ("cwli_2", Liquid, Ice2, Ice2),
            ("cwli_3", Liquid, Ice3, Ice3),
            ("cwls", Liquid, Snow, Snow),
            ("cwlg", Liquid, Graupel, Graupel),
            ("cwii_1", Ice1, Ice1, Ice1),
            ("cwii_2", Ice2, Ice2, Ice2),
            ("cwii_3", Ice3, Ice3, Ice3),
            ("cwis_1", Ice1, Snow, Snow),
            ("cwis_2", Ice2, Snow, Snow),
            ("cwis_3", Ice3, Snow, Snow),
            ("cwig_1", Ice1, Graupel, Graupel),
            ("cwig_2", Ice2, Graupel, Graupel),
            ("cwig_3", Ice3, Graupel, Graupel),
            ("cwss", Snow, Snow, Snow),
            ("cwsg", Snow, Graupel, Graupel),
            ("cwgg", Graupel, Graupel, Graupel),
            ("cwil_2", Ice2, Liquid, Graupel),
            ("cwil_3", Ice3, Liquid, Graupel),
        ];
        let pairs = spec
            .iter()
            .map(|&(n, a, b, d)| InteractionPair::new(n, a, b, d))
            .collect();
        PairRegistry::new(pairs, Some(DEFAULT_PAIR_COUNT)).expect("default registry is valid")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    #[inline]
    pub fn pairs(&self) -> &[InteractionPair] {
        &self.pairs
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.pairs.iter().position(|p| p.name == name)
    }
}

/// Synthetic kernel family used to fill the reference tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// `K = c`
    Constant { c: f64 },
    /// `K = b (x_i + x_j)`
    Golovin { b: f64 },
    /// `K = c x_i x_j`
    Product { c: f64 },
    /// Geometric sweep-out shape,
    /// `K = c (x_i^⅓ + x_j^⅓)² (x_i^⅔ + x_j^⅔)`: cross section of the pair
    /// times a fall-speed proxy that grows with particle surface.
    Hydrodynamic { c: f64 },
}

impl KernelFamily {
    fn param(&self) -> f64 {
        match *self {
            KernelFamily::Constant { c } | KernelFamily::Product { c } | KernelFamily::Hydrodynamic { c } => c,
            KernelFamily::Golovin { b } => b,
        }
    }

    #[inline]
    pub fn eval(&self, xi: f64, xj: f64) -> f64 {
        match *self {
            KernelFamily::Constant { c } => c,
            KernelFamily::Golovin { b } => b * (xi + xj),
            KernelFamily::Product { c } => c * xi * xj,
            KernelFamily::Hydrodynamic { c } => {
                let (ri, rj) = (libm::cbrt(xi), libm::cbrt(xj));
                let d = ri + rj;
                c * d * d * (ri * ri + rj * rj)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Constant { .. } => "constant",
            KernelFamily::Golovin { .. } => "golovin",
            KernelFamily::Product { .. } => "product",
            KernelFamily::Hydrodynamic { .. } => "hydrodynamic",
        }
    }
}

/// Interpolation weight of the 750 hPa table at `pressure` (hPa).
#[inline]
pub fn pressure_weight(pressure: f64) -> f64 {
    let w = (pressure - P_LOW_HPA) / (P_HIGH_HPA - P_LOW_HPA);
    w.clamp(0.0, 1.0)
}

/// `k500 + (k750 - k500) * w`. Both kernel strategies must go through here.
#[inline(always)]
pub fn interpolate(k750: f64, k500: f64, w: f64) -> f64 {
    k500 + (k750 - k500) * w
}

/// Shared monotonic count of kernel evaluations.
#[derive(Debug, Default)]
pub struct EvalCounter(AtomicU64);

impl EvalCounter {
    pub const fn new() -> Self {
        EvalCounter(AtomicU64::new(0))
    }

    #[inline]
    pub fn add(&self, n: u64) {
        if n > 0 {
            self.0.fetch_add(n, Ordering::Relaxed);
        }
    }

    #[inline]
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

/// Reference tables for every pair at both pressure levels.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTableSet {
    nkr: usize,
    npairs: usize,
    // [pair][level][i * nkr + j], level 0 = 750 hPa, level 1 = 500 hPa
    data: Vec<f64>,
}

impl KernelTableSet {
    /// Fills both levels for every pair in `registry`. The 500 hPa table is the
    /// 750 hPa table multiplied by `level_scale`.
    pub fn build(grid: &MassGrid, registry: &PairRegistry, family: KernelFamily, level_scale: f64) -> Result<Self> {
        let p = family.param();
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::domain(format!(
                "{} kernel parameter must be finite and >= 0, got {p}",
                family.name()
            )));
        }
        if !(level_scale.is_finite() && level_scale >= 0.0) {
            return Err(Error::domain(format!(
                "level scale must be finite and >= 0, got {level_scale}"
            )));
        }
        let nkr = grid.nkr();
        let npairs = registry.len();
        let plane = nkr * nkr;
        let mut data = vec![0.0; npairs * 2 * plane];
        let x = grid.masses();
        for pair in data.chunks_exact_mut(2 * plane) {
            let (t750, t500) = pair.split_at_mut(plane);
            for i in 0..nkr {
                for j in 0..nkr {
                    let k = family.eval(x[i], x[j]);
                    t750[i * nkr + j] = k;
                    t500[i * nkr + j] = k * level_scale;
                }
            }
        }
        let set = KernelTableSet { nkr, npairs, data };
        if let Some(bad) = set.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(*bad));
        }
        Ok(set)
    }

    /// Builds from explicit per-pair tables, each `nkr * nkr` row-major.
    pub fn from_tables(nkr: usize, tables: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let plane = nkr * nkr;
        let mut data = Vec::with_capacity(tables.len() * 2 * plane);
        for (t750, t500) in tables {
            for t in [t750, t500] {
                if t.len() != plane {
                    return Err(Error::DimensionMismatch {
                        expected: plane,
                        found: t.len(),
                    });
                }
                if let Some(&bad) = t.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::domain(format!(
                        "kernel entry {bad} is not a finite nonnegative value"
                    )));
                }
                data.extend_from_slice(t);
            }
        }
        Ok(KernelTableSet {
            nkr,
            npairs: tables.len(),
            data,
        })
    }

    #[inline]
    pub fn nkr(&self) -> usize {
        self.nkr
    }

    #[inline]
    pub fn npairs(&self) -> usize {
        self.npairs
    }

    pub fn table_750(&self, pair: usize) -> &[f64] {
        let plane = self.nkr * self.nkr;
        &self.data[pair * 2 * plane..][..plane]
    }

    pub fn table_500(&self, pair: usize) -> &[f64] {
        let plane = self.nkr * self.nkr;
        &self.data[(pair * 2 + 1) * plane..][..plane]
    }

    /// Interpolated kernel for one entry without touching any counter.
    #[inline(always)]
    pub(crate) fn eval_unchecked(&self, pair: usize, i: usize, j: usize, w: f64) -> f64 {
        let plane = self.nkr * self.nkr;
        let base = pair * 2 * plane + i * self.nkr + j;
        interpolate(self.data[base], self.data[base + plane], w)
    }

    /// On-demand accessor for a single kernel entry (0-based bin indices).
    /// Adds one to `counter`.
    pub fn kernel_at(&self, pair: usize, i: usize, j: usize, pressure: f64, counter: &EvalCounter) -> Result<f64> {
        if i >= self.nkr || j >= self.nkr {
            return Err(Error::IndexOutOfRange { i, j, nkr: self.nkr });
        }
        if pair >= self.npairs {
            return Err(Error::Config(format!(
                "pair index {pair} out of range for {} pairs",
                self.npairs
            )));
        }
        counter.add(1);
        Ok(self.eval_unchecked(pair, i, j, pressure_weight(pressure)))
    }
}

/// All pairs interpolated to one pressure, filled in a doubly nested loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedKernels {
    nkr: usize,
    npairs: usize,
    data: Vec<f64>,
}

impl PrecomputedKernels {
    /// Storage for `tables`, not yet filled.
    pub fn for_tables(tables: &KernelTableSet) -> Self {
        PrecomputedKernels {
            nkr: tables.nkr,
            npairs: tables.npairs,
            data: vec![0.0; tables.npairs * tables.nkr * tables.nkr],
        }
    }

    pub fn precompute_all(tables: &KernelTableSet, pressure: f64, counter: &EvalCounter) -> Self {
        let mut out = Self::for_tables(tables);
        out.fill(tables, pressure, counter);
        out
    }

    /// Overwrites every entry for `pressure`; adds `npairs * nkr²` to `counter`.
    pub fn fill(&mut self, tables: &KernelTableSet, pressure: f64, counter: &EvalCounter) {
        assert_eq!(
            (self.nkr, self.npairs),
            (tables.nkr, tables.npairs),
            "precomputed storage does not match tables"
        );
        let w = pressure_weight(pressure);
        let nkr = self.nkr;
        let plane = nkr * nkr;
        for (pair, out) in self.data.chunks_exact_mut(plane).enumerate() {
            for i in 0..nkr {
                for j in 0..nkr {
                    out[i * nkr + j] = tables.eval_unchecked(pair, i, j, w);
                }
            }
        }
        counter.add((self.npairs * plane) as u64);
    }

    #[inline]
    pub fn get(&self, pair: usize, i: usize, j: usize) -> f64 {
        self.data[(pair * self.nkr + i) * self.nkr + j]
    }

    pub fn table(&self, pair: usize) -> &[f64] {
        let plane = self.nkr * self.nkr;
        &self.data[pair * plane..][..plane]
    }

    #[inline]
    pub fn nkr(&self) -> usize {
        self.nkr
    }

    #[inline]
    pub fn npairs(&self) -> usize {
        self.npairs
    }
}

/// Where the coalescence solver gets kernel values from.
pub trait KernelSource {
    /// Whether each lookup is a counted kernel evaluation.
    const COUNTS_EVALUATIONS: bool;

    fn nkr(&self) -> usize;

    fn npairs(&self) -> usize;

    fn kernel(&self, pair: usize, i: usize, j: usize) -> f64;

    /// Row `i` of `pair`, entry `j` equal to `kernel(pair, i, j)`. `buf`
    /// (at least `nkr` long) may be used to hold the row.
    fn row<'s>(&'s self, pair: usize, i: usize, buf: &'s mut [f64]) -> &'s [f64];
}

impl KernelSource for PrecomputedKernels {
    const COUNTS_EVALUATIONS: bool = false;

    #[inline]
    fn nkr(&self) -> usize {
        self.nkr
    }

    #[inline]
    fn npairs(&self) -> usize {
        self.npairs
    }

    #[inline(always)]
    fn kernel(&self, pair: usize, i: usize, j: usize) -> f64 {
        self.get(pair, i, j)
    }

    #[inline(always)]
    fn row<'s>(&'s self, pair: usize, i: usize, _buf: &'s mut [f64]) -> &'s [f64] {
        &self.data[(pair * self.nkr + i) * self.nkr..][..self.nkr]
    }
}

/// Pure accessor over the reference tables for one pressure.
#[derive(Debug, Clone, Copy)]
pub struct OnDemand<'a> {
    tables: &'a KernelTableSet,
    weight: f64,
}

impl<'a> OnDemand<'a> {
    pub fn new(tables: &'a KernelTableSet, pressure: f64) -> Self {
        OnDemand {
            tables,
            weight: pressure_weight(pressure),
        }
    }
}

impl KernelSource for OnDemand<'_> {
    const COUNTS_EVALUATIONS: bool = true;

    #[inline]
    fn nkr(&self) -> usize {
        self.tables.nkr
    }

    #[inline]
    fn npairs(&self) -> usize {
        self.tables.npairs
    }

    #[inline(always)]
    fn kernel(&self, pair: usize, i: usize, j: usize) -> f64 {
        self.tables.eval_unchecked(pair, i, j, self.weight)
    }

    #[inline(always)]
    fn row<'s>(&'s self, pair: usize, i: usize, buf: &'s mut [f64]) -> &'s [f64] {
        let nkr = self.tables.nkr;
        let row = &mut buf[..nkr];
        let k750 = &self.tables.table_750(pair)[i * nkr..][..nkr];
        let k500 = &self.tables.table_500(pair)[i * nkr..][..nkr];
        for ((out, &a), &b) in row.iter_mut().zip(k750).zip(k500) {
            *out = interpolate(a, b, self.weight);
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bin() -> MassGrid {
        MassGrid::new(2, 1.0, 2.0).unwrap()
    }

    fn golovin_tables(scale: f64) -> KernelTableSet {
        KernelTableSet::build(
            &two_bin(),
            &PairRegistry::fsbm_default(),
            KernelFamily::Golovin { b: 1.0 },
            scale,
        )
        .unwrap()
    }

    #[test]
    fn default_registry_has_twenty_distinct_pairs() {
        let r = PairRegistry::fsbm_default();
        assert_eq!(r.len(), 20);
        assert!(r.index_of("cwls").is_some());
        assert!(r.index_of("cwlg").is_some());
        let cwls = &r.pairs()[r.index_of("cwls").unwrap()];
        assert_eq!(
            (cwls.a, cwls.b, cwls.dest),
            (Category::Liquid, Category::Snow, Category::Snow)
        );
    }

    #[test]
    fn registry_count_is_checked() {
        let mut pairs = PairRegistry::fsbm_default().pairs().to_vec();
        pairs.pop();
        assert!(matches!(
            PairRegistry::new(pairs.clone(), Some(20)),
            Err(Error::Config(_))
        ));
        assert_eq!(PairRegistry::new(pairs, None).unwrap().len(), 19);
    }

    #[test]
    fn registry_rejects_duplicates() {
        let mut pairs = PairRegistry::fsbm_default().pairs().to_vec();
        pairs[1].name = "cwll".into();
        assert!(PairRegistry::new(pairs, None).is_err());
        let mut pairs = PairRegistry::fsbm_default().pairs().to_vec();
        pairs[1].b = Category::Liquid;
        assert!(PairRegistry::new(pairs, None).is_err());
    }

    #[test]
    fn default_destinations() {
        use Category::*;
        assert_eq!(InteractionPair::default_dest(Liquid, Liquid), Liquid);
        assert_eq!(InteractionPair::default_dest(Liquid, Snow), Snow);
        assert_eq!(InteractionPair::default_dest(Graupel, Liquid), Graupel);
        assert_eq!(InteractionPair::default_dest(Snow, Graupel), Graupel);
        assert_eq!(InteractionPair::default_dest(Ice2, Ice2), Ice2);
    }

    #[test]
    fn constant_tables() {
        let t = KernelTableSet::build(
            &two_bin(),
            &PairRegistry::fsbm_default(),
            KernelFamily::Constant { c: 1.0 },
            1.0,
        )
        .unwrap();
        for p in 0..t.npairs() {
            assert!(t.table_750(p).iter().all(|&v| v == 1.0));
            assert!(t.table_500(p).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn golovin_tables_by_hand() {
        let t = golovin_tables(1.5);
        assert_eq!(t.table_750(0), &[2.0, 3.0, 3.0, 4.0]);
        assert_eq!(t.table_500(0), &[3.0, 4.5, 4.5, 6.0]);
    }

    #[test]
    fn negative_parameter_rejected() {
        let r = KernelTableSet::build(
            &two_bin(),
            &PairRegistry::fsbm_default(),
            KernelFamily::Golovin { b: -1.0 },
            1.5,
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn precompute_endpoints_and_midpoint() {
        let t = golovin_tables(1.5);
        let c = EvalCounter::new();
        let at750 = PrecomputedKernels::precompute_all(&t, 750.0, &c);
        let at500 = PrecomputedKernels::precompute_all(&t, 500.0, &c);
        let mid = PrecomputedKernels::precompute_all(&t, 625.0, &c);
        for p in 0..t.npairs() {
            assert_eq!(at750.table(p), t.table_750(p));
            assert_eq!(at500.table(p), t.table_500(p));
        }
        assert_eq!(mid.get(0, 0, 0), 2.5);
        assert_eq!(c.get(), 3 * 20 * 4);
    }

    #[test]
    fn kernel_at_examples() {
        let t = golovin_tables(1.5);
        let c = EvalCounter::new();
        let cwls = PairRegistry::fsbm_default().index_of("cwls").unwrap();
        assert_eq!(t.kernel_at(cwls, 0, 0, 750.0, &c).unwrap(), t.table_750(cwls)[0]);
        assert_eq!(t.kernel_at(cwls, 0, 0, 300.0, &c).unwrap(), t.table_500(cwls)[0]);
        assert_eq!(t.kernel_at(0, 1, 0, 625.0, &c).unwrap(), 3.75);
        assert_eq!(c.get(), 3);
        assert_eq!(
            t.kernel_at(0, 2, 0, 625.0, &c),
            Err(Error::IndexOutOfRange { i: 2, j: 0, nkr: 2 })
        );
        assert_eq!(c.get(), 3);
    }

    #[test]
    fn self_pairs_symmetric_for_every_family() {
        let grid = MassGrid::with_defaults(33).unwrap();
        let reg = PairRegistry::fsbm_default();
        for family in [
            KernelFamily::Constant { c: 2.0 },
            KernelFamily::Golovin { b: 1.5 },
            KernelFamily::Product { c: 1e10 },
            KernelFamily::Hydrodynamic { c: 3.0 },
        ] {
            let t = KernelTableSet::build(&grid, &reg, family, 1.5).unwrap();
            let c = EvalCounter::new();
            for (p, pair) in reg.pairs().iter().enumerate() {
                if !pair.is_self_pair() {
                    continue;
                }
                for pressure in [300.0, 625.0, 900.0] {
                    for i in 0..33 {
                        for j in 0..33 {
                            let a = t.kernel_at(p, i, j, pressure, &c).unwrap();
                            let b = t.kernel_at(p, j, i, pressure, &c).unwrap();
                            assert_eq!(a.to_bits(), b.to_bits());
                            assert!(a >= 0.0 && a.is_finite());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rows_match_single_lookups() {
        let grid = MassGrid::with_defaults(9).unwrap();
        let reg = PairRegistry::fsbm_default();
        let t = KernelTableSet::build(&grid, &reg, KernelFamily::Hydrodynamic { c: 2.0 }, 1.5).unwrap();
        let pre = PrecomputedKernels::precompute_all(&t, 610.0, &EvalCounter::new());
        let od = OnDemand::new(&t, 610.0);
        let mut buf = vec![0.0; 9];
        for pair in 0..reg.len() {
            for i in 0..9 {
                let a: Vec<u64> = od.row(pair, i, &mut buf).iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = pre.row(pair, i, &mut []).iter().map(|v| v.to_bits()).collect();
                let c: Vec<u64> = (0..9).map(|j| od.kernel(pair, i, j).to_bits()).collect();
                assert_eq!(a, c);
                assert_eq!(b, c);
            }
        }
    }
}
