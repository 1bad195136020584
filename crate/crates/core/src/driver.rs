//! Grid state and the main grid-point loops.
//!
//! Grid points are addressed by 1-based `(i, k, j)` triples inside the domain
//! ranges `ids:ide`, `kds:kde`, `jds:jde`. Storage is flattened with `i`
//! fastest, then `k`, then `j`, so point `p = di + ni * (dk + nk * dj)`. Each
//! point owns `NUM_CATEGORIES * nkr` consecutive bin densities.
//!
//! The fused loop ([`fused_step`]) runs everything point by point behind the
//! two temperature gates. The fissioned form splits it into a stub phase and a
//! coalescence phase driven by a [`PredicateMask`]; this module supplies the
//! per-chunk work ([`coal_chunk`], [`stub_chunk`]) and the static chunking
//! ([`chunk_sizes`]), and the companion crate runs the chunks on threads.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::hint::black_box;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bins::{BinDistribution, MassGrid};
use crate::category::{Category, NUM_CATEGORIES};
use crate::coalescence::{ArenaChunk, CoalConfig, Coalescer, KernelStrategy, ScratchArena, ScratchStrategy};
use crate::error::{Error, Result};
use crate::kernels::{EvalCounter, KernelTableSet, OnDemand, PrecomputedKernels};
use crate::perf::Counters;

/// Outer gate: microphysics runs only above this temperature (K).
pub const T_MICROPHYSICS: f64 = 193.15;
/// Collision gate (K).
pub const T_COALESCENCE: f64 = 223.15;

/// Inclusive 1-based index range `start:end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexRange {
    pub start: i64,
    pub end: i64,
}

impl IndexRange {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end < start {
            return Err(Error::domain(format!("empty range {start}:{end}")));
        }
        Ok(IndexRange { start, end })
    }

    /// `1:n`.
    pub fn one_to(n: usize) -> Result<Self> {
        Self::new(1, n as i64)
    }

    #[inline]
    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, v: i64) -> bool {
        self.start <= v && v <= self.end
    }

    /// Near-equal contiguous split into `parts` ranges; the first
    /// `len % parts` ranges get one extra index.
    fn split(&self, parts: usize) -> Result<Vec<IndexRange>> {
        let n = self.len();
        if parts == 0 || parts > n {
            return Err(Error::domain(format!(
                "cannot split {}:{} into {parts} nonempty parts",
                self.start, self.end
            )));
        }
        let (base, extra) = (n / parts, n % parts);
        let mut start = self.start;
        Ok((0..parts)
            .map(|q| {
                let len = base + usize::from(q < extra);
                let r = IndexRange {
                    start,
                    end: start + len as i64 - 1,
                };
                start += len as i64;
                r
            })
            .collect())
    }
}

/// Domain ranges `ids:ide`, `kds:kde`, `jds:jde`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Domain {
    pub i: IndexRange,
    pub k: IndexRange,
    pub j: IndexRange,
}

impl Domain {
    pub fn new(ni: usize, nk: usize, nj: usize) -> Result<Self> {
        Ok(Domain {
            i: IndexRange::one_to(ni)?,
            k: IndexRange::one_to(nk)?,
            j: IndexRange::one_to(nj)?,
        })
    }

    pub fn extents(&self) -> (usize, usize, usize) {
        (self.i.len(), self.k.len(), self.j.len())
    }

    #[inline]
    pub fn npoints(&self) -> usize {
        self.i.len() * self.k.len() * self.j.len()
    }

    /// Flat index of `(i, k, j)`.
    #[inline]
    pub fn index(&self, i: i64, k: i64, j: i64) -> usize {
        let (ni, nk, _) = self.extents();
        (i - self.i.start) as usize + ni * ((k - self.k.start) as usize + nk * (j - self.j.start) as usize)
    }

    /// `(i, k, j)` of flat index `p`.
    #[inline]
    pub fn coords(&self, p: usize) -> (i64, i64, i64) {
        let (ni, nk, _) = self.extents();
        let i = p % ni;
        let k = (p / ni) % nk;
        let j = p / (ni * nk);
        (
            self.i.start + i as i64,
            self.k.start + k as i64,
            self.j.start + j as i64,
        )
    }
}

/// Temperatures, pressures and bin densities of every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    domain: Domain,
    grid: MassGrid,
    /// `T_OLD(i,k,j)` in K.
    t_old: Vec<f64>,
    /// hPa.
    pressure: Vec<f64>,
    bins: Vec<f64>,
}

impl GridState {
    /// Validates and assembles a state. `bins` is point-major, then category
    /// in [`Category::ALL`] order, then bin.
    pub fn new(domain: Domain, grid: MassGrid, t_old: Vec<f64>, pressure: Vec<f64>, bins: Vec<f64>) -> Result<Self> {
        let n = domain.npoints();
        for (what, len, expected) in [
            ("T_OLD", t_old.len(), n),
            ("pressure", pressure.len(), n),
            ("bins", bins.len(), n * NUM_CATEGORIES * grid.nkr()),
        ] {
            if len != expected {
                return Err(Error::ShapeMismatch(format!(
                    "{what} has {len} values, expected {expected}"
                )));
            }
        }
        for (what, field) in [("T_OLD", &t_old), ("pressure", &pressure)] {
            if let Some(bad) = field.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::domain(format!("{what} must be finite and > 0, got {bad}")));
            }
        }
        if let Some(bad) = bins.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!(
                "bin densities must be finite and >= 0, got {bad}"
            )));
        }
        Ok(GridState {
            domain,
            grid,
            t_old,
            pressure,
            bins,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn grid(&self) -> &MassGrid {
        &self.grid
    }

    pub fn nkr(&self) -> usize {
        self.grid.nkr()
    }

    pub fn npoints(&self) -> usize {
        self.domain.npoints()
    }

    pub fn t_old(&self) -> &[f64] {
        &self.t_old
    }

    pub fn pressure(&self) -> &[f64] {
        &self.pressure
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    /// Values per grid point.
    pub fn point_len(&self) -> usize {
        NUM_CATEGORIES * self.grid.nkr()
    }

    pub fn point_bins(&self, p: usize) -> &[f64] {
        let len = self.point_len();
        &self.bins[p * len..][..len]
    }

    pub fn point_bins_mut(&mut self, p: usize) -> &mut [f64] {
        let len = self.point_len();
        &mut self.bins[p * len..][..len]
    }

    /// Bins of one category at one point.
    pub fn distribution(&self, p: usize, cat: Category) -> &[f64] {
        let nkr = self.nkr();
        &self.point_bins(p)[cat.index() * nkr..][..nkr]
    }

    pub fn set_distribution(&mut self, p: usize, cat: Category, dist: &BinDistribution) -> Result<()> {
        let nkr = self.nkr();
        if dist.nkr() != nkr {
            return Err(Error::DimensionMismatch {
                expected: nkr,
                found: dist.nkr(),
            });
        }
        self.point_bins_mut(p)[cat.index() * nkr..][..nkr].copy_from_slice(dist.as_slice());
        Ok(())
    }

    pub fn set_temperature(&mut self, p: usize, t: f64) -> Result<()> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::domain(format!("T_OLD must be finite and > 0, got {t}")));
        }
        self.t_old[p] = t;
        Ok(())
    }

    /// Mutable views needed by the executors: pressures and temperatures
    /// read-only, bins writable.
    pub fn split_for_step(&mut self) -> (&[f64], &[f64], &mut [f64]) {
        (&self.t_old, &self.pressure, &mut self.bins)
    }

    /// Σ over points and categories of Σ n·x.
    pub fn total_mass(&self) -> f64 {
        let x = self.grid.masses();
        self.bins
            .chunks_exact(self.nkr())
            .map(|d| d.iter().zip(x).map(|(n, x)| n * x).sum::<f64>())
            .sum()
    }

    pub fn total_number(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// Bitwise equality of every field.
    pub fn bitwise_eq(&self, other: &GridState) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.domain == other.domain
            && same(self.grid.masses(), other.grid.masses())
            && same(&self.t_old, &other.t_old)
            && same(&self.pressure, &other.pressure)
            && same(&self.bins, &other.bins)
    }
}

/// A rectangular `(i, j)` region: `ims:ime, jms:jme` for a patch,
/// `its:ite, jts:jte` for a tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub i: IndexRange,
    pub j: IndexRange,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub bounds: Rect,
    pub tiles: Vec<Rect>,
}

/// Two-level horizontal decomposition: patches split the domain in `j`, tiles
/// split each patch in `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchTilePlan {
    pub patches: Vec<Patch>,
}

impl PatchTilePlan {
    pub fn tiles(&self) -> impl Iterator<Item = &Rect> {
        self.patches.iter().flat_map(|p| p.tiles.iter())
    }
}

pub fn decompose(domain: &Domain, n_patches: usize, n_tiles_per_patch: usize) -> Result<PatchTilePlan> {
    let patches = domain
        .j
        .split(n_patches)?
        .into_iter()
        .map(|j| {
            let tiles = domain
                .i
                .split(n_tiles_per_patch)?
                .into_iter()
                .map(|i| Rect { i, j })
                .collect();
            Ok(Patch {
                bounds: Rect { i: domain.i, j },
                tiles,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PatchTilePlan { patches })
}

/// Per-point branch decisions of the fused loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateMask {
    call_coal: Vec<bool>,
}

impl PredicateMask {
    pub fn from_vec(call_coal: Vec<bool>) -> Self {
        PredicateMask { call_coal }
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.call_coal
    }

    pub fn len(&self) -> usize {
        self.call_coal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.call_coal.is_empty()
    }

    pub fn count_true(&self) -> usize {
        self.call_coal.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, p: usize) -> bool {
        self.call_coal[p]
    }
}

#[inline]
pub fn runs_microphysics(t: f64) -> bool {
    t > T_MICROPHYSICS
}

#[inline]
pub fn calls_coalescence(t: f64) -> bool {
    runs_microphysics(t) && t > T_COALESCENCE
}

pub fn fission_predicates(state: &GridState) -> PredicateMask {
    PredicateMask {
        call_coal: state.t_old.iter().map(|&t| calls_coalescence(t)).collect(),
    }
}

/// Checks that `mask` is exactly the mask of `state`.
pub fn check_mask(state: &GridState, mask: &PredicateMask) -> Result<()> {
    if mask.len() != state.npoints() {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} points, state has {}",
            mask.len(),
            state.npoints()
        )));
    }
    match state
        .t_old
        .iter()
        .zip(&mask.call_coal)
        .position(|(&t, &m)| calls_coalescence(t) != m)
    {
        None => Ok(()),
        Some(p) => {
            let (i, k, j) = state.domain.coords(p);
            Err(Error::Config(format!(
                "mask disagrees with T_OLD at (i={i}, k={k}, j={j})"
            )))
        }
    }
}

/// Initial distribution of one populated category in cloudy points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudSpecies {
    pub category: Category,
    /// Mean number density (m⁻³); each point draws `n_total·u`, `u ∈ [0.5, 1.5)`.
    pub n_total: f64,
    pub xbar: f64,
}

/// Liquid, snow and graupel: six of the twenty default pairs are active.
pub fn default_cloud_species() -> Vec<CloudSpecies> {
    vec![
        CloudSpecies {
            category: Category::Liquid,
            n_total: 1e8,
            xbar: 1e-11,
        },
        CloudSpecies {
            category: Category::Snow,
            n_total: 1e3,
            xbar: 1e-10,
        },
        CloudSpecies {
            category: Category::Graupel,
            n_total: 1e2,
            xbar: 1e-9,
        },
    ]
}

/// Pressure at level `k`: linear from 900 hPa at `kds` to 400 hPa at `kde`.
pub fn level_pressure(domain: &Domain, k: i64) -> f64 {
    let nk = domain.k.len();
    if nk == 1 {
        return 900.0;
    }
    900.0 - 500.0 * (k - domain.k.start) as f64 / (nk - 1) as f64
}

/// Deterministic synthetic case with exactly `round(cloud_fraction · N)`
/// cloudy points (`T_OLD > 223.15`), placed by a seeded shuffle.
///
/// Cloudy points draw `T_OLD ∈ [224, 300)` and get every species in `species`.
/// The remaining points are split between the stub-only band
/// `[194, 223)` and the inactive band `[150, 193)`, with empty bins.
pub fn make_synthetic_case(
    domain: Domain,
    grid: MassGrid,
    cloud_fraction: f64,
    seed: u64,
    species: &[CloudSpecies],
) -> Result<GridState> {
    if !(0.0..=1.0).contains(&cloud_fraction) {
        return Err(Error::domain(format!(
            "cloud_fraction must lie in [0, 1], got {cloud_fraction}"
        )));
    }
    let n = domain.npoints();
    let nkr = grid.nkr();
    let n_cloudy = libm::round(cloud_fraction * n as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cloudy = vec![false; n];
    for &p in &order[..n_cloudy] {
        cloudy[p] = true;
    }

    let pressure = (0..n).map(|p| level_pressure(&domain, domain.coords(p).1)).collect();
    let mut t_old = Vec::with_capacity(n);
    let mut bins = vec![0.0; n * NUM_CATEGORIES * nkr];
    for (p, point) in bins.chunks_exact_mut(NUM_CATEGORIES * nkr).enumerate() {
        if cloudy[p] {
            t_old.push(rng.random_range(224.0..300.0));
            for s in species {
                let scale: f64 = rng.random_range(0.5..1.5);
                let d = BinDistribution::exponential(&grid, s.n_total * scale, s.xbar)?;
                point[s.category.index() * nkr..][..nkr].copy_from_slice(d.as_slice());
            }
        } else if rng.random_bool(0.5) {
            t_old.push(rng.random_range(194.0..223.0));
        } else {
            t_old.push(rng.random_range(150.0..193.0));
        }
    }
    GridState::new(domain, grid, t_old, pressure, bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecMode {
    Serial,
    Parallel,
}

/// How a step is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecPlan {
    pub mode: ExecMode,
    /// 2: parallel over `(j, k)` with a serial inner `i` loop.
    /// 3: parallel over the flattened `(j, k, i)` space.
    pub collapse: u8,
    pub threads: usize,
    pub scratch_strategy: ScratchStrategy,
    pub kernel_strategy: KernelStrategy,
}

impl ExecPlan {
    pub fn serial(kernel_strategy: KernelStrategy, scratch_strategy: ScratchStrategy) -> Self {
        ExecPlan {
            mode: ExecMode::Serial,
            collapse: 2,
            threads: 1,
            scratch_strategy,
            kernel_strategy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.collapse, 2 | 3) {
            return Err(Error::Config(format!("collapse must be 2 or 3, got {}", self.collapse)));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".to_string()));
        }
        if self.collapse == 3 && self.scratch_strategy == ScratchStrategy::Automatic {
            return Err(Error::Config(
                "collapse(3) needs the arena scratch strategy; automatic scratch overflows the per-thread stack"
                    .to_string(),
            ));
        }
        Ok(())
    }

    /// Worker count actually used: one for serial plans.
    pub fn workers(&self) -> usize {
        match self.mode {
            ExecMode::Serial => 1,
            ExecMode::Parallel => self.threads,
        }
    }

    pub fn coal_config(&self, dt: f64, substeps: usize) -> Result<CoalConfig> {
        Ok(CoalConfig::new(dt, substeps)?.with_strategies(self.kernel_strategy, self.scratch_strategy))
    }
}

/// Static contiguous chunking of the point space among `workers`.
///
/// With collapse 2 the schedulable unit is a `(j, k)` column of `ni` points;
/// with collapse 3 it is a single point. Units are dealt out in near-equal
/// contiguous runs and never split.
pub fn chunk_sizes(domain: &Domain, collapse: u8, workers: usize) -> Vec<usize> {
    let (ni, nk, nj) = domain.extents();
    let (units, unit_len) = match collapse {
        3 => (ni * nk * nj, 1),
        _ => (nk * nj, ni),
    };
    let workers = workers.max(1);
    let (base, extra) = (units / workers, units % workers);
    (0..workers)
        .map(|w| (base + usize::from(w < extra)) * unit_len)
        .collect()
}

/// Immutable model shared by all grid points: solver and reference tables.
#[derive(Debug, Clone)]
pub struct Model {
    pub coalescer: Coalescer,
    pub tables: KernelTableSet,
}

impl Model {
    pub fn new(coalescer: Coalescer, tables: KernelTableSet) -> Result<Self> {
        if tables.nkr() != coalescer.nkr() || tables.npairs() != coalescer.registry().len() {
            return Err(Error::ShapeMismatch(format!(
                "tables are {} pairs x nkr {}, solver expects {} x {}",
                tables.npairs(),
                tables.nkr(),
                coalescer.registry().len(),
                coalescer.nkr()
            )));
        }
        Ok(Model { coalescer, tables })
    }
}

/// Cost knobs of the synthetic nucleation and condensation calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubConfig {
    /// Iterations of each stub per call.
    pub iterations: u32,
}

impl Default for StubConfig {
    /// About a fifth of a 33-bin coalescence call with six active pairs.
    fn default() -> Self {
        StubConfig { iterations: 800 }
    }
}

/// Deterministic arithmetic spin standing in for a microphysics process that
/// is not modelled. Reads the point, writes nothing, returns a checksum.
fn stub_spin(t: f64, p: f64, bins: &[f64], iterations: u32, salt: f64) -> f64 {
    let mut acc = salt + bins.first().copied().unwrap_or(0.0) * 1e-12;
    let drive = t * 1e-3 + p * 1e-6;
    for _ in 0..iterations {
        acc = acc * 0.999_999 + drive;
        acc = black_box(acc);
    }
    acc
}

/// Nucleation and condensation stubs for one point.
#[inline]
pub fn run_stubs(t: f64, p: f64, bins: &[f64], stubs: &StubConfig) -> u64 {
    black_box(stub_spin(t, p, bins, stubs.iterations, 1.0));
    black_box(stub_spin(t, p, bins, stubs.iterations, 2.0));
    2 * u64::from(stubs.iterations)
}

/// Monotonic clock in seconds from an arbitrary origin.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Clock that never advances, for timing-free runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Timings and counters of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub mask_seconds: f64,
    pub stub_seconds: f64,
    pub coal_seconds: f64,
    pub stub_counters: Counters,
    pub coal_counters: Counters,
}

impl StepStats {
    pub fn accumulate(&mut self, other: &StepStats) {
        self.mask_seconds += other.mask_seconds;
        self.stub_seconds += other.stub_seconds;
        self.coal_seconds += other.coal_seconds;
        self.stub_counters.merge(&other.stub_counters);
        self.coal_counters.merge(&other.coal_counters);
    }
}

/// Per-worker state for the coalescence calls: the precomputed "global"
/// arrays, reused from point to point.
#[derive(Debug)]
pub struct Worker {
    precomputed: Option<PrecomputedKernels>,
}

impl Worker {
    pub fn new(model: &Model, strategy: KernelStrategy) -> Self {
        Worker {
            precomputed: (strategy == KernelStrategy::Precomputed)
                .then(|| PrecomputedKernels::for_tables(&model.tables)),
        }
    }

    /// Coalescence at one grid point with the configured strategies.
    pub fn coal_point(
        &mut self,
        model: &Model,
        bins: &mut [f64],
        pressure: f64,
        cfg: &CoalConfig,
        scratch: Option<crate::coalescence::PointScratch<'_>>,
        counter: &EvalCounter,
    ) -> Result<Counters> {
        let mut c = Counters {
            coal_points: 1,
            ..Default::default()
        };
        match cfg.kernel_strategy {
            KernelStrategy::Precomputed => {
                let pre = self
                    .precomputed
                    .get_or_insert_with(|| PrecomputedKernels::for_tables(&model.tables));
                pre.fill(&model.tables, pressure, counter);
                c.precomputed_evals = (pre.npairs() * pre.nkr() * pre.nkr()) as u64;
                let work = model.coalescer.step(bins, &*pre, cfg, scratch, counter)?;
                c.pair_updates = work.pair_updates;
                c.precomputed_lookups = work.pair_updates;
            }
            KernelStrategy::OnDemand => {
                let src = OnDemand::new(&model.tables, pressure);
                let work = model.coalescer.step(bins, &src, cfg, scratch, counter)?;
                c.pair_updates = work.pair_updates;
                c.kernel_evals = work.kernel_evals;
            }
        }
        Ok(c)
    }
}

fn at_point(domain: &Domain, p: usize, e: Error) -> Error {
    let (i, k, j) = domain.coords(p);
    Error::AtPoint {
        i,
        k,
        j,
        source: Box::new(e),
    }
}

/// One step of the fused loop: for every tile, loop `j, k, i`; behind the
/// outer gate run the nucleation and condensation stubs, behind the collision
/// gate run coalescence. Serial by construction.
#[allow(clippy::too_many_arguments)]
pub fn fused_step(
    state: &mut GridState,
    model: &Model,
    cfg: &CoalConfig,
    plan: &ExecPlan,
    decomposition: Option<&PatchTilePlan>,
    stubs: &StubConfig,
    arena: Option<&mut ScratchArena>,
    counter: &EvalCounter,
    clock: &dyn Clock,
) -> Result<StepStats> {
    plan.validate()?;
    if plan.mode != ExecMode::Serial {
        return Err(Error::Config(
            "the fused loop nests the collision call inside branches and runs serially only".to_string(),
        ));
    }
    cfg.validate()?;
    if cfg.scratch_strategy == ScratchStrategy::Arena {
        let a = arena
            .as_deref()
            .ok_or_else(|| Error::Config("arena scratch strategy needs an arena".to_string()))?;
        check_arena(a, state)?;
    }
    let whole;
    let decomposition = match decomposition {
        Some(d) => d,
        None => {
            whole = decompose(state.domain(), 1, 1)?;
            &whole
        }
    };
    let domain = *state.domain();
    let mut worker = Worker::new(model, cfg.kernel_strategy);
    let mut chunk = arena.map(ScratchArena::as_chunk);
    let mut stats = StepStats::default();
    let point_len = state.point_len();
    let (t_old, pressure, bins) = state.split_for_step();

    for tile in decomposition.tiles() {
        for j in tile.j.start..=tile.j.end {
            for k in domain.k.start..=domain.k.end {
                for i in tile.i.start..=tile.i.end {
                    let p = domain.index(i, k, j);
                    let t = t_old[p];
                    if !runs_microphysics(t) {
                        continue;
                    }
                    let point = &mut bins[p * point_len..][..point_len];
                    let t0 = clock.now();
                    stats.stub_counters.stub_iterations += run_stubs(t, pressure[p], point, stubs);
                    let t1 = clock.now();
                    stats.stub_seconds += t1 - t0;
                    if calls_coalescence(t) {
                        let scratch = chunk.as_mut().map(|c| c.point(p));
                        let c = worker
                            .coal_point(model, point, pressure[p], cfg, scratch, counter)
                            .map_err(|e| at_point(&domain, p, e))?;
                        stats.coal_counters.merge(&c);
                        stats.coal_seconds += clock.now() - t1;
                    }
                }
            }
        }
    }
    Ok(stats)
}

/// Arena must cover every grid point of `state` with matching bin count.
pub fn check_arena(arena: &ScratchArena, state: &GridState) -> Result<()> {
    if arena.extents() != state.domain().extents() || arena.nkr() != state.nkr() {
        return Err(Error::ShapeMismatch(format!(
            "arena is {:?} x nkr {}, state is {:?} x nkr {}",
            arena.extents(),
            arena.nkr(),
            state.domain().extents(),
            state.nkr()
        )));
    }
    Ok(())
}

/// Phase 1 of the fissioned step for points `first..first + t_old.len()`.
pub fn stub_chunk(t_old: &[f64], pressure: &[f64], bins: &[f64], point_len: usize, stubs: &StubConfig) -> Counters {
    let mut c = Counters::default();
    for (p, (&t, &pr)) in t_old.iter().zip(pressure).enumerate() {
        if runs_microphysics(t) {
            c.stub_iterations += run_stubs(t, pr, &bins[p * point_len..][..point_len], stubs);
        }
    }
    c
}

/// Phase 2 of the fissioned step over one contiguous chunk of points
/// starting at flat index `first`. `bins`, `mask` and `pressure` are the
/// chunk's own slices; `arena` must be the matching arena chunk when the
/// arena strategy is used.
#[allow(clippy::too_many_arguments)]
pub fn coal_chunk(
    model: &Model,
    domain: &Domain,
    first: usize,
    mask: &[bool],
    pressure: &[f64],
    bins: &mut [f64],
    cfg: &CoalConfig,
    mut arena: Option<ArenaChunk<'_>>,
    counter: &EvalCounter,
) -> Result<Counters> {
    let point_len = model.coalescer.point_len();
    let mut worker = Worker::new(model, cfg.kernel_strategy);
    let mut counters = Counters::default();
    for (local, point) in bins.chunks_exact_mut(point_len).enumerate() {
        if !mask[local] {
            continue;
        }
        let scratch = match (cfg.scratch_strategy, arena.as_mut()) {
            (ScratchStrategy::Arena, Some(a)) => Some(a.point(local)),
            (ScratchStrategy::Arena, None) => {
                return Err(Error::Config("arena scratch strategy needs an arena".to_string()))
            }
            (ScratchStrategy::Automatic, _) => None,
        };
        let c = worker
            .coal_point(model, point, pressure[local], cfg, scratch, counter)
            .map_err(|e| at_point(domain, first + local, e))?;
        counters.merge(&c);
    }
    Ok(counters)
}
