//! Threaded fissioned step and the per-variant run loop.

use std::thread;
use std::time::Instant;

use sbm_proxy_core::coalescence::{ArenaChunk, ICEMAX};
use sbm_proxy_core::driver::{
    check_arena, check_mask, chunk_sizes, coal_chunk, decompose, fission_predicates, fused_step, stub_chunk, Clock,
    ExecPlan, GridState, Model, PredicateMask, StepStats, StubConfig,
};
use sbm_proxy_core::perf::Counters;
use sbm_proxy_core::{CoalConfig, Error, EvalCounter, ScratchArena, ScratchStrategy};

use crate::error::{AppError, Result};
use crate::variant::Variant;

/// Wall clock backed by [`Instant`].
#[derive(Debug, Clone, Copy)]
pub struct StdClock {
    origin: Instant,
}

impl StdClock {
    pub fn new() -> Self {
        StdClock { origin: Instant::now() }
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

fn split_by<'a, T>(mut s: &'a [T], sizes: &[usize], width: usize) -> Vec<&'a [T]> {
    sizes
        .iter()
        .map(|&n| {
            let (head, tail) = s.split_at(n * width);
            s = tail;
            head
        })
        .collect()
}

fn split_by_mut<'a, T>(mut s: &'a mut [T], sizes: &[usize], width: usize) -> Vec<&'a mut [T]> {
    sizes
        .iter()
        .map(|&n| {
            let (head, tail) = std::mem::take(&mut s).split_at_mut(n * width);
            s = tail;
            head
        })
        .collect()
}

/// Runs `f` on every item, one scoped thread per item beyond the first, and
/// returns the results in item order.
fn run_all<I, R, F>(items: Vec<I>, f: F) -> Vec<R>
where
    I: Send,
    R: Send,
    F: Fn(I) -> R + Sync,
{
    let mut items = items.into_iter();
    let Some(first) = items.next() else {
        return Vec::new();
    };
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = items.map(|item| s.spawn(move || f(item))).collect();
        let mut out = Vec::with_capacity(handles.len() + 1);
        out.push(f(first));
        for h in handles {
            match h.join() {
                Ok(r) => out.push(r),
                Err(panic) => std::panic::resume_unwind(panic),
            }
        }
        out
    })
}

/// One fissioned step: stubs for every point behind the outer gate, a
/// barrier, then coalescence at the masked points, each phase statically
/// chunked over `plan.workers()` threads.
///
/// If several chunks fail, the error of the lowest chunk is returned, which
/// is also the first failing point in flat order.
#[allow(clippy::too_many_arguments)]
pub fn fissioned_step(
    state: &mut GridState,
    mask: &PredicateMask,
    model: &Model,
    cfg: &CoalConfig,
    plan: &ExecPlan,
    stubs: &StubConfig,
    arena: Option<&mut ScratchArena>,
    counter: &EvalCounter,
    clock: &dyn Clock,
) -> Result<StepStats, Error> {
    plan.validate()?;
    cfg.validate()?;
    check_mask(state, mask)?;
    if let Some(a) = arena.as_deref() {
        check_arena(a, state)?;
    }
    let domain = *state.domain();
    let sizes = chunk_sizes(&domain, plan.collapse, plan.workers());
    let point_len = state.point_len();
    let (t_old, pressure, bins) = state.split_for_step();
    let mut stats = StepStats::default();

    let t0 = clock.now();
    let phase1: Vec<_> = split_by(t_old, &sizes, 1)
        .into_iter()
        .zip(split_by(pressure, &sizes, 1))
        .zip(split_by(bins, &sizes, point_len))
        .filter(|((t, _), _)| !t.is_empty())
        .collect();
    for c in run_all(phase1, |((t, p), b)| stub_chunk(t, p, b, point_len, stubs)) {
        stats.stub_counters.merge(&c);
    }
    let t1 = clock.now();
    stats.stub_seconds = t1 - t0;

    let scratch: Vec<Option<ArenaChunk<'_>>> = match (cfg.scratch_strategy, arena) {
        (ScratchStrategy::Arena, Some(a)) => a.split(&sizes)?.into_iter().map(Some).collect(),
        (ScratchStrategy::Arena, None) => {
            return Err(Error::Config("arena scratch strategy needs an arena".to_string()))
        }
        (ScratchStrategy::Automatic, _) => sizes.iter().map(|_| None).collect(),
    };
    let mut first = 0;
    let firsts: Vec<usize> = sizes
        .iter()
        .map(|&n| {
            let f = first;
            first += n;
            f
        })
        .collect();
    let phase2: Vec<_> = firsts
        .into_iter()
        .zip(split_by(mask.as_slice(), &sizes, 1))
        .zip(split_by(pressure, &sizes, 1))
        .zip(split_by_mut(bins, &sizes, point_len))
        .zip(scratch)
        .filter(|((((_, m), _), _), _)| !m.is_empty())
        .collect();
    let results = run_all(phase2, |((((first, m), p), b), a)| {
        coal_chunk(model, &domain, first, m, p, b, cfg, a, counter)
    });
    for r in results {
        stats.coal_counters.merge(&r?);
    }
    stats.coal_seconds = clock.now() - t1;
    Ok(stats)
}

/// Time and work knobs shared by every variant of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub dt: f64,
    pub substeps: usize,
    pub steps: usize,
    pub threads: usize,
    pub stubs: StubConfig,
    pub patches: usize,
    pub tiles_per_patch: usize,
}

/// Outcome of stepping one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantRun {
    pub variant: Variant,
    pub threads: usize,
    pub steps: usize,
    pub stats: StepStats,
    /// Wall time inside the step calls, mask included.
    pub step_seconds: f64,
    /// Wall time of the whole run: scratch setup plus all steps.
    pub overall_seconds: f64,
    pub mask_true: usize,
    pub npoints: usize,
    /// Value of the shared evaluation counter at the end of the run.
    pub counted_evals: u64,
}

impl VariantRun {
    pub fn counters(&self) -> Counters {
        let mut c = self.stats.stub_counters;
        c.merge(&self.stats.coal_counters);
        c
    }
}

/// Steps `state` `settings.steps` times with `variant`.
pub fn run_variant(
    state: &mut GridState,
    model: &Model,
    variant: Variant,
    settings: &RunSettings,
    clock: &dyn Clock,
) -> Result<VariantRun> {
    let start = clock.now();
    let plan = variant.plan(settings.threads);
    plan.validate().map_err(AppError::Config)?;
    let cfg = plan
        .coal_config(settings.dt, settings.substeps)
        .map_err(AppError::Config)?;
    let (ni, nk, nj) = state.domain().extents();
    let mut arena = match plan.scratch_strategy {
        ScratchStrategy::Arena => Some(ScratchArena::allocate(ni, nk, nj, state.nkr(), ICEMAX)?),
        ScratchStrategy::Automatic => None,
    };
    let tiles = decompose(state.domain(), settings.patches, settings.tiles_per_patch).map_err(AppError::Config)?;
    let counter = EvalCounter::new();
    let mut stats = StepStats::default();
    let mut step_seconds = 0.0;
    let mut mask_true = fission_predicates(state).count_true();

    for step in 1..=settings.steps {
        let t0 = clock.now();
        let s = if variant.is_fused() {
            fused_step(
                state,
                model,
                &cfg,
                &plan,
                Some(&tiles),
                &settings.stubs,
                arena.as_mut(),
                &counter,
                clock,
            )
        } else {
            let mask = fission_predicates(state);
            mask_true = mask.count_true();
            let mask_seconds = clock.now() - t0;
            fissioned_step(
                state,
                &mask,
                model,
                &cfg,
                &plan,
                &settings.stubs,
                arena.as_mut(),
                &counter,
                clock,
            )
            .map(|s| StepStats { mask_seconds, ..s })
        }
        .map_err(|source| AppError::AtStep { step, source })?;
        step_seconds += clock.now() - t0;
        stats.accumulate(&s);
    }

    Ok(VariantRun {
        variant,
        threads: plan.workers(),
        steps: settings.steps,
        stats,
        step_seconds,
        overall_seconds: clock.now() - start,
        mask_true,
        npoints: state.npoints(),
        counted_evals: counter.get(),
    })
}
