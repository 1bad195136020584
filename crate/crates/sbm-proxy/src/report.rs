//! Machine-readable run reports and their text renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use sbm_proxy_core::perf::{
    build_ledger, render_ledgers, Counters, MachineModel, PerfReport, Precision, RooflinePoint, SpeedupLedger,
};

use crate::config::RunConfig;
use crate::error::Result;
use crate::exec::VariantRun;

pub const SCHEMA: &str = "sbmproxy.run-report/v1";

/// Ledger scopes, narrowest first.
pub const SCOPES: [&str; 3] = ["coal loop", "fsbm-analog step", "overall"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Coalescence phase only.
    pub coal_loop: f64,
    /// Whole microphysics step: mask, stubs and coalescence.
    pub fsbm_step: f64,
    /// Scratch setup plus every step.
    pub overall: f64,
}

impl Timings {
    pub fn of(run: &VariantRun) -> Self {
        Timings {
            coal_loop: run.stats.coal_seconds,
            fsbm_step: run.step_seconds,
            overall: run.overall_seconds,
        }
    }

    pub fn scope(&self, n: usize) -> f64 {
        [self.coal_loop, self.fsbm_step, self.overall][n]
    }

    /// Elementwise minimum.
    pub fn min(self, other: Timings) -> Timings {
        Timings {
            coal_loop: self.coal_loop.min(other.coal_loop),
            fsbm_step: self.fsbm_step.min(other.fsbm_step),
            overall: self.overall.min(other.overall),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterReport {
    pub kernel_evals: u64,
    pub precomputed_evals: u64,
    pub pair_updates: u64,
    pub precomputed_lookups: u64,
    pub stub_iterations: u64,
    pub coal_points: u64,
}

impl From<Counters> for CounterReport {
    fn from(c: Counters) -> Self {
        CounterReport {
            kernel_evals: c.kernel_evals,
            precomputed_evals: c.precomputed_evals,
            pair_updates: c.pair_updates,
            precomputed_lookups: c.precomputed_lookups,
            stub_iterations: c.stub_iterations,
            coal_points: c.coal_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflineReport {
    pub arithmetic_intensity: f64,
    pub achieved_flops: f64,
    pub bound_flops: f64,
    pub limiter: String,
}

impl From<RooflinePoint> for RooflineReport {
    fn from(p: RooflinePoint) -> Self {
        RooflineReport {
            arithmetic_intensity: p.ai,
            achieved_flops: p.achieved,
            bound_flops: p.bound,
            limiter: p.limiter.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub name: String,
    pub elapsed: f64,
    pub estimated_flops: u64,
    pub estimated_bytes: u64,
    pub arithmetic_intensity: Option<f64>,
    pub achieved_flops: Option<f64>,
    pub roofline: Option<RooflineReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub threads: usize,
    pub steps: usize,
    pub repeats: usize,
    /// Minimum over repeats, per scope.
    pub timings: Timings,
    pub counters: CounterReport,
    /// Value of the shared kernel-evaluation counter.
    pub counted_kernel_evals: u64,
    pub phases: Vec<PhaseReport>,
    /// Work of all phases over the step time.
    pub roofline: Option<RooflineReport>,
    pub mask_true: usize,
    pub npoints: usize,
    pub final_total_mass: f64,
    pub final_total_number: f64,
    /// Final state bitwise equal to that of the first variant.
    pub matches_first: bool,
}

impl VariantReport {
    pub fn build(
        run: &VariantRun,
        timings: Timings,
        repeats: usize,
        machine: &MachineModel,
        precision: Precision,
        totals: (f64, f64),
        matches_first: bool,
    ) -> Result<Self> {
        let mut perf = PerfReport::new();
        perf.record_phase("mask", run.stats.mask_seconds, Counters::default())?;
        perf.record_phase("stubs", run.stats.stub_seconds, run.stats.stub_counters)?;
        perf.record_phase("coalescence", run.stats.coal_seconds, run.stats.coal_counters)?;
        let phases = perf
            .phases()
            .iter()
            .map(|p| PhaseReport {
                name: p.name.clone(),
                elapsed: p.elapsed,
                estimated_flops: p.estimated_flops(),
                estimated_bytes: p.estimated_bytes(),
                arithmetic_intensity: p.arithmetic_intensity(),
                achieved_flops: p.achieved_flops(),
                roofline: p.roofline(machine, precision).map(Into::into),
            })
            .collect();
        let total = perf.total_counters();
        let roofline = sbm_proxy_core::perf::roofline_point(
            total.estimated_flops() as f64,
            total.estimated_bytes() as f64,
            timings.fsbm_step,
            machine,
            precision,
        )
        .ok()
        .map(Into::into);
        Ok(VariantReport {
            name: run.variant.name().to_string(),
            threads: run.threads,
            steps: run.steps,
            repeats,
            timings,
            counters: total.into(),
            counted_kernel_evals: run.counted_evals,
            phases,
            roofline,
            mask_true: run.mask_true,
            npoints: run.npoints,
            final_total_mass: totals.0,
            final_total_number: totals.1,
            matches_first,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRowReport {
    pub variant: String,
    pub time: f64,
    pub current_speedup: f64,
    pub cumulative_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub scope: String,
    pub rows: Vec<LedgerRowReport>,
}

impl From<&SpeedupLedger> for LedgerReport {
    fn from(l: &SpeedupLedger) -> Self {
        LedgerReport {
            scope: l.scope.clone(),
            rows: l
                .rows
                .iter()
                .map(|r| LedgerRowReport {
                    variant: r.variant.clone(),
                    time: r.time,
                    current_speedup: r.current_speedup,
                    cumulative_speedup: r.cumulative_speedup,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    /// `run` or `bench`.
    pub command: String,
    pub config: RunConfig,
    pub variants: Vec<VariantReport>,
    /// One per scope; empty for a single variant.
    pub ledgers: Vec<LedgerReport>,
}

/// Ledgers for every scope over the variants in order. Zero-time scopes
/// are left out.
pub fn ledgers(variants: &[VariantReport]) -> Vec<SpeedupLedger> {
    if variants.len() < 2 {
        return Vec::new();
    }
    SCOPES
        .iter()
        .enumerate()
        .filter_map(|(n, scope)| {
            let timings: Vec<(String, f64)> = variants.iter().map(|v| (v.name.clone(), v.timings.scope(n))).collect();
            build_ledger(scope, &timings).ok()
        })
        .collect()
}

impl RunReport {
    pub fn new(command: &str, config: RunConfig, variants: Vec<VariantReport>) -> Self {
        let ledgers = ledgers(&variants).iter().map(Into::into).collect();
        RunReport {
            schema: SCHEMA.to_string(),
            command: command.to_string(),
            config,
            variants,
            ledgers,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Ledger table followed by one roofline line per variant.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let ledgers: Vec<SpeedupLedger> = self
            .ledgers
            .iter()
            .map(|l| SpeedupLedger {
                scope: l.scope.clone(),
                rows: l
                    .rows
                    .iter()
                    .map(|r| sbm_proxy_core::perf::LedgerRow {
                        variant: r.variant.clone(),
                        time: r.time,
                        current_speedup: r.current_speedup,
                        cumulative_speedup: r.cumulative_speedup,
                    })
                    .collect(),
            })
            .collect();
        out.push_str(&render_ledgers(&ledgers));
        if !ledgers.is_empty() {
            out.push('\n');
        }
        let w = self.variants.iter().map(|v| v.name.len()).max().unwrap_or(7).max(7);
        let _ = writeln!(
            out,
            "{:w$}  {:>7}  {:>10}  {:>10}  {:>10}  {:>10}  {:>12}  {:>12}  limiter",
            "variant", "threads", "coal (s)", "step (s)", "total (s)", "evals", "AI (F/B)", "bound (F/s)"
        );
        for v in &self.variants {
            let (ai, bound, lim) = match &v.roofline {
                Some(r) => (
                    format!("{:.4}", r.arithmetic_intensity),
                    format!("{:.4e}", r.bound_flops),
                    r.limiter.as_str(),
                ),
                None => ("-".into(), "-".into(), "-"),
            };
            let evals = v.counters.kernel_evals + v.counters.precomputed_evals;
            let _ = writeln!(
                out,
                "{:w$}  {:>7}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10}  {:>12}  {:>12}  {}",
                v.name, v.threads, v.timings.coal_loop, v.timings.fsbm_step, v.timings.overall, evals, ai, bound, lim
            );
        }
        out
    }
}
