//! Work counters, roofline placement and speedup ledgers.
//!
//! FLOP and byte figures are analytic: counted events multiplied by the
//! per-event constants below. They describe load/store traffic of the
//! innermost loops, not DRAM traffic measured by hardware counters.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::error::{Error, Result};

/// `sub, mul, add` of the pressure interpolation.
pub const FLOPS_PER_KERNEL_EVAL: u64 = 3;
/// Two reference-table reads.
pub const BYTES_PER_KERNEL_EVAL: u64 = 16;
/// Store of one interpolated entry into the precomputed arrays.
pub const BYTES_PER_PRECOMPUTED_STORE: u64 = 8;
/// Read of one precomputed entry by the solver.
pub const BYTES_PER_PRECOMPUTED_LOOKUP: u64 = 8;
/// Rate, halving, time step, two losses, two split gains.
pub const FLOPS_PER_PAIR_UPDATE: u64 = 10;
/// Partner density read, gain-target read (24 B) and three read-modify-writes.
pub const BYTES_PER_PAIR_UPDATE: u64 = 8 + 24 + 3 * 16;
/// One iteration of a synthetic nucleation or condensation spin.
pub const FLOPS_PER_STUB_ITERATION: u64 = 4;

/// Peak rates of the machine the roofline is drawn for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineModel {
    pub peak_flops_double: f64,
    pub peak_flops_single: f64,
    /// Bytes per second.
    pub peak_bandwidth: f64,
}

impl Default for MachineModel {
    /// NVIDIA A100 40 GB: 9.7 TFLOP/s double, 19.5 TFLOP/s single, 1555 GB/s.
    fn default() -> Self {
        MachineModel {
            peak_flops_double: 9.7e12,
            peak_flops_single: 19.5e12,
            peak_bandwidth: 1555e9,
        }
    }
}

impl MachineModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("peak_flops_double", self.peak_flops_double),
            ("peak_flops_single", self.peak_flops_single),
            ("peak_bandwidth", self.peak_bandwidth),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn peak_flops(&self, precision: Precision) -> f64 {
        match precision {
            Precision::Single => self.peak_flops_single,
            Precision::Double => self.peak_flops_double,
        }
    }

    /// Arithmetic intensity where the memory and compute roofs meet.
    pub fn ridge_point(&self, precision: Precision) -> f64 {
        self.peak_flops(precision) / self.peak_bandwidth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limiter {
    Memory,
    Compute,
}

impl Limiter {
    pub fn as_str(self) -> &'static str {
        match self {
            Limiter::Memory => "memory",
            Limiter::Compute => "compute",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RooflinePoint {
    /// FLOP per byte.
    pub ai: f64,
    /// FLOP/s.
    pub achieved: f64,
    /// Attainable FLOP/s at this intensity.
    pub bound: f64,
    pub limiter: Limiter,
}

pub fn roofline_point(
    flops: f64,
    bytes: f64,
    elapsed: f64,
    machine: &MachineModel,
    precision: Precision,
) -> Result<RooflinePoint> {
    if !(flops.is_finite() && flops >= 0.0) {
        return Err(Error::domain(format!("flops must be >= 0, got {flops}")));
    }
    if !(bytes.is_finite() && bytes > 0.0) {
        return Err(Error::domain(format!("bytes must be > 0, got {bytes}")));
    }
    if !(elapsed.is_finite() && elapsed > 0.0) {
        return Err(Error::domain(format!("elapsed must be > 0, got {elapsed}")));
    }
    machine.validate()?;
    let ai = flops / bytes;
    let peak = machine.peak_flops(precision);
    let memory_roof = ai * machine.peak_bandwidth;
    let (bound, limiter) = if memory_roof < peak {
        (memory_roof, Limiter::Memory)
    } else {
        (peak, Limiter::Compute)
    };
    Ok(RooflinePoint {
        ai,
        achieved: flops / elapsed,
        bound,
        limiter,
    })
}

/// Raw event counts for one phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Counted on-demand kernel evaluations.
    pub kernel_evals: u64,
    /// Entries written into precomputed kernel arrays.
    pub precomputed_evals: u64,
    /// `(pair, i, j)` updates done by the solver.
    pub pair_updates: u64,
    /// Updates that read a precomputed entry instead of evaluating.
    pub precomputed_lookups: u64,
    pub stub_iterations: u64,
    /// Grid points where the solver ran.
    pub coal_points: u64,
}

impl Counters {
    pub fn merge(&mut self, other: &Counters) {
        self.kernel_evals += other.kernel_evals;
        self.precomputed_evals += other.precomputed_evals;
        self.pair_updates += other.pair_updates;
        self.precomputed_lookups += other.precomputed_lookups;
        self.stub_iterations += other.stub_iterations;
        self.coal_points += other.coal_points;
    }

    pub fn estimated_flops(&self) -> u64 {
        (self.kernel_evals + self.precomputed_evals) * FLOPS_PER_KERNEL_EVAL
            + self.pair_updates * FLOPS_PER_PAIR_UPDATE
            + self.stub_iterations * FLOPS_PER_STUB_ITERATION
    }

    pub fn estimated_bytes(&self) -> u64 {
        (self.kernel_evals + self.precomputed_evals) * BYTES_PER_KERNEL_EVAL
            + self.precomputed_evals * BYTES_PER_PRECOMPUTED_STORE
            + self.precomputed_lookups * BYTES_PER_PRECOMPUTED_LOOKUP
            + self.pair_updates * BYTES_PER_PAIR_UPDATE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub name: String,
    pub elapsed: f64,
    pub counters: Counters,
}

impl PhaseRecord {
    pub fn estimated_flops(&self) -> u64 {
        self.counters.estimated_flops()
    }

    pub fn estimated_bytes(&self) -> u64 {
        self.counters.estimated_bytes()
    }

    /// `None` when no bytes were moved.
    pub fn arithmetic_intensity(&self) -> Option<f64> {
        let bytes = self.estimated_bytes();
        (bytes > 0).then(|| self.estimated_flops() as f64 / bytes as f64)
    }

    /// `None` for zero-elapsed phases.
    pub fn achieved_flops(&self) -> Option<f64> {
        (self.elapsed > 0.0).then(|| self.estimated_flops() as f64 / self.elapsed)
    }

    pub fn roofline(&self, machine: &MachineModel, precision: Precision) -> Option<RooflinePoint> {
        roofline_point(
            self.estimated_flops() as f64,
            self.estimated_bytes() as f64,
            self.elapsed,
            machine,
            precision,
        )
        .ok()
    }
}

/// Append-only list of named phases for one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerfReport {
    phases: Vec<PhaseRecord>,
}

impl PerfReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_phase(&mut self, name: &str, elapsed: f64, counters: Counters) -> Result<()> {
        if !(elapsed.is_finite() && elapsed >= 0.0) {
            return Err(Error::domain(format!("elapsed must be >= 0, got {elapsed}")));
        }
        if self.phases.iter().any(|p| p.name == name) {
            return Err(Error::DuplicatePhase(name.into()));
        }
        self.phases.push(PhaseRecord {
            name: name.into(),
            elapsed,
            counters,
        });
        Ok(())
    }

    pub fn phases(&self) -> &[PhaseRecord] {
        &self.phases
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseRecord> {
        self.phases.iter().find(|p| p.name == name)
    }

    pub fn total_elapsed(&self) -> f64 {
        self.phases.iter().map(|p| p.elapsed).sum()
    }

    pub fn total_counters(&self) -> Counters {
        let mut c = Counters::default();
        for p in &self.phases {
            c.merge(&p.counters);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub variant: String,
    pub time: f64,
    pub current_speedup: f64,
    pub cumulative_speedup: f64,
}

/// Speedups of successive variants for one timing scope. "Current" compares a
/// variant with the one before it, "cumulative" with the first.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupLedger {
    pub scope: String,
    pub rows: Vec<LedgerRow>,
}

pub fn build_ledger(scope: &str, timings: &[(String, f64)]) -> Result<SpeedupLedger> {
    if timings.len() < 2 {
        return Err(Error::domain(format!(
            "a speedup ledger needs at least 2 variants, got {}",
            timings.len()
        )));
    }
    if let Some((name, t)) = timings.iter().find(|(_, t)| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::domain(format!("timing for {name} must be > 0, got {t}")));
    }
    let t0 = timings[0].1;
    let rows = timings
        .iter()
        .enumerate()
        .map(|(n, (name, t))| {
            let prev = if n == 0 { *t } else { timings[n - 1].1 };
            LedgerRow {
                variant: name.clone(),
                time: *t,
                current_speedup: prev / t,
                cumulative_speedup: t0 / t,
            }
        })
        .collect();
    Ok(SpeedupLedger {
        scope: scope.into(),
        rows,
    })
}

/// Renders ledgers variant by variant, one line per scope, in the
/// current/cumulative layout.
pub fn render_ledgers(ledgers: &[SpeedupLedger]) -> String {
    let mut out = String::new();
    let Some(first) = ledgers.first() else {
        return out;
    };
    let width = ledgers.iter().map(|l| l.scope.len()).max().unwrap_or(0).max(5);
    for (n, row) in first.rows.iter().enumerate() {
        let _ = writeln!(out, "{}", row.variant);
        let _ = writeln!(
            out,
            "  {:width$}  {:>12}  {:>15}  {:>18}",
            "", "time (s)", "Current speedup", "Cumulative speedup"
        );
        for ledger in ledgers {
            let r = &ledger.rows[n];
            let _ = writeln!(
                out,
                "  {:width$}  {:>12.6}  {:>14.2}x  {:>17.2}x",
                ledger.scope, r.time, r.current_speedup, r.cumulative_speedup
            );
        }
    }
    out
}
