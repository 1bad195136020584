//! Allocation-only core of a spectral-bin collision-coalescence proxy.
//!
//! The crate holds everything that is pure arithmetic: the mass-doubling bin
//! grid, the twenty pair-interaction kernel tables and their two access
//! strategies, the Kovetz–Olund coalescence solver with its two scratch
//! strategies, the grid-point loops of the driver, the significant-digit
//! comparator and the performance arithmetic (roofline and speedup ledger).
//!
//! Threads, clocks, files and the command line live in the `sbm-proxy`
//! companion crate. Nothing here needs `std`; only `alloc` is used.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod bins;
pub mod category;
pub mod coalescence;
pub mod driver;
pub mod error;
pub mod kernels;
pub mod perf;
pub mod verify;

pub use bins::{BinDistribution, MassGrid};
pub use category::{Category, NUM_CATEGORIES};
pub use coalescence::{coal_step, CoalConfig, CoalWork, Coalescer, KernelStrategy, ScratchArena, ScratchStrategy};
pub use error::{Error, Result};
pub use kernels::{
    EvalCounter, InteractionPair, KernelFamily, KernelSource, KernelTableSet, OnDemand, PairRegistry,
    PrecomputedKernels,
};
