use std::fmt;
use std::str::FromStr;

use sbm_proxy_core::driver::{ExecMode, ExecPlan};
use sbm_proxy_core::{KernelStrategy, ScratchStrategy};

/// The four stages of the refactor, from the original loop to the fully
/// collapsed one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Fused loop; all twenty kernel tables interpolated at every point.
    BaselineFusedPrecomputed,
    /// Fused loop; kernels interpolated when a collision needs them.
    OndemandFused,
    /// Coalescence split out behind a mask, parallel over `(j, k)`.
    FissionedCollapse2,
    /// As above, parallel over every point, scratch from the arena.
    FissionedCollapse3Arena,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::BaselineFusedPrecomputed,
        Variant::OndemandFused,
        Variant::FissionedCollapse2,
        Variant::FissionedCollapse3Arena,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselineFusedPrecomputed => "baseline-fused-precomputed",
            Variant::OndemandFused => "ondemand-fused",
            Variant::FissionedCollapse2 => "fissioned-collapse2",
            Variant::FissionedCollapse3Arena => "fissioned-collapse3-arena",
        }
    }

    pub fn is_fused(self) -> bool {
        matches!(self, Variant::BaselineFusedPrecomputed | Variant::OndemandFused)
    }

    /// Execution plan; fused variants ignore `threads`.
    pub fn plan(self, threads: usize) -> ExecPlan {
        match self {
            Variant::BaselineFusedPrecomputed => {
                ExecPlan::serial(KernelStrategy::Precomputed, ScratchStrategy::Automatic)
            }
            Variant::OndemandFused => ExecPlan::serial(KernelStrategy::OnDemand, ScratchStrategy::Automatic),
            Variant::FissionedCollapse2 => ExecPlan {
                mode: ExecMode::Parallel,
                collapse: 2,
                threads,
                scratch_strategy: ScratchStrategy::Automatic,
                kernel_strategy: KernelStrategy::OnDemand,
            },
            Variant::FissionedCollapse3Arena => ExecPlan {
                mode: ExecMode::Parallel,
                collapse: 3,
                threads,
                scratch_strategy: ScratchStrategy::Arena,
                kernel_strategy: KernelStrategy::OnDemand,
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownVariant(pub String);

impl fmt::Display for UnknownVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown variant `{}`; expected one of", self.0)?;
        for v in Variant::ALL {
            write!(f, " {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for UnknownVariant {}

impl FromStr for Variant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| UnknownVariant(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            v.plan(4).validate().unwrap();
        }
        assert!("fissioned-collapse3".parse::<Variant>().is_err());
    }
}
