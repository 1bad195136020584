//! TOML run configuration. `configs/example.toml` documents every key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sbm_proxy_core::bins::{DEFAULT_NKR, DEFAULT_RATIO, DEFAULT_X1};
use sbm_proxy_core::driver::{
    default_cloud_species, make_synthetic_case, CloudSpecies, Domain, GridState, Model, StubConfig,
};
use sbm_proxy_core::kernels::{DEFAULT_LEVEL_SCALE, DEFAULT_PAIR_COUNT};
use sbm_proxy_core::perf::{MachineModel, Precision};
use sbm_proxy_core::{
    Category, CoalConfig, Coalescer, Error as CoreError, InteractionPair, KernelFamily, KernelTableSet, MassGrid,
    PairRegistry,
};

use crate::error::{AppError, Result};
use crate::exec::RunSettings;
use crate::variant::Variant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub pairs: PairsSection,
    #[serde(default)]
    pub case: CaseSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub exec: ExecSection,
    #[serde(default)]
    pub machine: MachineSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub ni: usize,
    pub nk: usize,
    pub nj: usize,
    #[serde(default = "default_nkr")]
    pub nkr: usize,
    #[serde(default = "default_x1")]
    pub x1: f64,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
}

fn default_nkr() -> usize {
    DEFAULT_NKR
}

fn default_x1() -> f64 {
    DEFAULT_X1
}

fn default_ratio() -> f64 {
    DEFAULT_RATIO
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// `constant`, `golovin`, `product` or `hydrodynamic`.
    pub family: String,
    pub coefficient: f64,
    pub level_scale: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            family: "golovin".to_string(),
            coefficient: 1.5,
            level_scale: DEFAULT_LEVEL_SCALE,
        }
    }
}

impl KernelSection {
    pub fn family(&self) -> Result<KernelFamily, CoreError> {
        let c = self.coefficient;
        if !(c.is_finite() && c >= 0.0) {
            return Err(CoreError::Config(format!(
                "kernel coefficient must be finite and >= 0, got {c}"
            )));
        }
        match self.family.as_str() {
            "constant" => Ok(KernelFamily::Constant { c }),
            "golovin" => Ok(KernelFamily::Golovin { b: c }),
            "product" => Ok(KernelFamily::Product { c }),
            "hydrodynamic" => Ok(KernelFamily::Hydrodynamic { c }),
            other => Err(CoreError::Config(format!(
                "unknown kernel family {other:?}; expected constant, golovin, product or hydrodynamic"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub name: String,
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsSection {
    /// Built-in registry; only `fsbm-default` exists. Leave unset when
    /// `list` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub list: Vec<PairEntry>,
    /// Accept a registry whose size is not twenty.
    #[serde(default)]
    pub allow_any_count: bool,
}

impl Default for PairsSection {
    fn default() -> Self {
        PairsSection {
            preset: Some("fsbm-default".to_string()),
            list: Vec::new(),
            allow_any_count: false,
        }
    }
}

impl PairsSection {
    pub fn registry(&self) -> Result<PairRegistry, CoreError> {
        let expected = (!self.allow_any_count).then_some(DEFAULT_PAIR_COUNT);
        match (&self.preset, self.list.is_empty()) {
            (Some(p), true) if p == "fsbm-default" => {
                let reg = PairRegistry::fsbm_default();
                PairRegistry::new(reg.pairs().to_vec(), expected)
            }
            (Some(p), true) => Err(CoreError::Config(format!("unknown pair preset {p:?}"))),
            (None, false) => {
                let pairs = self
                    .list
                    .iter()
                    .map(|e| {
                        let a: Category = e.a.parse()?;
                        let b: Category = e.b.parse()?;
                        let dest = match &e.dest {
                            Some(d) => d.parse()?,
                            None => InteractionPair::default_dest(a, b),
                        };
                        Ok(InteractionPair::new(e.name.clone(), a, b, dest))
                    })
                    .collect::<Result<Vec<_>, CoreError>>()?;
                PairRegistry::new(pairs, expected)
            }
            (Some(_), false) => Err(CoreError::Config(
                "give either pairs.preset or pairs.list, not both".into(),
            )),
            (None, true) => Err(CoreError::Config(
                "no pair registry: set pairs.preset or pairs.list".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesEntry {
    pub category: String,
    pub n_total: f64,
    pub xbar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSection {
    pub cloud_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_species")]
    pub species: Vec<SpeciesEntry>,
}

fn default_species() -> Vec<SpeciesEntry> {
    default_cloud_species()
        .into_iter()
        .map(|s| SpeciesEntry {
            category: s.category.name().to_string(),
            n_total: s.n_total,
            xbar: s.xbar,
        })
        .collect()
}

impl Default for CaseSection {
    fn default() -> Self {
        CaseSection {
            cloud_fraction: 0.3,
            seed: 42,
            species: default_species(),
        }
    }
}

impl CaseSection {
    pub fn species(&self) -> Result<Vec<CloudSpecies>, CoreError> {
        self.species
            .iter()
            .map(|s| {
                if !(s.n_total.is_finite() && s.n_total >= 0.0 && s.xbar.is_finite() && s.xbar > 0.0) {
                    return Err(CoreError::Config(format!(
                        "species {}: n_total must be >= 0 and xbar > 0",
                        s.category
                    )));
                }
                Ok(CloudSpecies {
                    category: s.category.parse()?,
                    n_total: s.n_total,
                    xbar: s.xbar,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    /// Seconds per step.
    pub dt: f64,
    pub substeps: usize,
    pub steps: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            dt: 1.0,
            substeps: 1,
            steps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecSection {
    /// Variants, in ledger order, for `bench`.
    pub variants: Vec<String>,
    /// Threads used by the fissioned variants.
    pub threads: usize,
    /// Timed repetitions per variant in `bench`; the minimum is kept.
    pub repeats: usize,
    pub stub_iterations: u32,
    pub patches: usize,
    pub tiles_per_patch: usize,
}

pub const MIN_REPEATS: usize = 5;

impl Default for ExecSection {
    fn default() -> Self {
        ExecSection {
            variants: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
            threads: 1,
            repeats: MIN_REPEATS,
            stub_iterations: StubConfig::default().iterations,
            patches: 1,
            tiles_per_patch: 1,
        }
    }
}

impl ExecSection {
    pub fn variants(&self) -> Result<Vec<Variant>, CoreError> {
        self.variants
            .iter()
            .map(|v| {
                v.parse()
                    .map_err(|e: crate::variant::UnknownVariant| CoreError::Config(e.to_string()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSection {
    pub peak_flops_double: f64,
    pub peak_flops_single: f64,
    /// Bytes per second.
    pub peak_bandwidth: f64,
    /// `double` or `single`.
    pub precision: String,
}

impl Default for MachineSection {
    fn default() -> Self {
        let m = MachineModel::default();
        MachineSection {
            peak_flops_double: m.peak_flops_double,
            peak_flops_single: m.peak_flops_single,
            peak_bandwidth: m.peak_bandwidth,
            precision: "double".to_string(),
        }
    }
}

impl MachineSection {
    pub fn model(&self) -> Result<MachineModel, CoreError> {
        let m = MachineModel {
            peak_flops_double: self.peak_flops_double,
            peak_flops_single: self.peak_flops_single,
            peak_bandwidth: self.peak_bandwidth,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn precision(&self) -> Result<Precision, CoreError> {
        match self.precision.as_str() {
            "double" => Ok(Precision::Double),
            "single" => Ok(Precision::Single),
            other => Err(CoreError::Config(format!(
                "precision must be double or single, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Written by `gen`.
    pub initial: PathBuf,
    /// Final state written by `run`.
    pub snapshot: PathBuf,
    /// JSON report of `run` and `bench`.
    pub report: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            initial: PathBuf::from("out/initial.snap"),
            snapshot: PathBuf::from("out/final.snap"),
            report: PathBuf::from("out/report.json"),
        }
    }
}

/// Everything a run needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub domain: Domain,
    pub grid: MassGrid,
    pub registry: PairRegistry,
    pub family: KernelFamily,
    pub level_scale: f64,
    pub species: Vec<CloudSpecies>,
    pub variants: Vec<Variant>,
    pub settings: RunSettings,
    pub repeats: usize,
    pub machine: MachineModel,
    pub precision: Precision,
}

impl Setup {
    pub fn model(&self) -> Result<Model> {
        let tables = KernelTableSet::build(&self.grid, &self.registry, self.family, self.level_scale)?;
        Ok(Model::new(
            Coalescer::new(self.grid.clone(), self.registry.clone()),
            tables,
        )?)
    }
}

impl RunConfig {
    /// A config with every default and the given extents.
    pub fn with_extents(ni: usize, nk: usize, nj: usize) -> Self {
        RunConfig {
            grid: GridSection {
                ni,
                nk,
                nj,
                nkr: DEFAULT_NKR,
                x1: DEFAULT_X1,
                ratio: DEFAULT_RATIO,
            },
            kernel: KernelSection::default(),
            pairs: PairsSection::default(),
            case: CaseSection::default(),
            time: TimeSection::default(),
            exec: ExecSection::default(),
            machine: MachineSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| AppError::ConfigParse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every setting and builds the run objects.
    pub fn setup(&self) -> Result<Setup> {
        self.setup_inner().map_err(AppError::Config)
    }

    fn setup_inner(&self) -> Result<Setup, CoreError> {
        let g = &self.grid;
        let domain = Domain::new(g.ni, g.nk, g.nj)?;
        let grid = MassGrid::new(g.nkr, g.x1, g.ratio)?;
        let family = self.kernel.family()?;
        let ls = self.kernel.level_scale;
        if !(ls.is_finite() && ls > 0.0) {
            return Err(CoreError::Config(format!("kernel.level_scale must be > 0, got {ls}")));
        }
        let registry = self.pairs.registry()?;
        let cf = self.case.cloud_fraction;
        if !(0.0..=1.0).contains(&cf) {
            return Err(CoreError::Config(format!(
                "case.cloud_fraction must lie in [0, 1], got {cf}"
            )));
        }
        let species = self.case.species()?;
        CoalConfig::new(self.time.dt, self.time.substeps)?;
        let e = &self.exec;
        let variants = e.variants()?;
        if e.threads == 0 {
            return Err(CoreError::Config("exec.threads must be >= 1".into()));
        }
        if e.repeats < MIN_REPEATS {
            return Err(CoreError::Config(format!(
                "exec.repeats must be >= {MIN_REPEATS}, got {}",
                e.repeats
            )));
        }
        if e.patches == 0 || e.patches > g.nj || e.tiles_per_patch == 0 || e.tiles_per_patch > g.ni {
            return Err(CoreError::Config(format!(
                "{} patches of {} tiles do not fit a {} x {} (i, j) domain",
                e.patches, e.tiles_per_patch, g.ni, g.nj
            )));
        }
        for v in &variants {
            v.plan(e.threads).validate()?;
        }
        Ok(Setup {
            domain,
            grid,
            registry,
            family,
            level_scale: ls,
            species,
            variants,
            settings: RunSettings {
                dt: self.time.dt,
                substeps: self.time.substeps,
                steps: self.time.steps,
                threads: e.threads,
                stubs: StubConfig {
                    iterations: e.stub_iterations,
                },
                patches: e.patches,
                tiles_per_patch: e.tiles_per_patch,
            },
            repeats: e.repeats,
            machine: self.machine.model()?,
            precision: self.machine.precision()?,
        })
    }

    pub fn initial_state(&self, setup: &Setup) -> Result<GridState> {
        Ok(make_synthetic_case(
            setup.domain,
            setup.grid.clone(),
            self.case.cloud_fraction,
            self.case.seed,
            &setup.species,
        )?)
    }
}
