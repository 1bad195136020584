//! The four subcommands. Each writes its human-readable output to `out`.

use std::io::Write;
use std::path::Path;

use sbm_proxy_core::driver::{fission_predicates, GridState};
use sbm_proxy_core::verify::compare_states;

use crate::config::{RunConfig, Setup};
use crate::error::{AppError, Result};
use crate::exec::{run_variant, StdClock, VariantRun};
use crate::report::{RunReport, Timings, VariantReport};
use crate::snapshot;
use crate::variant::Variant;

/// Overrides given on the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub threads: Option<usize>,
    pub steps: Option<usize>,
}

impl Overrides {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(t) = self.threads {
            config.exec.threads = t;
        }
        if let Some(s) = self.steps {
            config.time.steps = s;
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| AppError::io("<stdout>", e))
}

fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(path, report.to_json()? + "\n").map_err(|e| AppError::io(path, e))
}

/// Writes the initial state and prints mask statistics.
pub fn cmd_gen(config: &Path, snapshot_out: Option<&Path>, out: &mut dyn Write) -> Result<GridState> {
    let config = RunConfig::load(config)?;
    let setup = config.setup()?;
    let state = config.initial_state(&setup)?;
    let path = snapshot_out.unwrap_or(&config.output.initial);
    snapshot::save(&state, path)?;
    let mask = fission_predicates(&state);
    let n = state.npoints();
    emit(
        out,
        &format!(
            "mask true: {}/{}\nfraction: {:.6}\nwrote {}\n",
            mask.count_true(),
            n,
            mask.count_true() as f64 / n as f64,
            path.display()
        ),
    )?;
    Ok(state)
}

fn check_compatible(state: &GridState, setup: &Setup) -> Result<()> {
    if state.grid() != &setup.grid {
        return Err(AppError::Shape(format!(
            "snapshot mass grid (nkr {}, x1 {}, ratio {}) differs from the config's (nkr {}, x1 {}, ratio {})",
            state.nkr(),
            state.grid().x1(),
            state.grid().ratio(),
            setup.grid.nkr(),
            setup.grid.x1(),
            setup.grid.ratio()
        )));
    }
    Ok(())
}

/// Paths used by `run`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunPaths<'a> {
    /// Start from this snapshot instead of the generated case.
    pub input: Option<&'a Path>,
    pub snapshot: Option<&'a Path>,
    pub report: Option<&'a Path>,
}

/// Steps one variant and writes the final snapshot and a report.
pub fn cmd_run(
    config: &Path,
    variant: &str,
    overrides: Overrides,
    paths: RunPaths<'_>,
    out: &mut dyn Write,
) -> Result<RunReport> {
    let variant: Variant = variant
        .parse()
        .map_err(|e: crate::variant::UnknownVariant| AppError::Usage(e.to_string()))?;
    let mut config = RunConfig::load(config)?;
    overrides.apply(&mut config);
    let setup = config.setup()?;
    let model = setup.model()?;
    let mut state = match paths.input {
        Some(p) => {
            let s = snapshot::load(p)?;
            check_compatible(&s, &setup)?;
            s
        }
        None => config.initial_state(&setup)?,
    };
    let run = run_variant(&mut state, &model, variant, &setup.settings, &StdClock::new())?;
    let snap_path = paths.snapshot.unwrap_or(&config.output.snapshot);
    snapshot::save(&state, snap_path)?;
    let v = VariantReport::build(
        &run,
        Timings::of(&run),
        1,
        &setup.machine,
        setup.precision,
        (state.total_mass(), state.total_number()),
        true,
    )?;
    let report = RunReport::new("run", config.clone(), vec![v]);
    let report_path = paths.report.unwrap_or(&config.output.report);
    write_report(&report, report_path)?;
    emit(
        out,
        &format!(
            "{}\nwrote {} and {}\n",
            report.render(),
            snap_path.display(),
            report_path.display()
        ),
    )?;
    Ok(report)
}

/// Compares two snapshots. Returns `true` when every field is bitwise equal.
pub fn cmd_diff(a: &Path, b: &Path, out: &mut dyn Write) -> Result<bool> {
    let sa = snapshot::load(a)?;
    let sb = snapshot::load(b)?;
    let report = compare_states(&sa, &sb).map_err(|e| match e {
        sbm_proxy_core::Error::ShapeMismatch(m) => AppError::Shape(m),
        other => AppError::Core(other),
    })?;
    let mut text = format!(
        "{:10}  {:>10}  {:>10}  {:>12}  {:>10}\n",
        "field", "min_digits", "mean", "exact", "compared"
    );
    for f in &report.fields {
        text.push_str(&format!(
            "{:10}  {:>10}  {:>10.3}  {:>12}  {:>10}\n",
            f.name, f.min_digits, f.mean_digits, f.count_exact, f.count_compared
        ));
    }
    if report.all_exact() {
        text.push_str("identical\n");
    } else {
        text.push_str(&format!("min_digits: {}\n", report.min_digits()));
    }
    emit(out, &text)?;
    Ok(report.all_exact())
}

/// Runs every configured variant `repeats` times from the same initial state
/// and reports the minimum times, the speedup ledgers and roofline points.
pub fn cmd_bench(
    config: &Path,
    overrides: Overrides,
    report_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<RunReport> {
    let mut config = RunConfig::load(config)?;
    overrides.apply(&mut config);
    if config.exec.variants.len() < 2 {
        return Err(AppError::Usage(format!(
            "bench needs at least 2 variants in exec.variants, got {}",
            config.exec.variants.len()
        )));
    }
    let setup = config.setup()?;
    let report = bench(&config, &setup)?;
    let path = report_out.unwrap_or(&config.output.report);
    write_report(&report, path)?;
    emit(out, &format!("{}\nwrote {}\n", report.render(), path.display()))?;
    Ok(report)
}

/// The measurement loop behind `bench`, without any file output.
pub fn bench(config: &RunConfig, setup: &Setup) -> Result<RunReport> {
    let model = setup.model()?;
    let initial = config.initial_state(setup)?;
    let clock = StdClock::new();
    let mut first: Option<GridState> = None;
    let mut reports = Vec::with_capacity(setup.variants.len());
    for &variant in &setup.variants {
        let mut best: Option<(Timings, VariantRun, GridState)> = None;
        for _ in 0..setup.repeats {
            let mut state = initial.clone();
            let run = run_variant(&mut state, &model, variant, &setup.settings, &clock)?;
            let t = Timings::of(&run);
            best = Some(match best {
                None => (t, run, state),
                Some((b, r, s)) => (b.min(t), r, s),
            });
        }
        let (timings, run, state) = best.expect("repeats >= 1");
        let matches = first.as_ref().is_none_or(|f| f.bitwise_eq(&state));
        reports.push(VariantReport::build(
            &run,
            timings,
            setup.repeats,
            &setup.machine,
            setup.precision,
            (state.total_mass(), state.total_number()),
            matches,
        )?);
        if first.is_none() {
            first = Some(state);
        }
    }
    Ok(RunReport::new("bench", config.clone(), reports))
}
