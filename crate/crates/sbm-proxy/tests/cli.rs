use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sbm_proxy::report::{RunReport, SCHEMA};
use sbm_proxy::{snapshot, RunConfig};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sbm-proxy"));
    c.env_remove("SBMPROXY_THREADS");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path, ni: usize, nk: usize, nj: usize, fraction: f64) -> PathBuf {
    let mut c = RunConfig::with_extents(ni, nk, nj);
    c.grid.nkr = 17;
    c.case.cloud_fraction = fraction;
    c.time.steps = 2;
    c.exec.stub_iterations = 4;
    c.exec.threads = 2;
    c.output.initial = dir.join("initial.snap");
    c.output.snapshot = dir.join("final.snap");
    c.output.report = dir.join("report.json");
    write_config(dir, "case.toml", &c)
}

fn write_config(dir: &Path, name: &str, c: &RunConfig) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, c.to_toml()).unwrap();
    p
}

#[test]
fn gen_reports_exact_mask_count() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 10, 10, 10, 0.3);
    let o = run(bin().args(["gen", "--config"]).arg(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mask true: 300/1000"), "{}", stdout(&o));
    assert!(dir.path().join("initial.snap").exists());

    let cfg = small_config(dir.path(), 4, 3, 2, 0.0);
    let o = run(bin().args(["gen", "--config"]).arg(&cfg));
    assert!(stdout(&o).contains("mask true: 0/24"), "{}", stdout(&o));
}

#[test]
fn config_problems_exit_2() {
    let dir = TempDir::new().unwrap();
    let o = run(bin().args(["gen", "--config"]).arg(dir.path().join("missing.toml")));
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[grid]\nni = 4\nnk = 4\nnj = 4\nnkr = \"many\"\n").unwrap();
    let o = run(bin().args(["gen", "--config"]).arg(&bad));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 5"), "{err}");

    let mut c = RunConfig::with_extents(4, 4, 4);
    c.case.cloud_fraction = 1.5;
    let cfg = write_config(dir.path(), "range.toml", &c);
    let o = run(bin().args(["gen", "--config"]).arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_steps_reproduce_the_input() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 4, 3, 2, 0.5);
    assert!(run(bin().args(["gen", "--config"]).arg(&cfg)).status.success());
    let initial = dir.path().join("initial.snap");
    let out = dir.path().join("zero.snap");
    let o = run(bin()
        .args([
            "run",
            "--variant",
            "fissioned-collapse3-arena",
            "--steps",
            "0",
            "--config",
        ])
        .arg(&cfg)
        .arg("--input")
        .arg(&initial)
        .arg("--out")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(bin().arg("diff").arg(&initial).arg(&out));
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("identical"));
}

#[test]
fn variants_agree_through_the_cli() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 5, 4, 3, 0.4);
    let mut finals = Vec::new();
    for v in [
        "baseline-fused-precomputed",
        "fissioned-collapse3-arena",
        "fissioned-collapse2",
    ] {
        let out = dir.path().join(format!("{v}.snap"));
        let o = run(bin()
            .args(["run", "--variant", v, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out));
        assert_eq!(o.status.code(), Some(0), "{v}: {}", String::from_utf8_lossy(&o.stderr));
        finals.push(out);
    }
    for other in &finals[1..] {
        let o = run(bin().arg("diff").arg(&finals[0]).arg(other));
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    }
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.schema, SCHEMA);
    assert_eq!(report.command, "run");
    assert!(report.ledgers.is_empty());
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 4, 3, 2, 0.5);
    let o = run(bin().args(["run", "--variant", "turbo", "--config"]).arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("turbo"));
}

#[test]
fn diff_reports_digits_and_shape_mismatch() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 4, 3, 2, 0.5);
    assert!(run(bin().args(["gen", "--config"]).arg(&cfg)).status.success());
    let a = dir.path().join("initial.snap");
    let mut s = snapshot::load(&a).unwrap();
    let p = 5;
    let t = s.t_old()[p];
    s.set_temperature(p, t * (1.0 + 1e-3)).unwrap();
    let b = dir.path().join("perturbed.snap");
    snapshot::save(&s, &b).unwrap();
    let o = run(bin().arg("diff").arg(&a).arg(&b));
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("min_digits: 3"), "{}", stdout(&o));

    let cfg2 = small_config(dir.path(), 4, 3, 3, 0.5);
    let c = dir.path().join("other.snap");
    assert!(run(bin().args(["gen", "--config"]).arg(&cfg2).arg("--out").arg(&c))
        .status
        .success());
    let o = run(bin().arg("diff").arg(&a).arg(&c));
    assert_eq!(o.status.code(), Some(2));

    let junk = dir.path().join("junk.snap");
    std::fs::write(&junk, b"not a snapshot").unwrap();
    let o = run(bin().arg("diff").arg(&a).arg(&junk));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn input_snapshot_must_match_the_config_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 4, 3, 2, 0.5);
    assert!(run(bin().args(["gen", "--config"]).arg(&cfg)).status.success());
    let mut c = RunConfig::load(&cfg).unwrap();
    c.grid.nkr = 9;
    let cfg9 = write_config(dir.path(), "nkr9.toml", &c);
    let o = run(bin()
        .args(["run", "--variant", "ondemand-fused", "--config"])
        .arg(&cfg9)
        .arg("--input")
        .arg(dir.path().join("initial.snap")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_of_identical_variants() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 4, 3, 2, 0.5);
    let mut c = RunConfig::load(&cfg).unwrap();
    c.exec.variants = vec!["ondemand-fused".into(), "ondemand-fused".into()];
    let cfg = write_config(dir.path(), "twins.toml", &c);
    let o = run(bin().args(["bench", "--config"]).arg(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.ledgers.len(), 3);
    assert!(report.variants.iter().all(|v| v.matches_first && v.repeats == 5));
    // wall-clock noise on tiny runs is large; only the structure is exact
    for l in &report.ledgers {
        assert_eq!(l.rows[0].current_speedup, 1.0);
        assert!(l.rows[1].cumulative_speedup > 0.0);
    }

    for variants in [vec![], vec!["baseline-fused-precomputed".to_string()]] {
        c.exec.variants = variants;
        let cfg = write_config(dir.path(), "short.toml", &c);
        let o = run(bin().args(["bench", "--config"]).arg(&cfg));
        assert_eq!(o.status.code(), Some(2));
    }
}

#[test]
fn thread_count_from_env_and_flag() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 4, 3, 2, 0.5);
    let report_path = dir.path().join("report.json");
    let threads = |cmd: &mut Command, extra: &[&str]| {
        let o = run(cmd
            .args(["run", "--variant", "fissioned-collapse2", "--config"])
            .arg(&cfg)
            .args(extra));
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let r: RunReport = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
        r.variants[0].threads
    };
    assert_eq!(threads(&mut bin(), &[]), 2);
    assert_eq!(threads(bin().env("SBMPROXY_THREADS", "3"), &[]), 3);
    assert_eq!(threads(bin().env("SBMPROXY_THREADS", "3"), &["--threads", "4"]), 4);
}

#[test]
fn written_config_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 4, 3, 2, 0.5);
    let o = run(bin().args(["run", "--variant", "ondemand-fused", "--config"]).arg(&cfg));
    assert!(o.status.success());
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let echoed = write_config(dir.path(), "echo.toml", &report.config);
    let again = dir.path().join("again.snap");
    let o = run(bin()
        .args(["run", "--variant", "ondemand-fused", "--config"])
        .arg(&echoed)
        .arg("--out")
        .arg(&again));
    assert!(o.status.success());
    let o = run(bin().arg("diff").arg(dir.path().join("final.snap")).arg(&again));
    assert_eq!(o.status.code(), Some(0));
}
