//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL ...` line to the uncaptured stdout.
//!
//! Tests hold a shared lock so the wall-clock budgets are measured
//! without competing work.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use moutard_core::cauchy::PompeiuMode;
use moutard_core::scenario::{evaluate_thresholds, study_rows, LevelOutcome, Threshold};
use moutard_core::verify::ConvergenceRow;
use moutard_core::Scenario;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> Scenario {
    let path = workspace().join("configs").join(format!("{name}.json"));
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    Scenario::from_json(&text).unwrap()
}

fn timed_levels(s: &Scenario) -> (Vec<LevelOutcome>, Duration) {
    let start = Instant::now();
    let levels = s.run_levels(&s.sizes).unwrap();
    (levels, start.elapsed())
}

#[derive(Default)]
struct Limit {
    at_n: Option<usize>,
    max_value: Option<f64>,
    min_value: Option<f64>,
    min_order: Option<f64>,
    max_order: Option<f64>,
}

fn limit(metric: &str, l: Limit) -> Threshold {
    Threshold {
        metric: metric.into(),
        at_n: l.at_n,
        max_value: l.max_value,
        min_value: l.min_value,
        min_order: l.min_order,
        max_order: l.max_order,
    }
}

fn order_band(metric: &str, lo: f64, hi: f64) -> Threshold {
    limit(
        metric,
        Limit {
            min_order: Some(lo),
            max_order: Some(hi),
            ..Limit::default()
        },
    )
}

fn min_order(metric: &str, lo: f64) -> Threshold {
    limit(
        metric,
        Limit {
            min_order: Some(lo),
            ..Limit::default()
        },
    )
}

fn max_at(metric: &str, n: Option<usize>, v: f64) -> Threshold {
    limit(
        metric,
        Limit {
            at_n: n,
            max_value: Some(v),
            ..Limit::default()
        },
    )
}

struct Verdict {
    checks: Vec<(String, bool)>,
}

impl Verdict {
    fn new() -> Self {
        Verdict { checks: Vec::new() }
    }

    fn thresholds(&mut self, thresholds: &[Threshold], rows: &[ConvergenceRow]) {
        for c in evaluate_thresholds(thresholds, rows) {
            self.checks.push((c.label, c.passed));
        }
    }

    fn check(&mut self, label: String, passed: bool) {
        self.checks.push((label, passed));
    }

    fn finish(self, number: u32, title: &str) {
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
        let passed = failed.is_empty();
        let mut out = std::io::stdout().lock();
        writeln!(
            out,
            "criterion {number}: {} {title} ({}/{} checks)",
            if passed { "PASS" } else { "FAIL" },
            self.checks.len() - failed.len(),
            self.checks.len()
        )
        .unwrap();
        for f in &failed {
            writeln!(out, "    failed: {f}").unwrap();
        }
        drop(out);
        assert!(passed, "criterion {number} failed: {failed:?}");
    }
}

fn values(rows: &[ConvergenceRow], metric: &str) -> String {
    rows.iter()
        .filter(|r| r.metric == metric)
        .map(|r| match r.order_est {
            Some(o) => format!("n={} {:.3e} (order {o:.2})", r.n, r.value),
            None => format!("n={} {:.3e}", r.n, r.value),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

#[test]
fn criterion_1_theorem1_scalar_covariance() {
    let _g = serial();
    let s = scenario("theorem1-scalar-exact");
    assert_eq!(s.sizes, [65, 129, 257]);
    assert_eq!(s.constants.c, 10.0);
    let (levels, elapsed) = timed_levels(&s);
    let rows = study_rows(&levels);
    let mut v = Verdict::new();
    v.thresholds(
        &[
            order_band("psi_t_sys2", 1.6, 2.4),
            order_band("psi_plus_t_sys3", 1.6, 2.4),
            max_at("psi_t_sys2", Some(257), 1e-4),
            max_at("psi_plus_t_sys3", Some(257), 1e-4),
        ],
        &rows,
    );
    v.check(
        format!("runtime {:.2} s <= 10 s", elapsed.as_secs_f64()),
        elapsed.as_secs_f64() <= 10.0,
    );
    println!("psi_t_sys2: {}", values(&rows, "psi_t_sys2"));
    println!("psi_plus_t_sys3: {}", values(&rows, "psi_plus_t_sys3"));
    v.finish(
        1,
        "scalar transformed pair residual order 2.0 +- 0.4, <= 1e-4 at n=257, <= 10 s",
    );
}

#[test]
fn criterion_2_theorem1_matrix_covariance() {
    let _g = serial();
    let mut s = scenario("theorem1-matrix-neumann");
    assert_eq!(s.n, 2);
    assert_eq!(s.sizes, [65, 129]);
    s.pompeiu.mode = PompeiuMode::Direct;
    let (levels, elapsed) = timed_levels(&s);
    let rows = study_rows(&levels);
    let mut v = Verdict::new();
    v.thresholds(
        &[
            min_order("psi_t_sys2", 0.8),
            min_order("psi_plus_t_sys3", 0.8),
            max_at("psi_t_sys2", Some(129), 1e-2),
            max_at("psi_plus_t_sys3", Some(129), 1e-2),
        ],
        &rows,
    );
    v.check(
        format!("runtime {:.2} s <= 60 s (direct)", elapsed.as_secs_f64()),
        elapsed.as_secs_f64() <= 60.0,
    );
    println!("psi_t_sys2: {}", values(&rows, "psi_t_sys2"));
    println!("psi_plus_t_sys3: {}", values(&rows, "psi_plus_t_sys3"));
    v.finish(
        2,
        "N=2 transformed triple residual order >= 0.8, <= 1e-2 at n=129, <= 60 s direct",
    );
}

#[test]
fn criterion_3_pivot_annihilation() {
    let _g = serial();
    let mut v = Verdict::new();
    for name in ["theorem1-scalar-exact", "theorem1-matrix-neumann", "prop1-identity"] {
        let s = scenario(name);
        let (levels, _) = timed_levels(&s);
        let rows = study_rows(&levels);
        for c in evaluate_thresholds(&[max_at("pivot_psi_t", None, 1e-12)], &rows) {
            v.check(format!("{name}: {}", c.label), c.passed);
        }
    }
    v.finish(3, "Psi = F maps to sup norm <= 1e-12 in both pipelines");
}

#[test]
fn criterion_4_potential_well_defined() {
    let _g = serial();
    let s = scenario("potential-exact");
    let (levels, _) = timed_levels(&s);
    let rows = study_rows(&levels);
    let mut v = Verdict::new();
    v.thresholds(
        &[
            max_at("skew_real_defect", Some(129), 1e-3),
            max_at("path_defect", Some(129), 1e-3),
            order_band("skew_real_defect", 1.6, 2.4),
            order_band("path_defect", 1.6, 2.4),
            max_at("integrability_defect", None, 1e-10),
        ],
        &rows,
    );
    println!("skew_real_defect: {}", values(&rows, "skew_real_defect"));
    println!("path_defect: {}", values(&rows, "path_defect"));
    v.finish(
        4,
        "potential defects <= 1e-3 at n=129 with order 2.0 +- 0.4, integrability <= 1e-10",
    );
}

#[test]
fn criterion_5_prop1_covariance() {
    let _g = serial();
    let s = scenario("prop1-identity");
    assert_eq!(s.sizes, [65, 129, 257]);
    let (levels, _) = timed_levels(&s);
    let rows = study_rows(&levels);
    let mut v = Verdict::new();
    v.thresholds(
        &[min_order("psi_t_sys6", 0.8), min_order("omega_hat_roundtrip", 0.8)],
        &rows,
    );
    v.finish(5, "transformed pair residual and omega_hat round trip order >= 0.8");
}

#[test]
fn criterion_6_gauge_reduction() {
    let _g = serial();
    let s = scenario("gauge-bump");
    assert_eq!(s.n, 1);
    let (levels, _) = timed_levels(&s);
    let rows = study_rows(&levels);
    let mut v = Verdict::new();
    v.thresholds(&[max_at("gauge_ratio", None, 2.0)], &rows);
    v.finish(6, "reduced residual <= 2 x (input residual + floor) at every size");
}

#[test]
fn criterion_7_remark_equivalence() {
    let _g = serial();
    let s = scenario("remark-shifted");
    assert_eq!(s.constants.lambda_shift, [1.0, 0.0]);
    let (levels, _) = timed_levels(&s);
    let rows = study_rows(&levels);
    let mut v = Verdict::new();
    v.thresholds(
        &[
            min_order("remark_residual", 0.8),
            limit(
                "g_clean_off_singular",
                Limit {
                    min_value: Some(1.0),
                    ..Limit::default()
                },
            ),
        ],
        &rows,
    );
    v.finish(7, "remark residual order >= 0.8, g clean off the singular set");
}

#[test]
fn criterion_8_pompeiu_disk() {
    let _g = serial();
    let s = scenario("pompeiu-disk");
    assert_eq!(s.sizes, [129, 257]);
    assert_eq!((s.constants.disk_radius, s.constants.eval_radius), (1.0, 0.7));
    let (levels, _) = timed_levels(&s);
    let rows = study_rows(&levels);
    let mut v = Verdict::new();
    v.thresholds(
        &[max_at("disk_error", Some(129), 5e-2), min_order("disk_error", 1.0)],
        &rows,
    );
    println!("disk_error: {}", values(&rows, "disk_error"));
    v.finish(8, "disk identity error <= 5e-2 at n=129, halving at n=257");
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn lab(args: &[&str], out_dir: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_moutard-lab"));
    cmd.args(args)
        .arg("--out-dir")
        .arg(out_dir)
        .env_remove("MOUTARD_LAB_THREADS");
    if let Some(t) = threads {
        cmd.env("MOUTARD_LAB_THREADS", t);
    }
    cmd.output().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_9_cli_golden() {
    let _g = serial();
    let mut v = Verdict::new();
    let cases = [
        ("demo-theorem1", "ok.json", 0, None),
        ("convergence", "threshold.json", 1, Some("moutard-lab: threshold: ")),
        ("demo-theorem1", "malformed.json", 2, Some("moutard-lab: config: ")),
        (
            "demo-theorem1",
            "singular.json",
            3,
            Some("moutard-lab: singular omega: "),
        ),
    ];
    for (command, file, code, prefix) in cases {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture(file);
        let out = lab(&[command, "--config", config.to_str().unwrap()], dir.path(), None);
        let got = out.status.code();
        v.check(format!("{file}: exit {got:?} == {code}"), got == Some(code));
        let stderr = String::from_utf8_lossy(&out.stderr);
        if let Some(prefix) = prefix {
            let ok = stderr.lines().count() == 1 && stderr.starts_with(prefix);
            v.check(
                format!("{file}: stderr {:?} is one line starting {prefix:?}", stderr.trim_end()),
                ok,
            );
        }
    }

    let config = fixture("ok.json");
    let args = ["demo-theorem1", "--config", config.to_str().unwrap()];
    let runs: Vec<_> = [None, None, Some("1")]
        .into_iter()
        .map(|threads| {
            let dir = tempfile::tempdir().unwrap();
            let out = lab(&args, dir.path(), threads);
            assert!(out.status.success());
            (tree(dir.path()), out.stdout)
        })
        .collect();
    let names: Vec<&str> = runs[0].0.iter().map(|f| f.0.as_str()).collect();
    v.check(
        format!("outputs {names:?} include csv, mfield and ppm"),
        [".csv", ".mfield", ".ppm"]
            .iter()
            .all(|ext| names.iter().any(|n| n.ends_with(ext))),
    );
    v.check("repeat run is byte-identical".into(), runs[0] == runs[1]);
    v.check("single-thread run is byte-identical".into(), runs[0] == runs[2]);
    v.check(
        "--threads 0 is a config error".into(),
        lab(
            &["demo-theorem1", "--config", config.to_str().unwrap(), "--threads", "0"],
            Path::new("."),
            None,
        )
        .status
        .code()
            == Some(2),
    );
    v.finish(9, "CLI determinism and exit codes 0/1/2/3");
}
