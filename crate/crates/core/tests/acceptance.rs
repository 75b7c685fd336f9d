//! Acceptance criteria 1–10, one line per criterion.
//!
//! Runs without the libtest harness so the summary lines always print.
//! Set `MNIST_DIR` to a directory holding `train-images-idx3-ubyte` and
//! `train-labels-idx1-ubyte` to include the MNIST training run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use marginflow::data;
use marginflow::runner::{self, DatasetSpec, ExperimentConfig, ExperimentReport, RunSummary, StopReason};
use marginflow::verify::{self, SuiteReport};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome { passed, detail: detail.into() }
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn suite(name: &str) -> SuiteReport {
    verify::run_suite(name).unwrap_or_else(|e| panic!("suite {name}: {e}"))
}

fn failures(report: &SuiteReport) -> String {
    let bad: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} observed {:.3e} > {:.1e}{}", c.name, c.observed, c.limit, c.note.as_ref().map(|n| format!(" ({n})")).unwrap_or_default()))
        .collect();
    if bad.is_empty() {
        format!("{} checks", report.checks.len())
    } else {
        bad.join("; ")
    }
}

fn suite_within(names: &[&str], budget: Duration) -> Outcome {
    let reports: Vec<SuiteReport> = names.iter().map(|n| suite(n)).collect();
    let elapsed: f64 = reports.iter().map(|r| r.elapsed_secs).sum();
    let ok = reports.iter().all(|r| r.passed) && elapsed < budget.as_secs_f64();
    let detail: Vec<String> = reports.iter().map(|r| format!("{}: {}", r.suite, failures(r))).collect();
    Outcome::new(ok, format!("{} [{elapsed:.2} s of {} s]", detail.join(" | "), budget.as_secs()))
}

fn criterion_2() -> Outcome {
    let r = suite("linalg");
    let names = ["orthogonalize_inner_equals_nuclear", "orthogonalize_spectral_norm_one"];
    let ok = names.iter().all(|n| r.check(n).is_some_and(|c| c.passed)) && r.elapsed_secs < 10.0;
    let worst: Vec<String> = names.iter().filter_map(|n| r.check(n)).map(|c| format!("{} {:.2e}", c.name, c.observed)).collect();
    Outcome::new(ok, format!("{} [{:.2} s of 10 s]", worst.join(", "), r.elapsed_secs))
}

fn margin(run: &RunSummary, norm: &str) -> f64 {
    run.final_margins.iter().find(|m| m.norm == norm).map_or(f64::NAN, |m| m.values.hard_margin)
}

fn by_seed<'a>(report: &'a ExperimentReport, variant: &str, seed: u64) -> &'a RunSummary {
    report.runs.iter().find(|r| r.variant == variant && r.seed == seed).expect("run present")
}

fn criterion_6(report: &ExperimentReport, elapsed: Duration) -> Outcome {
    let seeds: Vec<u64> = report.runs.iter().filter(|r| r.variant == "ngd").map(|r| r.seed).collect();
    let (mut a, mut b, mut c) = (0, 0, 0);
    for &s in &seeds {
        let [ngd, signum, adam, muon] = ["ngd", "signum", "adam", "muon"].map(|v| by_seed(report, v, s));
        if margin(signum, "linf") > margin(ngd, "linf") && margin(adam, "linf") > margin(ngd, "linf") {
            a += 1;
        }
        if margin(ngd, "l2") >= margin(signum, "l2") && margin(ngd, "l2") >= margin(adam, "l2") {
            b += 1;
        }
        if [ngd, signum, adam].iter().all(|o| margin(muon, "msp") >= margin(o, "msp")) {
            c += 1;
        }
    }
    let finished = report.runs.iter().all(|r| r.stop == StopReason::LossTarget);
    let need = 4;
    let ok = finished && a >= need && b >= need && c >= need && elapsed < Duration::from_secs(600);
    Outcome::new(
        ok,
        format!(
            "of {} seeds: linf order {a}, l2 order {b}, msp order {c}; all reached 1e-6: {finished} [{:.1} s of 600 s]",
            seeds.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7(report: &ExperimentReport) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for variant in ["ngd", "signum", "adam", "muon"] {
        let mins: Vec<f64> = report
            .runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.tail_alignment_min.unwrap_or(f64::NAN))
            .collect();
        let lowest = mins.iter().copied().fold(f64::INFINITY, |a, b| if b.is_nan() { f64::NAN } else { a.min(b) });
        ok &= lowest >= 0.99;
        parts.push(format!("{variant} min {lowest:.4}"));
    }
    Outcome::new(ok, format!("tail-25% alignment, worst seed: {}", parts.join(", ")))
}

fn criterion_8(report: &ExperimentReport) -> Outcome {
    let adam: Vec<&RunSummary> = report.runs.iter().filter(|r| r.variant == "adam").collect();
    let sign_ok = adam.iter().all(|r| r.adam_sign_tail_mean.is_some_and(|s| s <= 0.1));
    let path_ok = adam.iter().all(|r| r.adam_path_tail_max.is_some_and(|p| p <= 1.05));
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    let signs: Vec<String> = adam.iter().map(|r| fmt(r.adam_sign_tail_mean)).collect();
    let paths: Vec<String> = adam.iter().map(|r| fmt(r.adam_path_tail_max)).collect();
    Outcome::new(
        sign_ok && path_ok,
        format!("sign statistic on J_0.1 [{}] (≤ 0.1); path ratio [{}] (≤ 1.05)", signs.join(", "), paths.join(", ")),
    )
}

fn criterion_9(report: &ExperimentReport) -> Outcome {
    let mut ok = true;
    let mut worst_eps: f64 = 0.0;
    let mut worst_delta: f64 = 0.0;
    for r in report.runs.iter().filter(|r| r.variant == "ngd" || r.variant == "signum") {
        let at = |level: f64| r.kkt_checkpoints.iter().find(|c| c.level == level);
        let (Some(early), Some(late)) = (at(1e-2), at(1e-6)) else {
            ok = false;
            continue;
        };
        let eps_ratio = match (early.epsilon, late.epsilon) {
            (Some(e0), Some(e1)) => e1 / e0,
            _ => f64::INFINITY,
        };
        let delta_ratio = late.delta / early.delta;
        worst_eps = worst_eps.max(eps_ratio);
        worst_delta = worst_delta.max(delta_ratio);
        ok &= eps_ratio <= 0.1 && delta_ratio <= 0.1;
    }
    Outcome::new(ok, format!("worst ratio late/early over NGD and Signum seeds: epsilon {worst_eps:.3}, delta {worst_delta:.3} (each ≤ 0.1)"))
}

/// Three 28×28 images with hand-written big-endian headers.
fn idx_fixture() -> (Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>) {
    let pixels: Vec<u8> = (0..3 * 784).map(|i| ((i * 37 + i / 784) % 256) as u8).collect();
    let digits = vec![7u8, 2, 0];
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 28, 0, 0, 0, 28];
    images.extend_from_slice(&pixels);
    let mut labels = vec![0, 0, 8, 1, 0, 0, 0, 3];
    labels.extend_from_slice(&digits);
    (images, labels, pixels, digits)
}

fn criterion_10(scratch: &Path) -> Outcome {
    let (images, labels, pixels, digits) = idx_fixture();
    let img_path = scratch.join("fixture-images-idx3-ubyte");
    let lbl_path = scratch.join("fixture-labels-idx1-ubyte");
    std::fs::write(&img_path, &images).unwrap();
    std::fs::write(&lbl_path, &labels).unwrap();
    let raw = data::parse_idx(&img_path, &lbl_path).expect("fixture parses");
    let exact = raw.rows == 28
        && raw.cols == 28
        && raw.digits == digits
        && raw.pixels.len() == pixels.len()
        && raw.pixels.iter().zip(&pixels).all(|(p, &b)| *p == f64::from(b) / 255.0 && (p * 255.0).round() as u8 == b);
    let reencoded = data::encode_idx(28, 28, &pixels, &digits);
    let bytes_match = reencoded.0 == images && reencoded.1 == labels;
    let fixture = exact && bytes_match;

    let Some(dir) = std::env::var_os("MNIST_DIR").map(PathBuf::from) else {
        return Outcome::new(fixture, format!("fixture round trip bit-exact: {fixture}; MNIST training skipped (MNIST_DIR not set)"));
    };
    let mut cfg = ExperimentConfig::load(&configs_dir().join("mnist.json")).expect("mnist config");
    cfg.dataset = DatasetSpec::Mnist {
        images: dir.join("train-images-idx3-ubyte"),
        labels: dir.join("train-labels-idx1-ubyte"),
        m: 256,
        seed: None,
        cache_dir: Some(scratch.join("cache")),
    };
    cfg.output_dir = scratch.join("mnist");
    let start = Instant::now();
    let report = match runner::run(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("fixture {fixture}; MNIST run failed: {e}")),
    };
    let elapsed = start.elapsed();
    let run = &report.runs[0];
    let csv_ok = run.csv.as_ref().and_then(|p| std::fs::read_to_string(p).ok()).is_some_and(|text| {
        let mut lines = text.lines();
        let width = lines.next().map_or(0, |h| h.split(',').count());
        let rows: Vec<&str> = lines.collect();
        !rows.is_empty()
            && rows.iter().all(|l| l.split(',').count() == width)
            && rows.last().and_then(|l| l.split(',').nth(1)).and_then(|s| s.parse::<u64>().ok()) == Some(run.steps)
    });
    let ok = fixture && run.final_loss <= 1e-4 && elapsed < Duration::from_secs(300) && csv_ok;
    Outcome::new(
        ok,
        format!(
            "fixture {fixture}; MNIST m=256 loss {:.3e} after {} steps in {:.1} s; CSV complete: {csv_ok}",
            run.final_loss,
            run.steps,
            elapsed.as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("scratch dir");
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();

    results.push((1, "dual-norm and steepest-direction identities", suite_within(&["norms"], Duration::from_secs(5))));
    results.push((2, "orthogonalization", criterion_2()));
    results.push((3, "homogeneity, Euler identity, gradients", suite_within(&["models"], Duration::from_secs(60))));
    results.push((4, "EMA asymptotics and Adam ratio bound", suite_within(&["ema", "adam-bounds"], Duration::from_secs(20))));
    results.push((5, "soft-margin monotonicity", suite_within(&["nsd-monotonicity"], Duration::from_secs(60))));

    let mut cfg = ExperimentConfig::load(&configs_dir().join("margin_ordering.json")).expect("margin ordering config");
    cfg.output_dir = scratch.path().join("margin_ordering");
    let start = Instant::now();
    let report = runner::sweep(&cfg).expect("margin ordering sweep");
    let elapsed = start.elapsed();
    results.push((6, "margin ordering", criterion_6(&report, elapsed)));
    results.push((7, "parameter alignment", criterion_7(&report)));
    results.push((8, "Adam probes", criterion_8(&report)));
    results.push((9, "KKT residual decay", criterion_9(&report)));
    results.push((10, "MNIST pipeline", criterion_10(scratch.path())));

    println!();
    for (n, title, o) in &results {
        println!("criterion {n:>2} {}: {title}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|(_, _, o)| !o.passed).count();
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
