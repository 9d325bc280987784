use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use prevalens::evaluation::{read_results, Metric, RESULTS_HEADER, SUMMARY_HEADER};
use prevalens::pipeline::{FAILED, MANIFEST, PLOT, RESULTS, SUMMARY};

fn prevalens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prevalens"))
        .args(args)
        .env("PREVALENS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec![
        "--quiet",
        "run",
        "--classifier",
        "oracle",
        "--n-docs",
        "1200",
        "--n-test",
        "1200",
        "--trials",
        "2",
        "--sample-size",
        "40",
        "--seeds",
        "3,4",
        "--quanet-max-iter",
        "20",
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    prevalens(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = small_run(&out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [MANIFEST, SUMMARY, PLOT] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join(FAILED).exists());
    for seed in ["seed-3", "seed-4"] {
        for f in [RESULTS, SUMMARY, PLOT, "quanet.qnt"] {
            assert!(out.join(seed).join(f).is_file(), "{seed}/{f}");
        }
        let rows = read_results(out.join(seed).join(RESULTS)).unwrap();
        assert_eq!(rows.len(), 6 * 21 * 2);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.est_prev)));
    }
    let results = fs::read_to_string(out.join("seed-3").join(RESULTS)).unwrap();
    assert_eq!(results.lines().next().unwrap(), RESULTS_HEADER.join(","));
    let summary = fs::read_to_string(out.join(SUMMARY)).unwrap();
    assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER.join(","));
    assert_eq!(summary.lines().count(), 1 + 6 * Metric::ALL.len());
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let o = small_run(&first, &["--quantifiers", "cc,acc,quanet"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let second = dir.path().join("b");
    let manifest = first.join(MANIFEST);
    let o = prevalens(&[
        "--quiet",
        "run",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["seed-3/results.csv", "seed-4/results.csv", SUMMARY, PLOT] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn report_marks_the_best_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = small_run(&out, &["--quantifiers", "cc,acc,pcc"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = prevalens(&["report", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    for m in ["cc", "acc", "pcc", "AE", "RAE", "KLD"] {
        assert!(text.contains(m), "{text}");
    }
    let stars: usize = text
        .lines()
        .filter(|l| !l.starts_with("runs:"))
        .map(|l| l.matches('*').count())
        .sum();
    assert_eq!(stars, 3, "{text}");
    assert!(text.contains("runs: 2"), "{text}");
}

#[test]
fn no_quantifiers_fails_with_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    let o = small_run(&out, &["--quantifiers", ""]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no quantifiers selected"), "{}", stderr(&o));
    let marker = fs::read_to_string(out.join(FAILED)).unwrap();
    assert!(marker.starts_with("[config] "), "{marker}");
    assert!(marker.contains("no quantifiers selected"), "{marker}");
}

#[test]
fn bad_arguments_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = small_run(&out, &["--quantifiers", "cc,svm"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown quantifier"), "{}", stderr(&o));

    let o = small_run(&out, &["--classifier", "mnb", "--quantifiers", "quanet"]);
    assert!(!o.status.success());

    let o = prevalens(&["report", dir.path().join("missing").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: "), "{}", stderr(&o));
}
