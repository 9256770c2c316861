use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use goat::formats::PriorJson;

fn goat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_goat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn verify_collapse_passes_and_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = goat(&["verify", "--suite", "collapse", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify_report.json")).unwrap())
            .unwrap();
    let entry = &report.as_array().unwrap()[0];
    assert_eq!(entry["check_name"], "collapse");
    assert_eq!(entry["failures"], 0);
    assert_eq!(entry["cases"], 10_100);
    assert!(entry["max_violation"].is_number());
}

#[test]
fn unknown_suite_and_unknown_key_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&goat(&["verify", "--suite", "nosuch", "--out", p(dir.path())])), 2);
    assert_eq!(code(&goat(&["bench", "--set", "bogus=1", "--out", p(dir.path())])), 2);
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "lengths 4\n").unwrap();
    assert_eq!(code(&goat(&["bench", "--config", p(&cfg), "--out", p(dir.path())])), 2);
}

#[test]
fn dump_prior_missing_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let o = goat(&["dump-prior", "--checkpoint", p(&missing), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.txt");
    fs::write(&cfg, "# lengths only\nlengths = 8, 16\nd_h = 32\n").unwrap();
    let o = goat(&["bench", "--config", p(&cfg), "--lengths", "4", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(text, "L,path,bytes,ns_per_token\n4,dense,128,\n4,composite,640,\n");
}

#[test]
fn bench_csv_is_byte_identical_across_reruns() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(code(&goat(&["bench", "--lengths", "64,128", "--out", p(d.path())])), 0);
    }
    assert_eq!(
        fs::read(a.path().join("bench.csv")).unwrap(),
        fs::read(b.path().join("bench.csv")).unwrap()
    );
}

/// A short run, its reproducibility, and the prior dump from its checkpoint.
#[test]
fn train_then_dump_prior() {
    let runs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &runs {
        let o = goat(&[
            "train-toy",
            "--steps",
            "3",
            "--seed",
            "5",
            "--set",
            "eval_sequences=2",
            "--set",
            "layers=1",
            "--out",
            p(d.path()),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["loss.csv", "eval.csv"] {
        let a = fs::read(runs[0].path().join(name)).unwrap();
        assert_eq!(a, fs::read(runs[1].path().join(name)).unwrap(), "{name}");
    }
    let mut loss = csv::Reader::from_path(runs[0].path().join("loss.csv")).unwrap();
    assert_eq!(loss.headers().unwrap(), vec!["step", "loss", "grad_norm", "lr"]);
    assert_eq!(loss.records().count(), 3);
    let mut eval = csv::Reader::from_path(runs[0].path().join("eval.csv")).unwrap();
    let lens: Vec<String> = eval.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(lens, ["64", "128", "256"]);

    let dump = tempfile::tempdir().unwrap();
    let ckpt = runs[0].path().join("checkpoint.json");
    let o = goat(&["dump-prior", "--checkpoint", p(&ckpt), "--head", "1", "--len", "12", "--out", p(dump.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for panel in ["k_sink", "k_rel", "k_centered", "induced_prior"] {
        let pgm = fs::read(dump.path().join(format!("{panel}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n12 12\n255\n"));
        assert_eq!(pgm.len(), b"P5\n12 12\n255\n".len() + 144);
        let rows = fs::read_to_string(dump.path().join(format!("{panel}.csv"))).unwrap();
        assert_eq!(rows.lines().count(), 12);
    }
    let prior: PriorJson =
        serde_json::from_str(&fs::read_to_string(dump.path().join("prior.json")).unwrap()).unwrap();
    assert_eq!(prior.alpha.len(), 4);

    // The saved prior alone reproduces the same panels.
    let again = tempfile::tempdir().unwrap();
    let prior_path = dump.path().join("prior.json");
    let o = goat(&["dump-prior", "--prior", p(&prior_path), "--len", "12", "--out", p(again.path())]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(dump.path().join("induced_prior.csv")).unwrap(),
        fs::read(again.path().join("induced_prior.csv")).unwrap()
    );
}

#[test]
fn baseline_checkpoint_has_no_prior_to_dump() {
    let run = tempfile::tempdir().unwrap();
    let o = goat(&[
        "train-toy",
        "--steps",
        "1",
        "--position",
        "learned_absolute",
        "--set",
        "eval_lengths=64",
        "--set",
        "eval_sequences=1",
        "--out",
        p(run.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = run.path().join("checkpoint.json");
    assert_eq!(code(&goat(&["dump-prior", "--checkpoint", p(&ckpt), "--out", p(run.path())])), 2);
}

#[test]
fn eval_below_training_length_is_a_config_error() {
    let run = tempfile::tempdir().unwrap();
    let o = goat(&["train-toy", "--steps", "1", "--set", "eval_lengths=32", "--out", p(run.path())]);
    assert_eq!(code(&o), 2);
}
