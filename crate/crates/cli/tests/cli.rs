use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use tempfile::TempDir;

/// 60 nodes in 3 classes with 80 features (wide enough for the residual
/// variant at hidden width 64); most edges join nodes of the same class.
fn write_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let mut content = String::new();
    for i in 0..60 {
        let class = i % 3;
        let mut row = [0u8; 80];
        row[class] = 1;
        row[3 + (i * 7 % 77)] = 1;
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        content.push_str(&format!("n{i}\t{}\tclass{class}\n", fields.join("\t")));
    }
    let mut cites = String::new();
    for i in 0..60 {
        cites.push_str(&format!("n{i}\tn{}\n", (i + 3) % 60));
        if i % 10 == 0 {
            cites.push_str(&format!("n{i}\tn{}\n", (i + 1) % 60));
        }
    }
    let c = dir.join("tiny.content");
    let e = dir.join("tiny.cites");
    fs::write(&c, content).unwrap();
    fs::write(&e, cites).unwrap();
    (c, e)
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = TempDir::new().unwrap();
    let (content, cites) = write_fixture(dir.path());
    let config = dir.path().join("spec.toml");
    fs::write(
        &config,
        format!(
            "[dataset]\nname = \"custom\"\ncontent = {:?}\ncites = {:?}\n\n\
             [model]\nhidden_dim = 8\n\n\
             [train]\nepochs = 5\nnum_runs = 2\n\n\
             [train.split]\ntrain_per_class = 4\nnum_val = 12\nnum_test = 24\n",
            content, cites
        ),
    )
    .unwrap();
    Fixture { dir, config }
}

fn ggnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ggnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn compare_writes_a_well_formed_csv_quickly() {
    let f = fixture();
    let out = f.dir.path().join("cmp");
    let start = Instant::now();
    let o = ggnn(&["compare", "--config", s(&f.config), "--out-dir", s(&out)]);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(elapsed < 5.0, "compare took {elapsed:.2}s");

    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "variant,train_mean,train_std,test_mean,test_std,time_mean_seconds"
    );
    assert_eq!(lines.len(), 5);
    let mut variants = Vec::new();
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6, "{line}");
        variants.push(fields[0]);
        for v in &fields[1..] {
            let x: f64 = v.parse().unwrap();
            assert!(x.is_finite() && x >= 0.0, "{line}");
        }
    }
    variants.sort();
    assert_eq!(variants, ["gnn", "learnable_ggnn", "pmlp", "residual_ggnn"]);
    let settings = fs::read_to_string(out.join("compare_settings.txt")).unwrap();
    assert!(settings.contains("learnable_ggnn: learning_rate=0.1 weight_decay=0.1 dropout=0.1 hidden=64 epochs=50"));
    assert!(out.join("compare_pmlp.json").exists());
}

#[test]
fn missing_dataset_path_is_an_input_error_with_no_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("nowhere");
    for cmd in ["train", "compare", "sweep"] {
        let o = ggnn(&[
            cmd,
            "--dataset",
            "cora",
            "--data-dir",
            s(&missing),
            "--out-dir",
            s(&out),
        ]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
        assert!(!out.exists(), "{cmd} created its output directory");
    }
}

#[test]
fn train_is_reproducible_and_writes_every_artifact() {
    let f = fixture();
    let a = f.dir.path().join("a");
    let b = f.dir.path().join("b");
    for out in [&a, &b] {
        let o = ggnn(&[
            "train",
            "--config",
            s(&f.config),
            "--out-dir",
            s(out),
            "--seed",
            "3",
            "--variant",
            "residual_ggnn",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in [
        "report.json",
        "curves_seed3.csv",
        "curves_seed4.csv",
        "checkpoint_seed3.ckpt",
        "checkpoint_seed4.ckpt",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    assert!(a.join("timing.json").exists());
    let curves = fs::read_to_string(a.join("curves_seed3.csv")).unwrap();
    assert_eq!(curves.lines().count(), 6);
}

#[test]
fn threads_do_not_change_results() {
    let f = fixture();
    let a = f.dir.path().join("a");
    let b = f.dir.path().join("b");
    assert!(
        ggnn(&["train", "--config", s(&f.config), "--out-dir", s(&a), "--threads", "1"])
            .status
            .success()
    );
    assert!(
        ggnn(&["train", "--config", s(&f.config), "--out-dir", s(&b), "--threads", "2"])
            .status
            .success()
    );
    assert_eq!(
        fs::read(a.join("report.json")).unwrap(),
        fs::read(b.join("report.json")).unwrap()
    );
}

#[test]
fn sweep_over_layers() {
    let f = fixture();
    let out = f.dir.path().join("sw");
    let o = ggnn(&[
        "sweep",
        "--config",
        s(&f.config),
        "--out-dir",
        s(&out),
        "--variant",
        "gnn",
        "--layers",
        "2,3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "alpha,num_layers,test_mean,test_std,val_mean");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.100000,2,") && lines[2].starts_with("0.100000,3,"));
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let f = fixture();
    let out = f.dir.path().join("bad");
    let alpha_on_gnn = ggnn(&[
        "sweep",
        "--config",
        s(&f.config),
        "--out-dir",
        s(&out),
        "--variant",
        "gnn",
        "--alphas",
        "0,0.1",
    ]);
    assert_eq!(alpha_on_gnn.status.code(), Some(2));
    let unordered = ggnn(&[
        "sweep",
        "--config",
        s(&f.config),
        "--out-dir",
        s(&out),
        "--layers",
        "3,2",
    ]);
    assert_eq!(unordered.status.code(), Some(2));
    let bad_key = f.dir.path().join("bad.toml");
    fs::write(&bad_key, "[train]\nlearning_rat = 0.1\n").unwrap();
    let o = ggnn(&["train", "--config", s(&bad_key), "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));
    assert!(!out.exists());
}

#[test]
fn check_passes() {
    let o = ggnn(&["check", "--trials", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().count() >= 10);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")));
}
