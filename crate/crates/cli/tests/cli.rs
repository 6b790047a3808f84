use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use topoforge::io::{read_history, read_pgm, SolveRecord};

const TINY: &str = "\
# small problem for command tests
[mesh]
nx = 12
ny = 4

[density]
local_radius = 2.5
filter_radius = 1.5

[solver]
max_inner_iters = 10
max_al_loops = 3

[generator]
hidden_layers = 8

[training]
epochs = 60

[learning]
strategy = theory
initial_size = 2
validation_size = 4
test_size = 3
static_size = 3
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_topoforge"));
    c.env("TOPOFORGE_THREADS", "1");
    c
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.ini");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_deterministic_record_and_image() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&["solve", "--config", s(&cfg), "--setting", "1.5707963267948966", "--out", s(out)]);
    }
    let ra = std::fs::read(a.join("record.tdto")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("record.tdto")).unwrap());
    let rec = SolveRecord::from_bytes(&ra).unwrap();
    assert!(rec.fea_count >= 1 && rec.f > 0.0);
    let (rho, nx, ny) = read_pgm(&a.join("design.pgm")).unwrap();
    assert_eq!((nx, ny, rho.len()), (12, 4, 48));
}

#[test]
fn malformed_config_exits_with_code_two_naming_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.ini");
    std::fs::write(&cfg, "[mesh]\nnx = twelve\n").unwrap();
    let out = bin().args(["solve", "--config", s(&cfg), "--out", s(dir.path())]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mesh.nx"));

    std::fs::write(&cfg, "[solver]\nno_such_key = 1\n").unwrap();
    let out = bin().args(["solve", "--config", s(&cfg), "--out", s(dir.path())]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn run_generate_eval_score_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let stdout = run_ok(&["run", "--config", s(&cfg), "--strategy", "static,theory", "--seeds", "2", "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&stdout.stdout).contains("theory"));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.starts_with("mean,")).count(), 2);
    assert_eq!(summary.lines().filter(|l| l.starts_with("std,")).count(), 2);
    let history = read_history(&out.join("theory-seed0/history.csv")).unwrap();
    assert!(!history.is_empty());
    let model = out.join("theory-seed0/model.tdto");
    assert!(model.is_file());

    let g1 = dir.path().join("g1");
    let g2 = dir.path().join("g2");
    let o = run_ok(&["generate", "--config", s(&cfg), "--model", s(&model), "--setting", "1.0", "--out", s(&g1)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("latency"));
    run_ok(&["generate", "--config", s(&cfg), "--model", s(&model), "--setting", "1.0", "--out", s(&g2)]);
    assert_eq!(std::fs::read(g1.join("generated.pgm")).unwrap(), std::fs::read(g2.join("generated.pgm")).unwrap());

    let o = run_ok(&["generate", "--config", s(&cfg), "--model", s(&model), "--setting", "7", "--out", s(&g1)]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("outside"));

    let truth_dir = std::fs::read_dir(out.join("cache")).unwrap().next().unwrap().unwrap().path();
    let o = run_ok(&["eval", "--config", s(&cfg), "--model", s(&model), "--truth", s(&truth_dir)]);
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(text.contains("median gap") && text.contains("failure rate"));

    let record = std::fs::read_dir(out.join("theory-seed0/dataset")).unwrap().next().unwrap().unwrap().path();
    let o = run_ok(&["score", "--config", s(&cfg), "--record", s(&record)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("fea 1"));
    let o = run_ok(&["score", "--config", s(&cfg), "--model", s(&model), "--setting", "0.5"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains(" d "));

    let pgm = dir.path().join("rec.pgm");
    run_ok(&["export-pgm", "--config", s(&cfg), "--record", s(&record), "--out", s(&pgm)]);
    assert_eq!(read_pgm(&pgm).unwrap().1, 12);
}

#[test]
fn generate_rejects_mismatched_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let arch = topoforge::generator::Architecture::new(vec![2, 4, 10], topoforge::generator::Activation::Tanh).unwrap();
    let model = dir.path().join("m.tdto");
    topoforge::generator::init(&arch, 0).save(&model).unwrap();
    let out = bin().args(["generate", "--config", s(&cfg), "--model", s(&model), "--setting", "1.0", "--out", s(dir.path())]).output().unwrap();
    assert!(!out.status.success());
}
