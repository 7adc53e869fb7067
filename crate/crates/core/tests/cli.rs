use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bbm-absorb"))
}

fn run(args: &[&str], dir: &Path) -> i32 {
    bin().args(args).arg("--out").arg(dir).output().unwrap().status.code().unwrap()
}

#[test]
fn repeated_runs_give_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.toml");
    fs::write(&cfg, "command = \"simulate\"\nc = 1.5\nreplicas = 3000\nseed = 9\n[barrier]\nx = 0.5\n").unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap()], &a), 0);
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap(), "--threads", "1"], &b), 0);
    assert_eq!(fs::read(a.join("counts.csv")).unwrap(), fs::read(b.join("counts.csv")).unwrap());
    // A second run into the same directory leaves the first artifacts untouched.
    let before = fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap(), "--seed", "10"], &a), 0);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), before);
    assert!(fs::read_dir(&a).unwrap().count() > 4);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "command = \"solve-a\"\n[law]\np1 = 0.1\np2 = 0.9\n").unwrap();
    assert_eq!(run(&["run", "--config", bad.to_str().unwrap()], &tmp.path().join("v")), 2);
    let manifest = fs::read_to_string(tmp.path().join("v/manifest.json")).unwrap();
    assert!(manifest.contains("offspring mass at 1"));
    assert_eq!(run(&["wave", "--tolerance", "bogus=1"], &tmp.path().join("t")), 2);
    let cens = tmp.path().join("cens.toml");
    fs::write(&cens, "c = 1.5\nreplicas = 200\nmax_events = 1\n[barrier]\nx = 3.0\n").unwrap();
    assert_eq!(run(&["simulate", "--config", cens.to_str().unwrap()], &tmp.path().join("c")), 4);
    let out = bin().args(["compare", "/nonexistent/a.csv", "/nonexistent/b.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
