use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lrtdvp"))
}

const SMALL: &str = r#"
seed = 7
observables = ["M_z", "dM_y"]

[model]
name = "xyz"
lx = 2
ly = 2

[solver]
t1 = 0.5

[rank]
eps_max = 1e-3
eps_min = 1e-6

[output]
name = "small"
samples = 5
dump_state = true
"#;

fn write_cfg(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cfg: &Path, out: &Path) -> std::process::Output {
    bin().arg("run").arg(cfg).arg("--output-dir").arg(out).arg("--quiet").output().unwrap()
}

#[test]
fn run_writes_records() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), "c.toml", SMALL);
    let out = d.path().join("out");
    let o = run(&cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let samples = fs::read_to_string(out.join("small.samples.csv")).unwrap();
    let lines: Vec<&str> = samples.lines().collect();
    assert!(lines[0].starts_with("t,"));
    assert!(lines[0].contains("M_z"));
    assert_eq!(lines.len(), 1 + 6);
    assert!(out.join("small.events.csv").exists());
    assert!(out.join("small.state.csv").exists());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("small.json")).unwrap()).unwrap();
    assert_eq!(meta["engine"], "lrtdvp");
    assert!(meta["aborted"].is_null());
    assert!(meta["config"].as_str().unwrap().contains("[model]"));
}

#[test]
fn identical_seeds_give_identical_records() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), "c.toml", SMALL);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert!(run(&cfg, &a).status.success());
    assert!(run(&cfg, &b).status.success());
    for f in ["small.samples.csv", "small.events.csv", "small.state.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn recorded_config_reproduces_the_run() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), "c.toml", SMALL);
    let a = d.path().join("a");
    assert!(run(&cfg, &a).status.success());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("small.json")).unwrap()).unwrap();
    let again = write_cfg(d.path(), "again.toml", meta["config"].as_str().unwrap());
    let b = d.path().join("b");
    let o = run(&again, &b);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("small.samples.csv")).unwrap(), fs::read(b.join("small.samples.csv")).unwrap());
}

#[test]
fn unknown_key_exits_with_config_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), "bad.toml", &SMALL.replace("lx = 2", "lx = 2\nlz = 3"));
    let o = run(&cfg, &d.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lz"));
    assert!(!d.path().join("out").join("small.samples.csv").exists());
}

#[test]
fn invalid_value_exits_with_config_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), "bad.toml", &SMALL.replace("eps_min = 1e-6", "eps_min = 1e-2"));
    assert_eq!(run(&cfg, &d.path().join("out")).status.code(), Some(2));
}

#[test]
fn sweep_writes_one_record_per_value_and_a_summary() {
    let d = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[sweep]\nparameter = \"model.jy\"\nvalues = [0.9, 1.1, 1.3]\n");
    let cfg = write_cfg(d.path(), "s.toml", &text);
    let out = d.path().join("out");
    let o = bin().arg("run").arg(&cfg).arg("--output-dir").arg(&out).args(["--workers", "2", "--quiet"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for k in 0..3 {
        assert!(out.join(format!("small_{k:03}.samples.csv")).exists());
    }
    let summary = fs::read_to_string(out.join("small.summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("model.jy,status"));
    assert!(rows[1..].iter().all(|r| r.contains(",ok,")));
}

#[test]
fn compare_against_itself_and_the_oracle() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), "c.toml", SMALL);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert!(run(&cfg, &a).status.success());
    let o = bin().arg("run").arg(&cfg).arg("--output-dir").arg(&b).args(["--engine", "oracle", "--quiet"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let same = bin().arg("compare").arg(a.join("small.samples.csv")).arg(a.join("small.samples.csv")).output().unwrap();
    assert!(same.status.success());
    let report = String::from_utf8_lossy(&same.stdout).to_string();
    assert!(report.contains("PASS"), "{report}");

    let vs = bin()
        .arg("compare")
        .arg(a.join("small.samples.csv"))
        .arg(b.join("small.samples.csv"))
        .args(["--tol", "1e-3"])
        .output()
        .unwrap();
    assert!(vs.status.success(), "{}", String::from_utf8_lossy(&vs.stdout));
    assert!(String::from_utf8_lossy(&vs.stdout).contains("overlap"));

    let strict = bin()
        .arg("compare")
        .arg(a.join("small.samples.csv"))
        .arg(b.join("small.samples.csv"))
        .args(["--tol", "1e-15", "--quiet"])
        .output()
        .unwrap();
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn compare_rejects_a_missing_file() {
    let d = tempfile::tempdir().unwrap();
    let o = bin().arg("compare").arg(d.path().join("nope.csv")).arg(d.path().join("nope.csv")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
