//! End-to-end checks of the `midterm-epf` binary: exit codes, manifests and reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use epf_cli::synthetic::{generate_synthetic, SyntheticConfig, FUTURES_LEAD_DAYS};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_midterm-epf"));
    cmd.env_remove("MIDTERM_EPF_CONFIG").env_remove("MIDTERM_EPF_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap()
}

/// Generates a four-year market into `dir/synthetic` and returns its directory.
fn generated(dir: &Path) -> PathBuf {
    let out = dir.join("synthetic");
    let o = run(&["generate", "--years", "4", "--seed", "3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out
}

#[test]
fn help_and_version_exit_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["generate", "ingest", "seasonal", "backtest", "eval", "diag", "report", "demo"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["backtest", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_is_a_user_error() {
    let o = run(&["generate", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus-flag"), "{}", stderr(&o));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn missing_input_exits_one_and_records_the_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    let missing = tmp.path().join("absent.csv");
    let o = run(&["ingest", "--hourly", s(&missing), "--futures", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error["), "{}", stderr(&o));
    assert!(stderr(&o).contains("absent.csv"), "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["status"], "error");
    assert!(m["error"].as_str().unwrap().contains("absent.csv"));
}

#[test]
fn corrupt_row_exits_one_and_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let synthetic = generated(tmp.path());
    let hourly = fs::read_to_string(synthetic.join("hourly.csv")).unwrap();
    let mut lines: Vec<String> = hourly.lines().map(str::to_owned).collect();
    let fields: Vec<&str> = lines[100].split(',').collect();
    lines[100] = format!("{},not-a-number,{}", fields[0], fields[2..].join(","));
    let corrupt = tmp.path().join("corrupt.csv");
    fs::write(&corrupt, lines.join("\n")).unwrap();
    let out = tmp.path().join("data");
    let o = run(&["ingest", "--hourly", s(&corrupt), "--futures", s(&synthetic.join("futures.csv")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("line 101"), "{}", stderr(&o));
}

#[test]
fn impossible_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    for set in ["solver.alpha=2", "window_rows=0", "no_such_key=1", "bounds.gas=0,1"] {
        let o = run(&["generate", "--set", set, "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(1), "{set}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error[config]:"), "{set}: {}", stderr(&o));
    }
    let cfg = tmp.path().join("bad.conf");
    fs::write(&cfg, "seed = 1\nwindow_rows = lots\n").unwrap();
    let o = run(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(":2"), "{}", stderr(&o));
    let o = run(&["generate", "--years", "2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_an_internal_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = run(&["generate", "--years", "4", "--out", s(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn reruns_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let synthetic = generated(tmp.path());
    let first = snapshot(&synthetic);
    generated(tmp.path());
    assert_eq!(first, snapshot(&synthetic));

    let data = tmp.path().join("data");
    let ingest = |out: &Path| {
        let o = run(&["ingest", "--hourly", s(&synthetic.join("hourly.csv")), "--futures", s(&synthetic.join("futures.csv")), "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    };
    ingest(&data);
    let first = snapshot(&data);
    ingest(&data);
    assert_eq!(first, snapshot(&data));
    let m = manifest(&data);
    assert_eq!(m["status"], "ok");
    assert!(m["outputs"].as_array().is_some_and(|a| !a.is_empty()));

    let adf = |out: &Path| {
        let o = run(&["diag", "adf", "--data", s(&data), "--hour", "12", "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    };
    let diag = tmp.path().join("diag");
    adf(&diag);
    let first = snapshot(&diag);
    adf(&diag);
    assert_eq!(first, snapshot(&diag));
}

#[test]
fn synthetic_price_follows_gas() {
    let market = generate_synthetic(&SyntheticConfig { years: 4, ..SyntheticConfig::default() }).unwrap();
    let ds = &market.dataset;
    let (mut price, mut gas) = (Vec::new(), Vec::new());
    for d in 0..ds.n_days() {
        price.push((1..=24u8).map(|h| ds.price(d, h)).sum::<f64>() / 24.0);
        gas.push(market.spot[FUTURES_LEAD_DAYS as usize + d][1]);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mp, mg) = (mean(&price), mean(&gas));
    let cov: f64 = price.iter().zip(&gas).map(|(p, g)| (p - mp) * (g - mg)).sum();
    let vp: f64 = price.iter().map(|p| (p - mp).powi(2)).sum();
    let vg: f64 = gas.iter().map(|g| (g - mg).powi(2)).sum();
    let r = cov / (vp * vg).sqrt();
    assert!(r > 0.5, "price-gas correlation {r}");
}
