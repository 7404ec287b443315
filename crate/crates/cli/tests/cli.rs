use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const M0: &str = r#"{"h":"1","atoms":[
  {"i":-1,"x":-1,"s":0,"sigma":-1,"p":"1/2"},
  {"i":-1,"x":-1,"s":1,"sigma":-1,"p":"1/6"},
  {"i":0,"x":2,"s":2,"sigma":1,"p":"1/3"}]}"#;

// Stopping at -1 after a visit to +1 cannot carry half the mass.
const INCONSISTENT: &str = r#"{"h":"1","atoms":[
  {"i":0,"x":1,"s":1,"sigma":1,"p":"1/2"},
  {"i":-1,"x":-1,"s":1,"sigma":-1,"p":"1/2"}]}"#;

const BAD_SIGMA: &str = r#"{"h":"1","atoms":[{"i":0,"x":0,"s":0,"sigma":0,"p":"1"}]}"#;

const M0_MARKET: &str = r#"{"h":"1","box":[4,4],"calls":[
  {"K":"-1","C":"1"},{"K":"0","C":"2/3"},{"K":"1","C":"1/3"},{"K":"2","C":"0"}]}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rangewalk"))
        .args(args)
        .env_remove("RANGEWALK_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn fixture(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["check", s(&fixture(&dir, "m0.json", M0))])), 0);
    assert_eq!(code(&run(&["check", s(&fixture(&dir, "bad.json", INCONSISTENT))])), 2);
    let out = run(&["check", s(&fixture(&dir, "sigma.json", BAD_SIGMA))]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("support error"), "{err}");
    assert_eq!(code(&run(&["check", "/nonexistent/m.json"])), 1);
}

#[test]
fn check_report_lists_cells() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("report.json");
    let out = run(&["--json", "check", s(&fixture(&dir, "m0.json", M0)), "--report", s(&report)]);
    assert_eq!(code(&out), 0);
    let stdout: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stdout["consistent"], true);
    let full: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert!(full["cells"].as_array().unwrap().iter().all(|c| c["holds"] == true));
}

#[test]
fn derive_refuses_inconsistent_measure() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("rule.json");
    assert_eq!(code(&run(&["derive", s(&fixture(&dir, "bad.json", INCONSISTENT)), "--out", s(&out)])), 2);
    assert!(!out.exists());
    assert_eq!(code(&run(&["derive", s(&fixture(&dir, "m0.json", M0)), "--out", s(&out)])), 0);
    assert!(std::fs::read_to_string(out).unwrap().contains("\"cells\""));
}

#[test]
fn simulate_csv_ends_with_tv_line() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("sim.csv");
    let m0 = fixture(&dir, "m0.json", M0);
    assert_eq!(code(&run(&["simulate", s(&m0), "--paths", "20000", "--seed", "4", "--csv", s(&csv)])), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "i,x,s,sigma,count,freq,target,abs_err");
    assert_eq!(lines.len(), 5);
    let tv: f64 = lines[4].strip_prefix("# tv_distance=").unwrap().parse().unwrap();
    assert!(tv < 0.02);
}

#[test]
fn runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let m0 = fixture(&dir, "m0.json", M0);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let first = run(&["--threads", "1", "simulate", s(&m0), "--paths", "5000", "--seed", "9", "--csv", s(&a)]);
    let second = run(&["--threads", "3", "simulate", s(&m0), "--paths", "5000", "--seed", "9", "--csv", s(&b)]);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn oracle_round_trips_through_check() {
    let dir = TempDir::new().unwrap();
    let rule = fixture(&dir, "rule.json", r#"{"box":[1,2],"stop":[]}"#);
    let law = dir.path().join("law.json");
    assert_eq!(code(&run(&["oracle", s(&rule), "--out", s(&law)])), 0);
    let got: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&law).unwrap()).unwrap();
    let want: serde_json::Value = serde_json::from_str(M0).unwrap();
    assert_eq!(got, want);
    assert_eq!(code(&run(&["check", s(&law)])), 0);
}

#[test]
fn maxcheck_modes() {
    let dir = TempDir::new().unwrap();
    let good = fixture(
        &dir,
        "sx.json",
        r#"{"atoms":[{"s":0,"x":-1,"p":"1/2"},{"s":1,"x":-1,"p":"1/6"},{"s":2,"x":2,"p":"1/3"}]}"#,
    );
    assert_eq!(code(&run(&["maxcheck", s(&good)])), 0);
    assert_eq!(code(&run(&["maxcheck", s(&good), "--mode", "ui"])), 0);
    // Too much terminal mass above a level reached too rarely.
    let bad = fixture(&dir, "bad.json", r#"{"atoms":[{"s":0,"x":-1,"p":"2/3"},{"s":2,"x":2,"p":"1/3"}]}"#);
    assert_eq!(code(&run(&["maxcheck", s(&bad)])), 2);
    // Stopped but not uniformly integrable: a negative mean.
    let drift = fixture(&dir, "drift.json", r#"{"atoms":[{"s":0,"x":-1,"p":"1"}]}"#);
    assert_eq!(code(&run(&["maxcheck", s(&drift)])), 0);
    assert_eq!(code(&run(&["maxcheck", s(&drift), "--mode", "ui"])), 2);
    // The law of the first passage to 1 has mean 1.
    let h1 = fixture(&dir, "h1.json", r#"{"atoms":[{"s":1,"x":1,"p":"1"}]}"#);
    assert_eq!(code(&run(&["maxcheck", s(&h1), "--mode", "ui"])), 2);
    let point = fixture(&dir, "point.json", r#"{"atoms":[{"s":0,"x":0,"p":"1"}]}"#);
    assert_eq!(code(&run(&["maxcheck", s(&point)])), 0);
}

#[test]
fn hedge_verify_passes_on_m0() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("table.csv");
    let out = run(&["hedge-verify", s(&fixture(&dir, "m0.json", M0)), "--paths", "3000", "--csv", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("row,a,b,x,z,y,matches"));
}

#[test]
fn price_certifies_on_m0_market() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("price.json");
    let market = fixture(&dir, "market.json", M0_MARKET);
    let out = run(&["price", s(&market), "--payoff", "range", "--paths", "5000", "--out", s(&out_path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let res: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_path).unwrap()).unwrap();
    assert_eq!(res["exact_value"], "3/2");
    assert_eq!(res["certification"]["passed"], true);

    for payoff in ["lookback_max", "digital_max:2", "digital_min:1", "signature_digital:-1"] {
        let out = run(&["price", s(&market), "--payoff", payoff, "--paths", "2000"]);
        assert_eq!(code(&out), 0, "{payoff}: {}", String::from_utf8_lossy(&out.stdout));
    }
}

#[test]
fn price_rejects_bad_input() {
    let dir = TempDir::new().unwrap();
    let market = fixture(&dir, "market.json", M0_MARKET);
    assert_eq!(code(&run(&["price", s(&market), "--payoff", "straddle"])), 1);
    let infeasible = fixture(&dir, "inf.json", r#"{"h":"1","box":[2,2],"calls":[{"K":"0","C":"5"}]}"#);
    assert_eq!(code(&run(&["price", s(&infeasible), "--paths", "100"])), 2);
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["check"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
}
