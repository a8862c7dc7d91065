use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const STATISTICS: &str = r#"
protocol = "statistics"
seed = 17
frames = 300

[source]
kind = "twin-beam"
mu = 0.1
modes_per_pixel = 50

[detector]
efficiency = 0.7
width = 4
height = 4
"#;

const QI: &str = r#"
protocol = "qi"
seed = 3
frames = 1000

[qi]
source = "twin-beam"
n = 0.5
modes = 20
n_b = 30.0
m_b = 1000.0
eta_p = 0.8
eta_r = 0.9
target_present = true
"#;

const BINNING: &str = r#"
protocol = "statistics"
seed = 5
frames = 100

[source]
kind = "twin-beam"
mu = 0.5
modes_per_pixel = 10

[detector]
efficiency = 0.8
width = 24
height = 24

[sweep]
axis = "binning"
values = [1, 2, 3, 4, 5, 6, 7, 8]
"#;

const PNR: &str = r#"
protocol = "calibration"
seed = 7
frames = 2

[calibration]
method = "pnr"
gamma = 0.6
xi = 0.9
heralded_events = 100000
unheralded_events = 100000
background = { kind = "poisson", mean = 0.7 }
"#;

struct Dir(tempfile::TempDir);

impl Dir {
    fn new() -> Self {
        Self(tempfile::tempdir().unwrap())
    }

    fn file(&self, name: &str, text: &str) -> PathBuf {
        let p = self.0.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }
}

fn twinlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinlab")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = rows[0].iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn simulate_is_reproducible_across_runs_and_threads() {
    let d = Dir::new();
    let cfg = d.file("stats.toml", STATISTICS);
    let (a, b, c, e) = (d.path("a.twbf"), d.path("b.twbf"), d.path("c.twbf"), d.path("e.twbf"));
    ok(&twinlab(&["--config", s(&cfg), "--out", s(&a), "simulate"]));
    ok(&twinlab(&["--config", s(&cfg), "--out", s(&b), "--threads", "1", "simulate"]));
    ok(&twinlab(&["--config", s(&cfg), "--out", s(&c), "--threads", "4", "simulate"]));
    ok(&twinlab(&["--config", s(&cfg), "--out", s(&e), "--seed", "18", "simulate"]));
    let bytes = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(bytes(&a), bytes(&c));
    assert_ne!(bytes(&a), bytes(&e));
    assert_eq!(bytes(&a).len(), 72 + 300 * 16 * 2 * 4);
}

#[test]
fn estimates_carry_provenance_and_reject_foreign_configs() {
    let d = Dir::new();
    let cfg = d.file("stats.toml", STATISTICS);
    let frames = d.path("run.twbf");
    ok(&twinlab(&["--config", s(&cfg), "--out", s(&frames), "simulate"]));
    let report: serde_json::Value =
        serde_json::from_str(&ok(&twinlab(&["--config", s(&cfg), "estimate", s(&frames)]))).unwrap();
    assert_eq!(report["seed"], 17);
    assert_eq!(report["protocol"], "statistics");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    let nrf = report["results"].as_array().unwrap().iter().find(|r| r["scope"] == "pooled over pixels").unwrap();
    let (v, se, p) = (nrf["value"].as_f64().unwrap(), nrf["standard_error"].as_f64().unwrap(), nrf["prediction"].as_f64().unwrap());
    assert!((p - 0.3).abs() < 1e-12);
    assert!((v - p).abs() < 5.0 * se, "{v} ± {se} vs {p}");

    let other = twinlab(&["--config", s(&cfg), "--seed", "99", "estimate", s(&frames)]);
    assert_eq!(other.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&other.stderr).contains("hash mismatch"));
}

#[test]
fn predict_on_qi_tabulates_the_inverse_occupation_gain() {
    let d = Dir::new();
    let cfg = d.file("qi.toml", QI);
    let rows = csv_rows(&ok(&twinlab(&["--config", s(&cfg), "--format", "csv", "predict"])));
    let gain = column(&rows, "inv_mu_plus_one");
    let ratio = column(&rows, "ratio");
    assert_eq!(gain.len(), 1);
    assert!((gain[0] - (20.0 / 0.5 + 1.0)).abs() < 1e-9);
    assert!((ratio[0] - gain[0]).abs() < 1e-9);
}

#[test]
fn binning_sweep_writes_the_size_tradeoff() {
    let d = Dir::new();
    let cfg = d.file("binning.toml", BINNING);
    let out = d.path("sweep.csv");
    ok(&twinlab(&["--config", s(&cfg), "--format", "csv", "--out", s(&out), "sweep"]));
    let rows = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(column(&rows, "d"), (1..=8).map(f64::from).collect::<Vec<_>>());
    for c in ["sigma", "sigma_se", "sigma_edge_model", "ratio_ssn_dc", "ratio_ssn_dr"] {
        assert_eq!(column(&rows, c).len(), 8);
    }
    let (sigma, se, model) = (column(&rows, "sigma"), column(&rows, "sigma_se"), column(&rows, "sigma_edge_model"));
    assert!(model.windows(2).all(|w| w[1] < w[0]));
    for i in 0..8 {
        assert!((sigma[i] - model[i]).abs() < 5.0 * se[i], "d = {}: {} ± {} vs {}", i + 1, sigma[i], se[i], model[i]);
    }
    assert!(sigma[7] < sigma[0]);
}

#[test]
fn exit_codes_separate_config_data_and_statistics() {
    let d = Dir::new();
    assert_eq!(twinlab(&["simulate"]).status.code(), Some(2));
    let bad = d.file("bad.toml", &STATISTICS.replace("seed = 17\n", ""));
    assert_eq!(twinlab(&["--config", s(&bad), "simulate"]).status.code(), Some(2));
    let junk = d.file("junk.twbf", "not a frame set");
    assert_eq!(twinlab(&["estimate", s(&junk)]).status.code(), Some(3));
    let pnr = d.file("pnr.toml", PNR);
    ok(&twinlab(&["--config", s(&pnr), "calibrate", "--check", "5"]));
    assert_eq!(twinlab(&["--config", s(&pnr), "calibrate", "--check", "0"]).status.code(), Some(4));
    assert_eq!(twinlab(&["--config", s(&pnr), "simulate"]).status.code(), Some(2));
}

#[test]
fn verify_runs_selected_criteria() {
    let out = twinlab(&["verify", "--criteria", "8"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("criterion 8"));
    assert_eq!(twinlab(&["verify", "--criteria", "42"]).status.code(), Some(4));
}

#[test]
fn csv_frames_match_the_binary_file() {
    let d = Dir::new();
    let cfg = d.file("qi.toml", QI);
    let csv = ok(&twinlab(&["--config", s(&cfg), "--format", "csv", "simulate"]));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "frame,channel,pixel,value");
    assert_eq!(lines.len(), 1 + 1000 * 2);
}
