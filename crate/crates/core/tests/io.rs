use std::io::Write;

use twinlab_core::frames::{FrameHeader, FrameSet, SampleKind};
use twinlab_core::io::config::CalibrationConfig;
use twinlab_core::io::frameset::{
    expected_file_size, from_bytes, load, load_verified, save, to_bytes, write_csv, HEADER_BYTES,
};
use twinlab_core::io::report::write_table_csv;
use twinlab_core::io::{ExperimentConfig, Protocol, Report};
use twinlab_core::Error;

const QI: &str = r#"
protocol = "qi"
seed = 11
frames = 1000

[qi]
source = "twin-beam"
n = 1.0
modes = 10
n_b = 30.0
m_b = 1000.0
eta_p = 1.0
eta_r = 1.0
target_present = true
"#;

fn sample_frames() -> FrameSet {
    FrameSet::from_counts(4, 3, 2, 99, (0..4 * 3 * 2 * 5).map(|v| v * 7 % 23).collect()).unwrap()
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.twbf");
    let cfg = ExperimentConfig::from_toml(QI).unwrap();
    let fs = sample_frames().with_config_hash(cfg.hash());
    save(&fs, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), expected_file_size(&fs.header));
    assert_eq!(load(&path).unwrap(), fs);
    assert_eq!(load_verified(&path, &cfg.hash()).unwrap(), fs);
    let other = cfg.clone().with_seed(12).hash();
    assert!(matches!(load_verified(&path, &other), Err(Error::Format(m)) if m.contains("hash mismatch")));
}

#[test]
fn every_single_bit_flip_is_detected() {
    let b = to_bytes(&sample_frames()).unwrap();
    for i in 0..b.len() {
        let mut t = b.clone();
        t[i] ^= 0x10;
        assert!(from_bytes(&t).is_err(), "flip at byte {i} went unnoticed");
    }
}

#[test]
fn truncated_and_padded_files_are_rejected() {
    let b = to_bytes(&sample_frames()).unwrap();
    assert!(from_bytes(&b[..HEADER_BYTES as usize - 1]).is_err());
    assert!(from_bytes(&b[..b.len() - 1]).is_err());
    let mut long = b.clone();
    long.extend_from_slice(&[0, 0, 0, 0]);
    assert!(from_bytes(&long).is_err());
}

#[test]
fn file_size_arithmetic() {
    let h = FrameHeader {
        kind: SampleKind::Counts,
        width: 64,
        height: 64,
        channels: 1,
        frames: 100_000,
        seed: 0,
        config_hash: [0; 32],
    };
    assert_eq!(expected_file_size(&h), 72 + 4 * 64 * 64 * 100_000);
    assert_eq!(expected_file_size(&FrameHeader { channels: 2, ..h.clone() }), 72 + 2 * 4 * 64 * 64 * 100_000);
}

#[test]
fn analog_frames_are_stored_as_rounded_adu() {
    let fs = FrameSet::from_analog(2, 2, 1, 3, vec![0.4, 1.5, -2.5, 1000.49]).unwrap();
    let back = from_bytes(&to_bytes(&fs).unwrap()).unwrap();
    assert_eq!(back.values(0, 0), vec![0.0, 2.0, -3.0, 1000.0]);
    assert_eq!(to_bytes(&back).unwrap(), to_bytes(&fs).unwrap());
}

#[test]
fn csv_export_has_one_row_per_sample() {
    let fs = sample_frames();
    let mut buf = Vec::new();
    write_csv(&fs, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "frame,channel,pixel,value");
    assert_eq!(lines.len(), 1 + fs.header.samples());
    assert_eq!(lines[1], format!("0,0,0,{}", fs.value(0, 0, 0)));
}

#[test]
fn config_errors_are_config_errors() {
    let cases = [
        QI.replace("seed = 11\n", ""),
        QI.replace("frames = 1000", "frames = 1"),
        QI.replace("eta_p = 1.0", "eta_p = 1.5"),
        QI.replace("[qi]", "[unknown]"),
        QI.replace("protocol = \"qi\"", "protocol = \"teleport\""),
        QI.replace("frames = 1000", "frames = 1000\ncolour = \"red\""),
        "not toml at all [".to_string(),
    ];
    for text in cases {
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))), "accepted:\n{text}");
    }
}

#[test]
fn config_round_trips_and_hash_is_stable() {
    let cfg = ExperimentConfig::from_toml(QI).unwrap();
    assert_eq!(cfg.protocol, Protocol::Qi);
    assert_eq!(cfg.blocks, 32);
    let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(cfg.hash(), again.hash());
    assert_eq!(cfg.hash_hex().len(), 64);
}

#[test]
fn config_loads_from_disk() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(QI.as_bytes()).unwrap();
    assert_eq!(ExperimentConfig::load(f.path()).unwrap().seed, 11);
    assert!(matches!(ExperimentConfig::load("/nonexistent/run.toml"), Err(Error::Config(_))));
}

#[test]
fn calibration_sections_parse() {
    let text = r#"
protocol = "calibration"
seed = 1
frames = 10

[calibration]
method = "pnr"
gamma = 0.6
xi = 0.9
heralded_events = 1000
unheralded_events = 1000
background = { kind = "poisson", mean = 0.7 }
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert!(matches!(cfg.calibration, Some(CalibrationConfig::Pnr { .. })));
}

#[test]
fn reports_carry_seed_and_hash() {
    let cfg = ExperimentConfig::from_toml(QI).unwrap();
    let json = Report::new(&cfg, serde_json::json!({ "snr": 1.0 })).to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["seed"], 11);
    assert_eq!(v["config_hash"], cfg.hash_hex());
    assert_eq!(v["protocol"], "qi");
    assert_eq!(v["results"]["snr"], 1.0);
}

#[test]
fn table_csv_uses_field_names() {
    #[derive(serde::Serialize)]
    struct Row {
        d: usize,
        sigma: f64,
    }
    let mut buf = Vec::new();
    write_table_csv(&[Row { d: 1, sigma: 0.5 }, Row { d: 2, sigma: 0.25 }], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "d,sigma\n1,0.5\n2,0.25\n");
}
