use std::path::Path;
use std::process::{Command, Output};

fn agrichain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agrichain"))
        .args(args)
        .env_clear()
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate_into(dir: &Path, rounds: &str) {
    let o = agrichain(&[
        "simulate",
        "--rounds",
        rounds,
        "--n-farms",
        "6",
        "--tw",
        "8",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fresh_one_round_ledger_lists_two_blocks() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), "1");
    let o = agrichain(&["inspect", dir.path().join("fn_ledger.txt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("height ")).count(), 2);
    assert!(text.contains("farm 5 token ["));
    assert!(text.trim_end().ends_with("chain valid"));
    assert!(dir.path().join("manifest.toml").exists());
}

#[test]
fn tampered_ledger_reports_invalid_height() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), "2");
    let path = dir.path().join("tn_ledger.txt");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut bytes = hex::decode(&lines[1]).unwrap();
    let last = bytes.len() - 1;
    bytes[last - 20] ^= 0x01;
    lines[1] = hex::encode(bytes);
    std::fs::write(&path, lines.join("\n")).unwrap();
    let o = agrichain(&["inspect", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("chain INVALID at height 1"));
}

#[test]
fn empty_ledger_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.txt");
    std::fs::write(&path, "").unwrap();
    let o = agrichain(&["inspect", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn config_errors_exit_one() {
    assert_eq!(agrichain(&["simulate", "--tw", "0"]).status.code(), Some(1));
    assert_eq!(agrichain(&["simulate", "--seed", "x"]).status.code(), Some(1));
    assert_eq!(agrichain(&["preset", "no-such-preset"]).status.code(), Some(1));
    assert_eq!(
        agrichain(&["simulate", "--config", "/nonexistent/agrichain.toml"]).status.code(),
        Some(1)
    );
}

#[test]
fn flags_beat_environment_beat_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\nrounds = 1\nn_farms = 3\ntw = 4\nalpha = 0.2\n").unwrap();
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_agrichain"))
        .args(["preset", "credits", "--config", cfg.to_str().unwrap(), "--seed", "3"])
        .args(["--out", out.to_str().unwrap()])
        .env_clear()
        .env("AGRICHAIN_SEED", "2")
        .env("AGRICHAIN_N_FARMS", "4")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 3\n"), "{manifest}");
    assert!(manifest.contains("n_farms = 4\n"));
    assert!(manifest.contains("alpha = 0.2\n"));
}

#[test]
fn preset_defaults_sit_under_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = agrichain(&[
        "preset",
        "sopt-search",
        "--replicates",
        "1",
        "--n-farms",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("inter_farm_range = [20.0, 50.0]"), "{manifest}");
}

#[test]
fn calibrate_reads_csv_samples() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("samples.csv");
    let rows: String = [1.0, 3.0, 10.0, 30.0, 100.0]
        .iter()
        .map(|a| format!("{a},{}\n", a / (a + 4.0)))
        .collect();
    std::fs::write(&input, format!("concentration,rf\n{rows}")).unwrap();
    let out = dir.path().join("cal");
    let o = agrichain(&[
        "calibrate",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o).lines().find(|l| l.starts_with("k_d_hat = ")).unwrap().to_string();
    let k: f64 = line.trim_start_matches("k_d_hat = ").parse().unwrap();
    assert!((k - 4.0).abs() < 1e-6, "{k}");
    assert!(out.join("rf_fit.csv").exists());
}
