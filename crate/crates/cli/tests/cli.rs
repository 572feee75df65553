use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use xlayer::detection::{write_events_jsonl, BerModel, BitEvent};
use xlayer::harness::{ExperimentConfig, Summary};

fn xlayer(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xlayer"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(dir: &Path) -> Summary {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn entries(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn small_config(dir: &Path) -> String {
    let cfg = ExperimentConfig {
        seeds: vec![3],
        ..Default::default()
    };
    let path = dir.join("default.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn version_is_semver() {
    let tmp = tempfile::tempdir().unwrap();
    let o = xlayer(tmp.path(), &["--version"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let version = text.split_whitespace().nth(1).unwrap();
    assert_eq!(version.split('.').filter(|p| p.parse::<u64>().is_ok()).count(), 3);
}

#[test]
fn unknown_flag_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = xlayer(tmp.path(), &["simulate", "--nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(xlayer(tmp.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(xlayer(tmp.path(), &[]).status.code(), Some(2));
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("typo.json"), r#"{"periodz": 4}"#).unwrap();
    let o = xlayer(tmp.path(), &["generate", "--config", "typo.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("periodz"));

    fs::write(tmp.path().join("bad.json"), r#"{"min_hit_rate": 2.0}"#).unwrap();
    let o = xlayer(tmp.path(), &["generate", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("min_hit_rate"));

    let o = xlayer(tmp.path(), &["simulate", "--periods", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("periods"));

    let o = xlayer(tmp.path(), &["generate", "--config", "missing.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generated_config_parses_back() {
    let tmp = tempfile::tempdir().unwrap();
    let o = xlayer(tmp.path(), &["generate", "--seed", "5", "--out", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    assert_eq!(entries(&out), ["config.json", "scenario_s5.json", "summary.json"]);
    let cfg = ExperimentConfig::load(out.join("config.json")).unwrap();
    assert_eq!(
        cfg,
        ExperimentConfig {
            seeds: vec![5],
            ..Default::default()
        }
    );
    let again = xlayer(tmp.path(), &["generate", "--config", "out/config.json", "--out", "again"]);
    assert!(again.status.success());
    assert_eq!(
        fs::read(out.join("config.json")).unwrap(),
        fs::read(tmp.path().join("again/config.json")).unwrap()
    );
}

#[test]
fn simulate_is_deterministic_and_stays_in_out() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        let o = xlayer(tmp.path(), &["simulate", "--seed", "7", "--out", dir]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(entries(tmp.path()), ["a", "b"]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(
        entries(&a),
        ["history.jsonl", "scenario_s7_10mW.json", "summary.json", "traffic_s7_10mW.csv"]
    );
    for name in entries(&a) {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
    let traffic = fs::read_to_string(a.join("traffic_s7_10mW.csv")).unwrap();
    assert!(traffic.starts_with("src,dst,rate_bps\n"));
    let history = fs::read_to_string(a.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 10);
    let gains = summary(&a).attack_gains.unwrap();
    assert_eq!(gains.len(), 1);
    assert_eq!(gains[0].seed, 7);
}

#[test]
fn detect_writes_one_posterior_per_monitored_channel() {
    let tmp = tempfile::tempdir().unwrap();
    let o = xlayer(tmp.path(), &["detect", "--seed", "7", "--out", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let report = summary(&out).detection.unwrap();
    assert_eq!(report.scenario, "s7_10mW");
    assert!(!report.channels.is_empty());
    for c in &report.channels {
        let csv = fs::read_to_string(out.join(format!("posterior_s7_10mW_{}.csv", c.channel))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("interference_watts,mass"));
        let total: f64 = lines.map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn detect_without_jammer_uses_quiet_topology() {
    let tmp = tempfile::tempdir().unwrap();
    let o = xlayer(tmp.path(), &["detect", "--seed", "2", "--jammer-budget", "0", "--out", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = summary(&tmp.path().join("out")).detection.unwrap();
    assert_eq!(report.scenario, "s2_0mW");
}

#[test]
fn roc_writes_curves_and_aucs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = xlayer(tmp.path(), &["roc", "--config", &cfg, "--out", "results"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("results");
    assert_eq!(entries(&out), ["roc_ber.csv", "roc_proposed.csv", "summary.json"]);
    for name in ["roc_ber.csv", "roc_proposed.csv"] {
        let csv = fs::read_to_string(out.join(name)).unwrap();
        assert!(csv.starts_with("threshold,tpr,fpr\n"));
    }
    let s = summary(&out);
    assert!((0.0..=1.0).contains(&s.auc_proposed.unwrap()));
    assert!((0.0..=1.0).contains(&s.auc_ber.unwrap()));
    assert!(s.roc_jammed_samples.unwrap() >= 10);
}

#[test]
fn tradeoff_and_ber_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = xlayer(tmp.path(), &["tradeoff", "--config", &cfg, "--out", "t"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("t/tradeoff.csv")).unwrap();
    assert!(csv.starts_with("alpha,beta,h_Sl,h_Sm,h_SNC,chosen\n"));
    assert_eq!(summary(&tmp.path().join("t")).tradeoff.unwrap().len(), 3);

    let o = xlayer(tmp.path(), &["ber-table", "--config", &cfg, "--out", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = summary(&tmp.path().join("b")).ber_table.unwrap();
    let budgets: Vec<f64> = rows.iter().map(|r| r.budget_mw).collect();
    assert_eq!(budgets, [0.0, 10.0, 100.0]);
}

#[test]
fn fit_ber_prints_and_saves_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let model = BerModel::AnalyticBpsk;
    let mut events = Vec::new();
    for k in 0..12 {
        let gamma = 0.1 * 1.5f64.powi(k);
        let n = 20_000;
        let wrong = (model.ber(gamma) * n as f64).round() as usize;
        events.extend((0..n).map(|i| BitEvent {
            period: 0,
            channel: 0,
            correct: i >= wrong,
            sinr: Some(gamma),
        }));
    }
    let mut buf = Vec::new();
    write_events_jsonl(&events, &mut buf).unwrap();
    fs::write(tmp.path().join("events.jsonl"), buf).unwrap();

    let o = xlayer(tmp.path(), &["fit-ber", "--trace", "events.jsonl", "--out", "fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let saved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("fit/ber_fit.json")).unwrap()).unwrap();
    assert_eq!(printed, saved);
    assert_eq!(summary(&tmp.path().join("fit")).ber_fit.unwrap().samples, 12);
}

#[test]
fn fit_ber_on_missing_trace_is_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = xlayer(tmp.path(), &["fit-ber", "--trace", "nothing.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
}
