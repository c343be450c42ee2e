use std::path::Path;
use std::process::{Command, Output};

fn lcdesign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcdesign")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"{
  "realizations": 2,
  "signal": { "fs": 100.0, "n": 128, "l_min": 2, "l_max": 11, "stride": 3 },
  "eval_counts": [21, 21],
  "n_test": 256,
  "classical": { "inner": { "max_iterations": 3 }, "max_evaluations": 200 },
  "least_costly": { "inner": { "max_iterations": 3 }, "max_evaluations": 300, "max_outer_iterations": 3 },
  "train": { "max_iterations": 20, "restarts": 2, "prefit_iterations": 10 }
}"#;

fn sine_csv(path: &Path, n: usize) {
    let mut s = String::from("k,u\n");
    for k in 0..n {
        let t = k as f64 / 100.0;
        let u = 8.0 * (2.0 * std::f64::consts::PI * 2.0 * t).sin() + 4.0 * (2.0 * std::f64::consts::PI * 6.5 * t).sin();
        s.push_str(&format!("{k},{u:e}\n"));
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn simulate_identify_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sig = dir.path().join("sig.csv");
    let ds = dir.path().join("ds.csv");
    let model = dir.path().join("model.json");
    let cfg = dir.path().join("cfg.json");
    sine_csv(&sig, 400);
    std::fs::write(&cfg, r#"{ "train": { "max_iterations": 40, "restarts": 1 } }"#).unwrap();

    let o = lcdesign(&["simulate", "--signal", p(&sig), "--out", p(&ds)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = lcdesign(&["identify", "--train", p(&ds), "--config", p(&cfg), "--out", p(&model)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("model.trace.csv").exists());
    let o = lcdesign(&["evaluate", "--model", p(&model), "--test", p(&ds)]);
    assert!(o.status.success());
    let e: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!(e.is_finite() && e < 1e-2, "rmse {e}");
}

#[test]
fn unknown_config_key_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{ "realisations": 3 }"#).unwrap();
    let o = lcdesign(&["montecarlo", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_with_2() {
    assert_eq!(lcdesign(&["design", "--mode", "cheapest", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let o = lcdesign(&["report", "--study", p(&missing), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn design_writes_outcome_signal_and_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("lc");
    let o = lcdesign(&["design", "--config", p(&cfg), "--mode", "least-costly", "--seed", "7", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["design.json", "classical.json", "signal.csv", "dataset.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let outcome: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("design.json")).unwrap()).unwrap();
    assert_eq!(outcome["mode"], "least_costly");
    let v = outcome["v_cost"].as_f64().unwrap();
    let gamma = outcome["gamma"].as_f64().unwrap();
    assert!(v <= gamma * (1.0 + 1e-4));
}

#[test]
fn montecarlo_is_byte_reproducible_and_report_regenerates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, TINY).unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        let o = lcdesign(&["montecarlo", "--config", p(&cfg), "--realizations", "2", "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let sa = std::fs::read(a.join("study.json")).unwrap();
    assert_eq!(sa, std::fs::read(b.join("study.json")).unwrap());
    for f in ["table1.csv", "designs.csv", "rmse_boxplots.svg", "features.svg", "signals.svg", "power_boxplot.svg"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let o = lcdesign(&["report", "--study", p(&a.join("study.json")), "--out", p(&c)]);
    assert!(o.status.success());
    assert_eq!(sa, std::fs::read(c.join("study.json")).unwrap());
    assert_eq!(std::fs::read(a.join("table1.csv")).unwrap(), std::fs::read(c.join("table1.csv")).unwrap());
}
