use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ambopt(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ambopt"));
    cmd.args(args);
    for k in ["AMBOPT_SEED", "AMBOPT_REPLICATIONS", "AMBOPT_OUTPUT_DIR"] {
        cmd.env_remove(k);
    }
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str::<Value>(line.trim()).expect("stderr is one JSON object")["error"].clone()
}

fn example(dir: &Path) -> String {
    ok(&ambopt(&["init-example", "--dir", dir.to_str().unwrap()], &[]));
    dir.join("config.json").to_str().unwrap().to_string()
}

fn edit_config(path: &str, f: impl FnOnce(&mut Value)) {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn example_simulates_every_combination() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example(tmp.path());
    ok(&ambopt(&["simulate", "--config", &cfg, "--replications", "2"], &[]));
    let csv = tmp.path().join("out/metrics.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("policy,base_rule,fleet,statistic,mean,q90,max,calls,replications\n"));
    // 2 policies, 2 rules, 3 fleets, 2 statistics.
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 24);
    assert!(rows.iter().all(|r| r[8] == "2"));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(json["runs"].as_array().unwrap().len(), 12);
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        ok(&ambopt(&["simulate", "--config", &cfg, "--output-dir", d.to_str().unwrap()], &[]));
    }
    for f in ["metrics.csv", "metrics.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = tmp.path().join("c");
    ok(&ambopt(&["simulate", "--config", &cfg, "--seed", "2", "--output-dir", c.to_str().unwrap()], &[]));
    assert_ne!(std::fs::read(a.join("metrics.csv")).unwrap(), std::fs::read(c.join("metrics.csv")).unwrap());
}

#[test]
fn no_calls_writes_only_the_header() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example(tmp.path());
    std::fs::write(tmp.path().join("calls.json"), "[]").unwrap();
    edit_config(&cfg, |v| {
        v["calls"] = "calls.json".into();
        v["record_trips"] = true.into();
    });
    ok(&ambopt(&["simulate", "--config", &cfg], &[]));
    let text = std::fs::read_to_string(tmp.path().join("out/metrics.csv")).unwrap();
    assert_eq!(text, "policy,base_rule,fleet,statistic,mean,q90,max,calls,replications\n");
    assert_eq!(std::fs::read_to_string(tmp.path().join("out/trips.jsonl")).unwrap(), "");
}

#[test]
fn malformed_config_reports_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    std::fs::write(&cfg, "{\n  \"instance\": \"i.json\",\n  \"policies\": [\"bm\",]\n}\n").unwrap();
    let err = error_json(&ambopt(&["simulate", "--config", cfg.to_str().unwrap()], &[]));
    assert_eq!(err["kind"], "config");
    assert_eq!(err["line"], 3);
    assert!(err["file"].as_str().unwrap().ends_with("config.json"));
}

#[test]
fn unknown_policy_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example(tmp.path());
    edit_config(&cfg, |v| v["policies"] = serde_json::json!(["bm", "fastest"]));
    let err = error_json(&ambopt(&["simulate", "--config", &cfg], &[]));
    assert_eq!(err["kind"], "config");
    assert!(err["message"].as_str().unwrap().contains("fastest"));
    assert!(err["line"].is_number());
}

#[test]
fn bad_flag_exits_with_usage_error() {
    let out = ambopt(&["simulate", "--config", "x.json", "--replications", "many"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "usage");
}

#[test]
fn environment_overrides_config_and_flags_override_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example(tmp.path());
    let env_dir = tmp.path().join("from_env");
    let envs = [("AMBOPT_REPLICATIONS", "3"), ("AMBOPT_OUTPUT_DIR", env_dir.to_str().unwrap())];
    ok(&ambopt(&["simulate", "--config", &cfg], &envs));
    assert!(csv_rows(&env_dir.join("metrics.csv")).iter().all(|r| r[8] == "3"));
    let flag_dir = tmp.path().join("from_flag");
    ok(&ambopt(&["simulate", "--config", &cfg, "--replications", "1", "--output-dir", flag_dir.to_str().unwrap()], &envs));
    assert!(csv_rows(&flag_dir.join("metrics.csv")).iter().all(|r| r[8] == "1"));
    let err = error_json(&ambopt(&["simulate", "--config", &cfg], &[("AMBOPT_SEED", "abc")]));
    assert!(err["message"].as_str().unwrap().contains("AMBOPT_SEED"));
}

#[test]
fn rollout_reports_paired_comparisons() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example(tmp.path());
    edit_config(&cfg, |v| {
        v["fleet_sizes"] = serde_json::json!([20]);
        v["base_rules"] = serde_json::json!(["cbr"]);
        v["duration_s"] = 3600.into();
        v["rollout"] = serde_json::json!({ "scenarios": 3, "horizon_s": 1800 });
    });
    let stdout = ok(&ambopt(&["rollout", "--config", &cfg, "--policy", "bm", "--replications", "2"], &[]));
    assert!(stdout.contains("rollout vs bm"));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/metrics.json")).unwrap()).unwrap();
    let cmp = &json["comparisons"][0];
    assert_eq!(cmp["paired_replications"], 2);
    assert!(cmp["delta_ci95"].is_array());
    let rolled = json["runs"].as_array().unwrap().iter().find(|r| r["policy"] == "rollout-bm").unwrap();
    assert!(rolled["decision_times"]["count"].as_u64().unwrap() > 0);
}

#[test]
fn rollout_without_demand_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example(tmp.path());
    std::fs::write(tmp.path().join("calls.json"), "[]").unwrap();
    edit_config(&cfg, |v| {
        v.as_object_mut().unwrap().remove("demand");
        v["calls"] = "calls.json".into();
        v["base_rules"] = serde_json::json!(["cbr"]);
    });
    let err = error_json(&ambopt(&["rollout", "--config", &cfg], &[]));
    assert_eq!(err["kind"], "config");
}

#[test]
fn batch_solution_and_lp_export() {
    let tmp = tempfile::tempdir().unwrap();
    example(tmp.path());
    let batch = tmp.path().join("batch.json");
    let lp = tmp.path().join("model.lp");
    let stdout = ok(&ambopt(&["solve-batch", "--instance", batch.to_str().unwrap(), "--export-lp", lp.to_str().unwrap()], &[]));
    let sol: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(sol["optimal"], true);
    assert!((sol["objective"].as_f64().unwrap() - 215535.9762295774).abs() < 1e-6);
    let served: usize = sol["routes"].as_array().unwrap().iter().map(|r| r.as_array().unwrap().len()).sum();
    assert_eq!(served, 10);
    let text = std::fs::read_to_string(&lp).unwrap();
    assert!(text.contains("Minimize") && text.trim_end().ends_with("End"));
}

#[test]
fn best_base_rule_beats_home_base_in_the_burst_demo() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&ambopt(&["bbr-demo", "--replications", "10", "--output-dir", tmp.path().to_str().unwrap()], &[]));
    let rows: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("bbr_demo.json")).unwrap()).unwrap();
    for r in rows.as_array().unwrap() {
        let (h, c, b) = (r["hbr_s"].as_f64().unwrap(), r["cbr_s"].as_f64().unwrap(), r["bbr_s"].as_f64().unwrap());
        assert!(b <= 0.7 * h, "{r}");
        assert!(b <= c && c <= h, "{r}");
    }
}

#[test]
fn calibration_round_trips_through_simulation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example(tmp.path());
    let hist = tmp.path().join("history.csv");
    // Two days; cell (0,0) of a 2x2 grid over the city gets two calls of
    // type 0 in hour 9 each day.
    let mut text = String::from("time_s,lat,lon,type\n");
    for day in 0..2 {
        for k in 0..2 {
            text += &format!("{},{},{},0\n", day * 86_400 + 9 * 3600 + k * 600, 3.0, 4.0);
        }
        text += &format!("{},{},{},3\n", day * 86_400 + 20 * 3600, 20.0, 20.0);
    }
    std::fs::write(&hist, text).unwrap();
    let demand = tmp.path().join("demand.json");
    ok(&ambopt(
        &["calibrate", "--history", hist.to_str().unwrap(), "--grid", "0,0,30,30,2,2", "--types", "4", "--out", demand.to_str().unwrap()],
        &[],
    ));
    let d: Value = serde_json::from_str(&std::fs::read_to_string(&demand).unwrap()).unwrap();
    let entries = d["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[0], serde_json::json!({ "cell": 0, "window": 9, "type": 0, "rate": 2.0 }));
    assert_eq!(entries[1], serde_json::json!({ "cell": 3, "window": 20, "type": 3, "rate": 1.0 }));
    edit_config(&cfg, |v| v["demand"] = demand.to_str().unwrap().into());
    ok(&ambopt(&["simulate", "--config", &cfg], &[]));
}

#[test]
fn calibration_reports_the_bad_csv_line() {
    let tmp = tempfile::tempdir().unwrap();
    let hist = tmp.path().join("history.csv");
    std::fs::write(&hist, "time_s,lat,lon,type\n1,1,1,0\n2,1,1,0\n3,x,1,0\n").unwrap();
    let out_path = tmp.path().join("d.json");
    let err = error_json(&ambopt(
        &["calibrate", "--history", hist.to_str().unwrap(), "--grid", "0,0,10,10,1,1", "--types", "1", "--out", out_path.to_str().unwrap()],
        &[],
    ));
    assert_eq!(err["line"], 4);
}

#[test]
fn more_ambulances_never_cost_clearly_more() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example(tmp.path());
    edit_config(&cfg, |v| {
        v["fleet_sizes"] = serde_json::json!([10, 14, 20, 30]);
        v["base_rules"] = serde_json::json!(["cbr"]);
        v["replications"] = 10.into();
    });
    ok(&ambopt(&["simulate", "--config", &cfg], &[]));
    let rows = csv_rows(&tmp.path().join("out/metrics.csv"));
    for policy in ["bm", "ghp1"] {
        let means: Vec<f64> = rows
            .iter()
            .filter(|r| r[0] == policy && r[3] == "allocation_cost")
            .map(|r| r[4].parse().unwrap())
            .collect();
        assert_eq!(means.len(), 4);
        for w in means.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{policy}: {means:?}");
        }
        assert!(means[3] < means[0], "{policy}: {means:?}");
    }
}

#[test]
fn rollout_without_future_demand_changes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example(tmp.path());
    let mut demand: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("demand.json")).unwrap()).unwrap();
    demand["entries"] = serde_json::json!([]);
    std::fs::write(tmp.path().join("empty.json"), demand.to_string()).unwrap();
    // Calls an hour apart: every crew is back at base before the next one.
    let calls: Vec<Value> = (0..6)
        .map(|i| {
            serde_json::json!({
                "id": i, "time_s": 28_800 + 3600 * i, "loc": { "x": 3.0 + 4.0 * i as f64, "y": 27.0 - 4.0 * i as f64 },
                "call_type": i % 4, "on_scene_s": 900, "hospital_s": 600, "cleaning_s": null
            })
        })
        .collect();
    std::fs::write(tmp.path().join("calls.json"), Value::from(calls).to_string()).unwrap();
    edit_config(&cfg, |v| {
        v["demand"] = "empty.json".into();
        v["calls"] = "calls.json".into();
        v["fleet_sizes"] = serde_json::json!([10]);
        v["base_rules"] = serde_json::json!(["cbr"]);
        v["replications"] = 2.into();
        v["rollout"] = serde_json::json!({ "scenarios": 1 });
    });
    ok(&ambopt(&["rollout", "--config", &cfg, "--policy", "bm"], &[]));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/metrics.json")).unwrap()).unwrap();
    let cmp = &json["comparisons"][0];
    assert!(cmp["delta_mean"].as_f64().unwrap().abs() < 1e-9, "{cmp}");
}
