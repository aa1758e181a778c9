use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use rewardlab_cli::config::{BaseScenario, PerValue, ScenarioSpec};
use rewardlab_cli::output::{read_trajectory, NOT_REACHED};
use rewardlab_cli::{
    parse_config, read_sweep_csv, run_sweep, Config, SweepSpec, RUN_RECORD_COLUMNS,
};
use rewardlab_core::{ErrorCategory, IntegratorConfig, RewardChoice};

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn rewardlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rewardlab"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn fig2_beneficial_golden_has_a_low_proxy_med() {
    let Config::Simulate(job) = parse_config(&golden("fig2_beneficial.json")).unwrap() else {
        panic!("not a simulate config")
    };
    let s = job.scenario.build().unwrap();
    assert_eq!(s.rewards().proxy(), [1.0, -1.0, -1.0, -1.0, -1.0]);
    assert_eq!(s.rewards().ground_truth(), [1.0, 0.8, -1.0, -1.0, -1.0]);
    let expect = [0.05, 0.5, 0.15, 0.15, 0.15];
    for (p, e) in s.initial_probs().iter().zip(expect) {
        assert!((p - e).abs() < 1e-15, "{p} vs {e}");
    }
    assert!(s.features().is_orthonormal(0.0));
    assert_eq!(s.label(), ErrorCategory::Beneficial1);
    assert_eq!(job.runs[0].objective, RewardChoice::Proxy);
    assert_eq!(job.runs[0].integrator.step_size, 0.1);
}

#[test]
fn every_golden_round_trips() {
    for entry in fs::read_dir(golden("")).unwrap() {
        let path = entry.unwrap().path();
        let c = parse_config(&path).unwrap();
        let again = Config::from_json_str(&c.to_json_pretty()).unwrap();
        assert_eq!(again, c, "{}", path.display());
    }
}

#[test]
fn simulate_writes_trajectories_and_summary() {
    let out = tempfile::tempdir().unwrap();
    let o = rewardlab(&[
        "simulate",
        "--config",
        golden("fig2_beneficial.json").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let traj = read_trajectory(&out.path().join("proxy.csv")).unwrap();
    assert_eq!(traj.len(), 501);
    assert!((traj.probs[0][0] - 0.05).abs() < 1e-15);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["scenario_seed"], 7);
    let t = summary["runs"][0]["t_hit"].as_f64().unwrap();
    assert!((t - 16.75).abs() < 0.01, "{t}");
}

#[test]
fn bad_configs_fail_with_useful_messages() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(golden("fig2_beneficial.json")).unwrap();
    let cases = [
        (
            text.replace("\"schema_version\": 1", "\"schema_version\": 9"),
            "schema_version 9 is not supported",
        ),
        (
            text.replace("\"max_steps\"", "\"max_stepz\""),
            "runs[0].integrator",
        ),
        (text.replace("0.05", "0.7"), "(0, 0.5)"),
    ];
    for (i, (body, needle)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.json"));
        fs::write(&path, body).unwrap();
        let o = rewardlab(&[
            "simulate",
            "--config",
            path.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(!o.status.success());
        assert!(
            stderr(&o).contains(needle),
            "{needle:?} not in {}",
            stderr(&o)
        );
    }
    let o = rewardlab(&[
        "sweep",
        "--config",
        golden("fig2_beneficial.json").to_str().unwrap(),
        "--out",
        "x",
    ]);
    assert!(stderr(&o).contains("not sweep"), "{}", stderr(&o));
}

#[test]
fn check_reports_bounds_and_refusals() {
    let o = rewardlab(&[
        "check",
        "--config",
        golden("thm_a1_check.json").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let t = &r["theorems"][0];
    assert_eq!(t["assumptions"]["overall"], true);
    assert!(t["bounds"]["lower_bound_t_star"].as_f64().unwrap() > 0.0);

    // the unwindowed standard-basis scenario violates the cap on pi0(y*)
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let text = fs::read_to_string(golden("thm_a1_check.json")).unwrap();
    let text = text.replace(
        "\"window\": { \"theorem\": \"thmA1\", \"star_fraction\": 0.5 },",
        "",
    );
    fs::write(&path, text).unwrap();
    let o = rewardlab(&["check", "--config", path.to_str().unwrap()]);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let t = &r["theorems"][0];
    assert_eq!(t["assumptions"]["overall"], false);
    assert!(t["bounds"].is_null());
    assert!(t["refusal"].as_str().unwrap().contains("do not hold"));
}

#[test]
fn metrics_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.csv");
    let vals = dir.path().join("v.csv");
    fs::write(
        &ds,
        "example_id,role,proxy_score,truth_score,length,log_prob\n\
         a,preferred,1.0,1.0,1,-1.0\n\
         a,dispreferred,0.5,0.0,1,-1.0\n\
         b,preferred,0.2,1.0,1,-2.0\n\
         b,dispreferred,0.4,0.0,1,-2.0\n",
    )
    .unwrap();
    fs::write(&vals, "example_id,v_bar,n_samples\na,0.0,10\nb,0.6,10\n").unwrap();
    let out = dir.path().join("m.json");
    let o = rewardlab(&[
        "metrics",
        "--dataset",
        ds.to_str().unwrap(),
        "--values",
        vals.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["acc"], 0.5);
    assert_eq!(r["hacc"], 1.0);
    // weights e^{-2} and e^{-4}, normalized
    let w = 1.0 / (1.0 + (-2.0f64).exp());
    assert!((r["acc_w"].as_f64().unwrap() - w).abs() < 1e-15);
    assert!((r["hacc_w"].as_f64().unwrap() - 1.0).abs() < 1e-15);
}

fn small_sweep(values: Vec<f64>, epsilon: PerValue, max_steps: u64) -> SweepSpec {
    let text = format!(
        r#"{{"schema_version": 1, "kind": "sweep",
            "scenario": {{"base": {{"fig2": {{"pi0_star": 0.1, "low_proxy": true}}}}}},
            "values": {values:?}, "epsilon": 0.1}}"#
    );
    let Config::Sweep(mut spec) = Config::from_json_str(&text).unwrap() else {
        unreachable!()
    };
    spec.epsilon = epsilon;
    spec.integrator = IntegratorConfig::euler(0.1, max_steps);
    spec
}

#[test]
fn sweep_rows_include_failures() {
    let dir = tempfile::tempdir().unwrap();
    // epsilon 0.3 exceeds Delta_1 = 0.2, so the second row fails
    let spec = small_sweep(
        vec![0.15, 0.1, 0.05],
        PerValue::Each(vec![0.1, 0.3, 0.1]),
        3000,
    );
    let result = run_sweep(&spec, dir.path()).unwrap();
    let rows = read_sweep_csv(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(rows, result.records);
    assert_eq!(rows.len(), 3);
    assert!(rows[0].error.is_empty());
    assert!(rows[1].error.contains("epsilon"), "{}", rows[1].error);
    // t = 300 is far short of the ground-truth run's hitting time at 0.05
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(text.contains(NOT_REACHED));
    assert_eq!(text.lines().next().unwrap(), RUN_RECORD_COLUMNS.join(","));
}

#[test]
fn empty_sweep_is_rejected_at_parse() {
    let spec = small_sweep(vec![0.1], PerValue::One(0.1), 10);
    let mut value = Config::Sweep(spec).to_value();
    value["values"] = serde_json::json!([]);
    let err = Config::from_value(value).unwrap_err().to_string();
    assert!(err.contains("empty"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sweep_specs_round_trip(
        // above 0.45 the initial ground-truth value exceeds r_G(y_med)
        values in prop::collection::vec(1e-6f64..0.45, 1..6),
        eps in 1e-3f64..0.19,
        low in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut spec = small_sweep(values, PerValue::One(eps), 100);
        spec.scenario = ScenarioSpec {
            base: BaseScenario::Fig2 { pi0_star: 0.1, low_proxy: low },
            ground_truth: None,
            window: None,
            error: None,
            seed: Some(seed),
        };
        let c = Config::Sweep(spec);
        let back = Config::from_json_str(&c.to_json_pretty()).unwrap();
        prop_assert_eq!(back, c);
    }
}

#[test]
fn scaling_golden_slope_is_in_band() {
    let Config::Sweep(spec) = parse_config(&golden("scaling_sweep.json")).unwrap() else {
        panic!("not a sweep")
    };
    let dir = tempfile::tempdir().unwrap();
    let result = run_sweep(&spec, dir.path()).unwrap();
    let fit = result.fit.unwrap().fit.unwrap();
    assert!((-1.3..=-0.9).contains(&fit.slope), "slope {}", fit.slope);
    assert!(dir.path().join("fit.json").exists());
}
