use std::fs;

use hetnet_sca::driver::Algorithm;
use hetnet_sca::network::{NetworkConfig, Scenario};
use hetnet_sca_cli::*;

fn small_config() -> NetworkConfig {
    let mut cfg = NetworkConfig::new(2, 2, 2, 2, 1);
    cfg.scenario = Scenario::CompFull;
    cfg
}

#[test]
fn one_point_one_seed_gives_one_trace_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan::new(small_config(), dir.path());
    let records = run_experiment(&plan).unwrap();
    assert_eq!(records.len(), 1);
    let traces: Vec<_> = fs::read_dir(dir.path().join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 1);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER.join(","));
}

#[test]
fn same_plan_twice_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut plan = ExperimentPlan::new(small_config(), a.path());
    plan.seeds = vec![0, 1, 2];
    plan.algorithms = vec![Algorithm::Sca, Algorithm::InSca];
    run_experiment(&plan).unwrap();
    plan.out_dir = b.path().to_path_buf();
    plan.jobs = Some(1);
    run_experiment(&plan).unwrap();
    for name in ["summary.csv", "aggregate.csv", "traces/p0_s1_insca.csv", "traces/p0_s2_sca.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn empty_report_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&[], dir.path()).unwrap();
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary, format!("{}\n", SUMMARY_HEADER.join(",")));
    let agg = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg, format!("{}\n", AGGREGATE_HEADER.join(",")));
    write_trace(&dir.path().join("t.csv"), &[]).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("t.csv")).unwrap(), format!("{}\n", TRACE_HEADER.join(",")));
}

#[test]
fn final_trace_row_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan::new(small_config(), dir.path());
    let records = run_experiment(&plan).unwrap();
    let r = &records[0];
    assert_eq!(r.trace.last().unwrap().objective, r.final_objective);
    let text = fs::read_to_string(dir.path().join("traces").join(r.trace_file_name())).unwrap();
    let last = text.lines().last().unwrap();
    let value: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(value, r.final_objective);
}

#[test]
fn standard_error_of_hundred_samples() {
    let xs: Vec<f64> = (0..100).map(|i| ((i * 37 % 101) as f64).sqrt()).collect();
    let (mean, se) = mean_and_standard_error(&xs);
    let m = xs.iter().sum::<f64>() / 100.0;
    let s = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 99.0).sqrt();
    assert!((mean - m).abs() <= 1e-12);
    assert!((se - s / 10.0).abs() <= 1e-12);
    assert_eq!(mean_and_standard_error(&[3.0]), (3.0, 0.0));
}

#[test]
fn gamma_sweep_shrinks_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = NetworkConfig::new(2, 3, 4, 2, 1);
    cfg.scenario = Scenario::CompSparse;
    cfg.rng_seed = 3;
    let mut plan = ExperimentPlan::new(cfg, dir.path());
    plan.sweeps = vec![SweepAxis::parse("gamma=0.01,0.05,0.1,0.5").unwrap()];
    plan.algorithms = vec![Algorithm::InSca];
    plan.seeds = vec![3];
    plan.outer_tol = 1e-6;
    let records = run_experiment(&plan).unwrap();
    let sizes: Vec<f64> = records.iter().map(|r| r.mean_cluster_size).collect();
    assert!(sizes.windows(2).all(|w| w[1] <= w[0]), "{sizes:?}");
    assert!(*sizes.last().unwrap() < 3.0);
}

#[test]
fn sweep_parsing() {
    let axis = SweepAxis::parse("scenario=IBC,COMP-FULL").unwrap();
    assert_eq!(axis.field, "scenario");
    assert_eq!(axis.values.len(), 2);
    let axis = SweepAxis::parse("weights=[1,2],[2,1]").unwrap();
    assert_eq!(axis.values.len(), 2);
    assert!(axis.values[0].is_array());
    assert!(SweepAxis::parse("gamma").is_err());
}

#[test]
fn unknown_sweep_field_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = ExperimentPlan::new(small_config(), dir.path());
    plan.sweeps = vec![SweepAxis::parse("antennas=2,4").unwrap()];
    let err = run_experiment(&plan).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn seed_forms() {
    assert_eq!(parse_seeds("3").unwrap(), vec![0, 1, 2]);
    assert_eq!(parse_seeds("4,9").unwrap(), vec![4, 9]);
    assert_eq!(parse_seeds("5..7").unwrap(), vec![5, 6]);
    assert!(parse_seeds("0").is_err());
    assert!(parse_seeds("x").is_err());
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_hetnet-sca");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"num_cells": 0, "bs_per_cell": 1, "users_per_cell": 1, "tx_antennas": 1, "rx_antennas": 1}"#).unwrap();
    let status = std::process::Command::new(bin).arg("--config").arg(&bad).arg("--out").arg(dir.path()).output().unwrap().status;
    assert_eq!(status.code(), Some(1));

    let good = dir.path().join("good.json");
    fs::write(&good, small_config().to_json()).unwrap();
    let status = std::process::Command::new(bin)
        .args(["--algo", "insca", "--seeds", "2", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}
