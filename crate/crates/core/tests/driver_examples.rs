use hetnet_sca::driver::*;
use hetnet_sca::linalg::real_matrix;
use hetnet_sca::network::{generate_problem, ChannelSet, NetworkConfig, Problem, Scenario, Topology, Utility};
use hetnet_sca::rate::{objective, PrecoderSet};

fn single_link(gain: f64, budget: f64) -> Problem {
    let topo = Topology::new(1, 1, &[1], &[1], &[1]);
    let ch = ChannelSet::from_parts(topo, vec![vec![real_matrix(1, 1, &[gain])]], vec![1.0], vec![vec![budget]]);
    Problem::with_channels(ch, Scenario::Ibc, Utility::WeightedSumRate)
}

#[test]
fn single_user_uses_full_power() {
    for budget in [0.5, 10.0, 100.0] {
        let problem = single_link(1.0, budget);
        for algorithm in [Algorithm::Sca, Algorithm::InSca] {
            let mut settings = RunSettings::new(algorithm);
            settings.outer_tol = 1e-12;
            let report = run(&problem, &settings).unwrap();
            assert!((report.sum_rate() - budget.ln_1p()).abs() <= 1e-6, "{algorithm:?} {budget}: {}", report.sum_rate());
        }
    }
}

#[test]
fn zero_precoders_are_a_stationary_fixed_point() {
    let mut cfg = NetworkConfig::new(2, 1, 2, 2, 1);
    cfg.scenario = Scenario::Ibc;
    let problem = generate_problem(&cfg).unwrap();
    let zero = PrecoderSet::zeros(problem.topology());
    let mut settings = RunSettings::new(Algorithm::Sca);
    settings.max_outer_iters = 3;
    let report = run_from(&problem, &settings, zero.clone()).unwrap();
    assert_eq!(report.objective, 0.0);
    assert!(report.precoders.norm_squared() == 0.0);
    // rates grow quadratically away from zero, so every directional derivative vanishes
    assert!(stationarity_residual(&problem, &zero, 8, 1).unwrap() <= 1e-9);
}

#[test]
fn residual_shrinks_along_a_run() {
    let mut cfg = NetworkConfig::new(2, 2, 2, 2, 1);
    cfg.rng_seed = 5;
    let problem = generate_problem(&cfg).unwrap();
    let v0 = initialize(&problem, InitPolicy::ScaledRandom, 0).unwrap();
    let early = stationarity_residual(&problem, &v0, 16, 2).unwrap();
    let mut settings = RunSettings::new(Algorithm::InSca);
    settings.outer_tol = 1e-6;
    settings.max_outer_iters = 20_000;
    settings.stationarity_directions = 16;
    let report = run_from(&problem, &settings, v0).unwrap();
    assert!(report.converged);
    assert!(early > 1e-2, "{early}");
    assert!(report.stationarity.unwrap() < 1e-3);
}

#[test]
fn zero_plus_epsilon_start_has_small_norm() {
    let cfg = NetworkConfig::new(1, 2, 2, 2, 1);
    let mut problem = generate_problem(&cfg).unwrap();
    problem.scenario = Scenario::CompFull;
    let v = initialize(&problem, InitPolicy::ZeroPlusEpsilon, 0).unwrap();
    let topo = problem.topology();
    for q in 0..2 {
        let p = v.bs_power(topo, 0, q);
        let target = INIT_EPSILON * INIT_EPSILON * problem.channels.bs_budget[0][q];
        assert!((p - target).abs() <= 1e-12 * target);
    }
}

#[test]
fn invalid_settings_are_rejected() {
    let mut cfg = NetworkConfig::new(1, 2, 1, 1, 1);
    cfg.scenario = Scenario::CompFull;
    let problem = generate_problem(&cfg).unwrap();
    let settings = RunSettings::new(Algorithm::InSca).with_beta(0.0, 1);
    assert!(matches!(run(&problem, &settings), Err(DriverError::InvalidSettings(_))));
    let mut settings = RunSettings::new(Algorithm::Sca);
    settings.outer_tol = 0.0;
    assert!(matches!(run(&problem, &settings), Err(DriverError::InvalidSettings(_))));
}

#[test]
fn timing_off_reports_zero_times() {
    let cfg = NetworkConfig::new(1, 1, 2, 2, 1);
    let problem = generate_problem(&cfg).unwrap();
    let report = run(&problem, &RunSettings::new(Algorithm::Sca)).unwrap();
    assert_eq!(report.wall_ms, 0.0);
    assert!(report.trace.iter().all(|r| r.wall_ms == 0.0));
    assert_eq!(report.trace.last().unwrap().objective, objective(&problem, &report.precoders).unwrap());
}
