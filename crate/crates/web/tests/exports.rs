use hetnet_sca_web::*;

#[test]
fn convergence_returns_two_ascending_traces() {
    let json = convergence_json(&default_config(), 200, 1e-4).unwrap();
    let traces: serde_json::Value = serde_json::from_str(&json).unwrap();
    let traces = traces.as_array().unwrap();
    assert_eq!(traces.len(), 2);
    for t in traces {
        let obj: Vec<f64> = t["objective"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert!(obj.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }
    assert_eq!(traces[1]["algorithm"], "IN-SCA");
}

#[test]
fn sweep_reports_each_gamma() {
    let json = cluster_sweep_json(&default_config(), "0.01, 0.5").unwrap();
    let points: serde_json::Value = serde_json::from_str(&json).unwrap();
    let points = points.as_array().unwrap();
    assert_eq!(points.len(), 2);
    let small = points[0]["mean_cluster_size"].as_f64().unwrap();
    let large = points[1]["mean_cluster_size"].as_f64().unwrap();
    assert!(large <= small);
    assert!(cluster_sweep_json(&default_config(), "x").is_err());
}

#[test]
fn landscape_path_ends_near_grid_best() {
    let json = scalar_landscape_json(1, 20.0, 60, 0).unwrap();
    let land: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(land["values"].as_array().unwrap().len(), 3600);
    let best = land["grid_best"][2].as_f64().unwrap();
    let last = land["final_bits"].as_f64().unwrap();
    assert!(last > 0.0 && last <= best * 1.05);
    assert!(scalar_landscape_json(1, 20.0, 1, 0).is_err());
}
