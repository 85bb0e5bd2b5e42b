use std::fs;

use signal_lab::config::ExperimentConfig;
use signal_lab::demand::{entry_lanes, generate_uniform, write_demand_file, ArrivalProcess};
use signal_lab::harness::{run_experiment, CURVES_HEADER, RESULTS_HEADER};
use signal_lab::{build_standard_intersection, NetworkConfig};

const REPLAY: &str = r#"
[experiment]
controllers = ["fixedtime", "sotl", "lit"]
seeds = [3]
horizon_s = 900
drain_s = 900
episodes = 3

[demand]
file = "demand.csv"

[agent]
hidden = [8]
batch_size = 8
"#;

#[test]
fn replayed_demand_file_drives_every_controller() {
    let dir = tempfile::tempdir().unwrap();
    let network = NetworkConfig::single(build_standard_intersection(2).unwrap());
    let demand = generate_uniform(
        250.0,
        &entry_lanes(&network),
        900,
        ArrivalProcess::Poisson,
        12,
        &network,
    )
    .unwrap();
    write_demand_file(&dir.path().join("demand.csv"), &demand).unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, REPLAY).unwrap();

    let config = ExperimentConfig::load(&path).unwrap();
    let out = run_experiment(&config, dir.path()).unwrap();
    assert_eq!(out.rows.len(), 3);
    for r in &out.rows {
        let m = &r.metrics;
        assert_eq!((m.vehicles + m.unfinished) as usize, demand.len(), "{}", r.controller);
    }
    // SOTL may strand a short red queue once arrivals stop; a fixed plan cannot.
    assert!(out.rows[0].metrics.is_complete());
    assert_eq!(out.curves.len(), 1);
    assert_eq!(out.curves[0].curve.points.len(), 3);

    let target = dir.path().join("out");
    out.write_dir(&target).unwrap();
    let results = fs::read_to_string(target.join("results.csv")).unwrap();
    let curves = fs::read_to_string(target.join("curves.csv")).unwrap();
    assert_eq!(results.lines().next(), Some(RESULTS_HEADER));
    assert_eq!(curves.lines().next(), Some(CURVES_HEADER));
    assert_eq!(curves.lines().count(), 1 + 3);
}

#[test]
fn missing_demand_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::from_toml_str(REPLAY).unwrap();
    let err = run_experiment(&config, dir.path()).unwrap_err();
    assert!(err.to_string().contains("demand.csv"), "{err}");
}

#[test]
fn peak_raises_travel_time_for_fixed_plans() {
    let base = r#"
[experiment]
controllers = ["fixedtime"]
seeds = [1]
horizon_s = 1800
drain_s = 3600
"#;
    let peaked =
        format!("{base}\n[demand]\nrate_vph = 200.0\n[demand.peak]\nrate_vph = 600.0\nwindows = [[600, 1200]]\n");
    let flat = ExperimentConfig::from_toml_str(base).unwrap();
    let peak = ExperimentConfig::from_toml_str(&peaked).unwrap();
    let t = |c: &ExperimentConfig| {
        run_experiment(c, std::path::Path::new(".")).unwrap().rows[0]
            .metrics
            .avg_travel_time_s
            .unwrap()
    };
    assert!(t(&peak) > t(&flat));
}
