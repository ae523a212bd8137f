use rtdispatch::planner::PlannerConfig;
use rtdispatch::sim::{load_scenario, run_replay, BaseMetric, Policy, ScenarioConfig};
use rtdispatch::synth::{generate_synthetic_city, write_city, CityParams};

fn params() -> CityParams {
    CityParams {
        seed: 3,
        n_nodes: 200,
        grid_cols: 5,
        grid_rows: 5,
        n_depots: 4,
        n_incidents: 500,
        replay_incidents: 40,
        incidents_per_hour: 2.0,
        ..CityParams::default()
    }
}

#[test]
fn written_city_replays_like_the_original() {
    let city = generate_synthetic_city(&params()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = write_city(&city, tmp.path()).unwrap();

    let mut config = ScenarioConfig::load(&path, &[]).unwrap();
    config.resolve_inputs(tmp.path()).unwrap();
    let from_files = load_scenario(&config).unwrap();

    let planner = PlannerConfig::tuned_for_stations(4);
    assert_eq!(from_files.planner, planner);
    let in_memory = city.scenario(city.responders.len(), planner, config.seed).unwrap();

    assert_eq!(from_files.incidents, city.replay());
    assert_eq!(from_files.model, city.model);
    for policy in [Policy::Base(BaseMetric::Euclidean), Policy::Planner] {
        let a = run_replay(&from_files, policy, false).unwrap();
        let b = run_replay(&in_memory, policy, false).unwrap();
        assert_eq!(a.outcomes, b.outcomes, "{policy:?}");
    }
}

#[test]
fn overrides_reach_the_scenario() {
    let city = generate_synthetic_city(&params()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = write_city(&city, tmp.path()).unwrap();
    let overrides = [
        "responders=2".to_string(),
        "planner.h=6".into(),
        "base_policy=\"travel_time\"".into(),
    ];
    let mut config = ScenarioConfig::load(&path, &overrides).unwrap();
    config.resolve_inputs(tmp.path()).unwrap();
    let scenario = load_scenario(&config).unwrap();
    assert_eq!(scenario.responders.len(), 2);
    assert_eq!(scenario.planner.h, 6);
    assert_eq!(scenario.base_metric, BaseMetric::TravelTime);

    assert!(ScenarioConfig::load(&path, &["planner.nonsense=1".to_string()]).is_err());
}
