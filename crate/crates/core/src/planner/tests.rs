use std::sync::Arc;

use super::*;
use crate::domain::{build_grid, Depot, Grid, Incident, Responder, ResponderStatus};
use crate::generator::{ChainIncident, WeatherSource};
use crate::geo::{BoundingBox, LatLon, METERS_PER_SECOND_PER_MPH};
use crate::network::{select_landmarks, Node, RoadGraph, Router, TravelTimes};
use crate::speed::{SpeedModel, SpeedProfiles};
use crate::survival::{FeatureSchema, FeatureVector, IncidentHistory, SurvivalModel};

const T0: f64 = 1_486_375_200.0; // a Monday, 10:00

/// `n` cells of 1 km in a row with a node at each centroid and 1 km roads
/// between neighbours at 60 mph.
fn line_world(n: usize) -> (TravelTimes, Grid) {
    let bbox = BoundingBox::from_extent(LatLon::new(36.0, -86.0), n as f64 * 1000.0, 1000.0).unwrap();
    let grid = build_grid(bbox, 1000.0).unwrap();
    let nodes = grid
        .cells()
        .iter()
        .map(|c| Node {
            id: u64::from(c.id),
            location: c.centroid,
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n as u64 - 1 {
        edges.push((i, i + 1, 1000.0, 1, 60.0, 2 * i));
        edges.push((i + 1, i, 1000.0, 1, 60.0, 2 * i + 1));
    }
    travel_for(RoadGraph::new(nodes, &edges).unwrap(), grid)
}

fn travel_for(graph: RoadGraph, grid: Grid) -> (TravelTimes, Grid) {
    let speeds: Arc<dyn SpeedModel> = Arc::new(SpeedProfiles::freeflow(&graph, 30).unwrap());
    let lm = select_landmarks(&graph, 1, 0).unwrap();
    let router = Router::new(Arc::new(graph), Arc::new(lm), speeds).unwrap();
    (TravelTimes::new(router, Arc::new(grid.clone())), grid)
}

fn seconds_per_km() -> f64 {
    1000.0 / (60.0 * METERS_PER_SECOND_PER_MPH)
}

fn env(travel: &TravelTimes) -> Environment<'_> {
    Environment {
        travel,
        service_s: 1200.0,
        dispatch_offset_s: 0.0,
    }
}

fn responder_at(id: u32, grid: &Grid, cell: u32) -> Responder {
    let depot = Depot {
        id,
        grid_id: cell,
        location: grid.cell(cell).centroid,
    };
    Responder::idle_at(id, &depot)
}

fn incident_at(id: u64, grid: &Grid, cell: u32, t: f64) -> Incident {
    Incident {
        id,
        grid_id: cell,
        occurred_at: t,
        location: grid.cell(cell).centroid,
        weather: None,
    }
}

fn chain(grid: &Grid, events: &[(f64, u32)]) -> IncidentChain {
    IncidentChain {
        incidents: events
            .iter()
            .map(|&(t, cell)| ChainIncident {
                occurred_at: t,
                grid_id: cell,
                location: grid.cell(cell).centroid,
                features: FeatureVector::new(vec![]),
            })
            .collect(),
    }
}

#[test]
fn utility_update_examples() {
    assert!((utility_update(0.0, 0.9, 1.0, 0) - 0.9).abs() < 1e-9);
    assert!((utility_update(100.0, 1.0, 60.0, 1) - 80.0).abs() < 1e-9);
    let expected = 90.0 + 0.99999f64.powf(120.0) * 10.0;
    assert!((utility_update(90.0, 0.99999, 120.0, 2) - expected).abs() < 1e-9);
    assert!((utility_update(90.0, 0.99999, 120.0, 2) - 99.988).abs() < 1e-3);
}

#[test]
fn discounted_update_uses_minutes_by_default() {
    let mut config = PlannerConfig {
        gamma: 0.9,
        ..PlannerConfig::default()
    };
    assert_eq!(
        config.discounted_update(0.0, 60.0, 0),
        utility_update(0.0, 0.9, 1.0, 0) * 60.0 / 1.0
    );
    config.discount_unit = DiscountUnit::Seconds;
    assert_eq!(
        config.discounted_update(10.0, 60.0, 1),
        utility_update(10.0, 0.9, 60.0, 1)
    );
}

#[test]
fn response_time_cases() {
    let (tt, grid) = line_world(2);
    let e = env(&tt);
    let fleet = vec![responder_at(1, &grid, 0), responder_at(2, &grid, 1)];
    let state = DispatchState::at_incident(incident_at(7, &grid, 0, T0), fleet);
    assert_eq!(response_time(&state, &e, 1).unwrap(), 0.0);
    // 1000 m at 60 mph
    assert!((response_time(&state, &e, 2).unwrap() - 1000.0 / 26.8224).abs() < 1e-9);

    let mut busy = state.clone();
    busy.fleet[1].status = ResponderStatus::Servicing;
    assert!(matches!(response_time(&busy, &e, 2), Err(Error::InfeasibleAction(_))));
}

/// Star roads: responders in cells 1..=3 reach cell 0 in 100, 140 and 160 s.
fn star_world() -> (TravelTimes, Grid) {
    let bbox = BoundingBox::from_extent(LatLon::new(36.0, -86.0), 4000.0, 1000.0).unwrap();
    let grid = build_grid(bbox, 1000.0).unwrap();
    let nodes = grid
        .cells()
        .iter()
        .map(|c| Node {
            id: u64::from(c.id),
            location: c.centroid,
        })
        .collect();
    let v = 60.0 * METERS_PER_SECOND_PER_MPH;
    let mut edges = Vec::new();
    for (i, secs) in [(1u64, 100.0), (2, 140.0), (3, 160.0)] {
        edges.push((i, 0, secs * v, 1, 60.0, 2 * i));
        edges.push((0, i, secs * v, 1, 60.0, 2 * i + 1));
    }
    travel_for(RoadGraph::new(nodes, &edges).unwrap(), grid)
}

#[test]
fn candidate_threshold() {
    let (tt, grid) = star_world();
    let e = env(&tt);
    let fleet = (1..=3).map(|i| responder_at(i, &grid, i)).collect();
    let state = DispatchState::at_incident(incident_at(1, &grid, 0, T0), fleet);
    let ids = |c: Vec<(ResponderId, f64)>| c.into_iter().map(|x| x.0).collect::<Vec<_>>();
    assert_eq!(
        ids(select_candidate_actions(&state, &e, 0, 1, 1.5).unwrap()),
        vec![1, 2]
    );
    assert_eq!(ids(select_candidate_actions(&state, &e, 1, 1, 1.5).unwrap()), vec![1]);
    assert_eq!(ids(select_candidate_actions(&state, &e, 0, 1, 1.0).unwrap()), vec![1]);
    assert_eq!(
        ids(select_candidate_actions(&state, &e, 0, 1, 2.0).unwrap()),
        vec![1, 2, 3]
    );
}

#[test]
fn no_free_responder_is_empty_set() {
    let (tt, grid) = line_world(2);
    let e = env(&tt);
    let mut state = DispatchState::at_incident(incident_at(1, &grid, 0, T0), vec![responder_at(1, &grid, 1)]);
    state.fleet[0].status = ResponderStatus::EnRouteToIncident;
    assert!(matches!(
        select_candidate_actions(&state, &e, 0, 1, 1.5),
        Err(Error::EmptyActionSet)
    ));
}

#[test]
fn update_state_terminal_and_contract() {
    let (tt, grid) = line_world(2);
    let e = env(&tt);
    let state = DispatchState::at_incident(incident_at(1, &grid, 0, T0), vec![responder_at(1, &grid, 1)]);
    let empty = IncidentChain::default();
    let next = update_state(&state, Some(1), &empty, &e).unwrap();
    assert!(next.terminal);
    assert!((next.response_time.unwrap() - seconds_per_km()).abs() < 1e-9);
    assert!(matches!(
        update_state(&state, None, &empty, &e),
        Err(Error::ContractViolation(_))
    ));
}

#[test]
fn update_state_reveals_chain_incident_while_busy() {
    let (tt, grid) = line_world(3);
    let e = env(&tt);
    let state = DispatchState::at_incident(incident_at(1, &grid, 0, T0), vec![responder_at(1, &grid, 1)]);
    // service ends at T0 + 37.3 + 1200; the chain incident comes at T0 + 600
    let c = chain(&grid, &[(T0 + 600.0, 2)]);
    let next = update_state(&state, Some(1), &c, &e).unwrap();
    assert_eq!(next.now, T0 + 600.0);
    assert_eq!(next.pending.len(), 1);
    assert_eq!(next.pending[0].grid_id, 2);
    assert_eq!(next.fleet[0].status, ResponderStatus::Servicing);
    assert!(!next.terminal);

    // the only move is to wait; the responder frees at the end of service
    let after = update_state(&next, None, &c, &e).unwrap();
    let service_end = T0 + seconds_per_km() + 1200.0;
    assert!((after.now - service_end).abs() < 1e-6);
    assert_eq!(after.fleet[0].status, ResponderStatus::ReturningToDepot);
    let done = update_state(&after, Some(1), &c, &e).unwrap();
    // waited from T0+600 until service end, then drove two cells
    let expected = service_end - (T0 + 600.0) + 2.0 * seconds_per_km();
    assert!((done.response_time.unwrap() - expected).abs() < 1e-6);
    assert!(done.terminal);
}

#[test]
fn tree_past_horizon_returns_own_cost() {
    let (tt, grid) = line_world(2);
    let e = env(&tt);
    let state = DispatchState::at_incident(incident_at(1, &grid, 0, T0), vec![responder_at(1, &grid, 1)]);
    let node = TreeNode {
        state,
        cost: 42.0,
        depth: 5,
        elapsed: 0.0,
    };
    let config = PlannerConfig {
        h: 4,
        ..PlannerConfig::default()
    };
    assert_eq!(
        create_state_tree(&node, &IncidentChain::default(), 5, &config, &e, T0).unwrap(),
        42.0
    );
}

#[test]
fn tree_takes_min_over_children() {
    // three responders at different distances from the one chain incident
    let (tt, grid) = line_world(6);
    let e = env(&tt);
    let fleet = vec![
        responder_at(1, &grid, 1),
        responder_at(2, &grid, 3),
        responder_at(3, &grid, 5),
    ];
    let mut state = DispatchState::at_incident(incident_at(1, &grid, 4, T0), fleet);
    let config = PlannerConfig {
        epsilon: 10.0,
        h_s: 3,
        h: 1,
        gamma: 1.0,
        ..PlannerConfig::default()
    };
    let c = chain(&grid, &[(T0 + 1.0, 0)]);
    // give the head incident to responder 2, leaving 1 and 3 for the chain
    state = update_state(&state, Some(2), &c, &e).unwrap();
    let node = TreeNode {
        state: state.clone(),
        cost: 0.0,
        depth: 1,
        elapsed: 0.0,
    };
    let got = create_state_tree(&node, &c, 1, &config, &e, T0).unwrap();
    let leaves: Vec<f64> = [1u32, 3]
        .iter()
        .map(|&id| {
            let t = update_state(&state, Some(id), &c, &e).unwrap().response_time.unwrap();
            0.0 + (t - 0.0) / 3.0
        })
        .collect();
    assert_eq!(got, leaves[0].min(leaves[1]));
}

#[test]
fn chain_evaluation_cases() {
    let (tt, grid) = line_world(5);
    let e = env(&tt);
    let config = PlannerConfig::default();
    let fleet = vec![responder_at(1, &grid, 0), responder_at(2, &grid, 4)];
    let state = DispatchState::at_incident(incident_at(1, &grid, 1, T0), fleet);

    let costs = chain_evaluation(&IncidentChain::default(), &state, 0, &[1, 2], &config, &e).unwrap();
    let rt: Vec<f64> = [1, 2]
        .iter()
        .map(|&id| response_time(&state, &e, id).unwrap())
        .collect();
    assert_eq!(costs, rt);

    let single = chain_evaluation(&IncidentChain::default(), &state, 0, &[2], &config, &e).unwrap();
    assert_eq!(single.len(), 1);

    // equidistant responders on either side of the incident
    let fleet = vec![responder_at(1, &grid, 0), responder_at(2, &grid, 4)];
    let state = DispatchState::at_incident(incident_at(1, &grid, 2, T0), fleet);
    let c = chain(&grid, &[(T0 + 100.0, 2)]);
    let costs = chain_evaluation(&c, &state, 0, &[1, 2], &config, &e).unwrap();
    assert_eq!(costs[0], costs[1]);
}

fn intercept_model() -> SurvivalModel {
    SurvivalModel::zeros(FeatureSchema::intercept_only())
}

#[test]
fn forced_and_enqueue_decisions() {
    let (tt, grid) = line_world(3);
    let e = env(&tt);
    let model = intercept_model();
    let history = IncidentHistory::new(grid.len());
    let weather = WeatherSource::Unknown;
    let theta = ChainGenerator {
        model: &model,
        grid: &grid,
        history: &history,
        weather: &weather,
    };
    let config = PlannerConfig::default();
    let mut fleet = vec![responder_at(1, &grid, 0), responder_at(2, &grid, 2)];
    fleet[0].status = ResponderStatus::Servicing;
    let state = DispatchState::at_incident(incident_at(9, &grid, 0, T0), fleet.clone());
    let (d, rec) = dispatch_decision(&state, &config, &e, &theta, 1).unwrap();
    assert_eq!(
        d,
        Decision::Dispatch(DispatchAction {
            responder_id: 2,
            incident_id: 9
        })
    );
    assert!(rec.chain_costs.is_empty());

    fleet[1].status = ResponderStatus::EnRouteToIncident;
    let state = DispatchState::at_incident(incident_at(9, &grid, 0, T0), fleet);
    assert_eq!(
        dispatch_decision(&state, &config, &e, &theta, 1).unwrap().0,
        Decision::Enqueue
    );
}

#[test]
fn decisions_are_reproducible() {
    let (tt, grid) = line_world(6);
    let e = env(&tt);
    let model = SurvivalModel::new(FeatureSchema::intercept_only(), vec![-2.0]).unwrap();
    let history = IncidentHistory::new(grid.len());
    let weather = WeatherSource::Unknown;
    let theta = ChainGenerator {
        model: &model,
        grid: &grid,
        history: &history,
        weather: &weather,
    };
    let fleet = vec![
        responder_at(1, &grid, 0),
        responder_at(2, &grid, 3),
        responder_at(3, &grid, 5),
    ];
    let state = DispatchState::at_incident(incident_at(4, &grid, 2, T0), fleet);
    for b in [1, 3, 10] {
        let config = PlannerConfig {
            b,
            epsilon: 3.0,
            h_s: 2,
            ..PlannerConfig::default()
        };
        let (a, ra) = dispatch_decision(&state, &config, &e, &theta, 77).unwrap();
        let (b2, rb) = dispatch_decision(&state, &config, &e, &theta, 77).unwrap();
        assert_eq!(a, b2);
        assert_eq!(ra.totals, rb.totals);
        assert_eq!(ra.chain_costs.len(), b);
    }
}

#[test]
fn greedy_settings_pick_nearest() {
    let (tt, grid) = line_world(6);
    let e = env(&tt);
    let model = SurvivalModel::new(FeatureSchema::intercept_only(), vec![-2.0]).unwrap();
    let history = IncidentHistory::new(grid.len());
    let weather = WeatherSource::Unknown;
    let theta = ChainGenerator {
        model: &model,
        grid: &grid,
        history: &history,
        weather: &weather,
    };
    let fleet = vec![
        responder_at(1, &grid, 0),
        responder_at(2, &grid, 3),
        responder_at(3, &grid, 5),
    ];
    for cell in 0..6 {
        let state = DispatchState::at_incident(incident_at(4, &grid, cell, T0), fleet.clone());
        let greedy = greedy_action(&state, &e).unwrap().unwrap();
        let times: Vec<f64> = [1, 2, 3]
            .iter()
            .map(|&id| response_time(&state, &e, id).unwrap())
            .collect();
        let best = times.iter().copied().fold(f64::INFINITY, f64::min);
        let unique = times.iter().filter(|&&t| t == best).count() == 1;
        for config in [
            PlannerConfig {
                epsilon: 1.0,
                ..PlannerConfig::default()
            },
            PlannerConfig {
                h_s: 0,
                epsilon: 5.0,
                ..PlannerConfig::default()
            },
        ] {
            if config.h_s > 0 && !unique {
                continue;
            }
            let (d, _) = dispatch_decision(&state, &config, &e, &theta, 5).unwrap();
            assert_eq!(
                d,
                Decision::Dispatch(DispatchAction {
                    responder_id: greedy,
                    incident_id: 4
                })
            );
        }
    }
}

#[test]
fn config_validation_and_tuned_rows() {
    assert!(PlannerConfig::default().validate().is_ok());
    let bad = PlannerConfig {
        epsilon: 0.5,
        ..PlannerConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = PlannerConfig {
        h: 1,
        h_s: 2,
        ..PlannerConfig::default()
    };
    assert!(bad.validate().is_err());
    let rows: Vec<_> = [26, 13, 6, 3]
        .iter()
        .map(|&n| {
            let c = PlannerConfig::tuned_for_stations(n);
            (c.b, c.epsilon, c.h_s, c.gamma)
        })
        .collect();
    assert_eq!(
        rows,
        vec![
            (10, 1.5, 1, 0.9),
            (10, 1.5, 1, 0.9),
            (10, 2.5, 2, 0.99999),
            (10, 1.5, 1, 0.99999)
        ]
    );
}

proptest::proptest! {
    #[test]
    fn utility_update_contracts(u_p in -1e4f64..1e4, gamma in 0.01f64..0.999, t in 0.0f64..1e4, d in 0usize..20) {
        let c = utility_update(u_p, gamma, t, d);
        proptest::prop_assert!(c.is_finite());
        proptest::prop_assert!((c - u_p).abs() <= (t + u_p.abs()) / (d as f64 + 1.0) + 1e-9);
    }
}
