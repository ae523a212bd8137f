//! Discrete-event replay of an incident stream under a dispatch policy.

mod config;
mod report;

pub use config::{load_scenario, FilesConfig, OutputConfig, RegionConfig, ScenarioConfig, SyntheticIncidents};
pub use report::{
    compare_policies, write_replay_csv, write_replay_json, write_report_csv, write_report_json, write_trace,
    ComparisonReport, IncidentComparison,
};

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use rand::distributions::Open01;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{nearest_euclidean, Depot, Grid, Incident, IncidentId, Responder, ResponderId};
use crate::error::{Error, Result};
use crate::generator::{ChainGenerator, WeatherSource};
use crate::network::TravelTimes;
use crate::planner::{
    decision_seed, dispatch_decision, greedy_action, plan_trip, Decision, DecisionRecord, DispatchState, Environment,
    PlannerConfig,
};
use crate::seed;
use crate::survival::{CountWindow, IncidentHistory, SurvivalModel};

/// How the comparison baseline picks a responder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaseMetric {
    /// Closest free responder in straight-line distance.
    #[default]
    Euclidean,
    /// Free responder with the shortest expected travel time.
    TravelTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Base(BaseMetric),
    Planner,
}

/// Everything a replay needs, fully loaded.
#[derive(Debug)]
pub struct Scenario {
    pub grid: Arc<Grid>,
    pub depots: Vec<Depot>,
    pub responders: Vec<Responder>,
    pub travel: TravelTimes,
    pub model: SurvivalModel,
    /// Incidents to replay, in time order.
    pub incidents: Vec<Incident>,
    /// Earlier incidents that seed the count features.
    pub history: Vec<Incident>,
    pub weather: WeatherSource,
    pub planner: PlannerConfig,
    pub service_mean_s: f64,
    pub base_metric: BaseMetric,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.responders.is_empty() {
            return Err(Error::Config("scenario has no responders".into()));
        }
        if !(self.service_mean_s > 0.0) {
            return Err(Error::Config(format!(
                "service mean {} s must be positive",
                self.service_mean_s
            )));
        }
        self.planner.validate()?;
        for w in self.incidents.windows(2) {
            if w[1].occurred_at < w[0].occurred_at {
                return Err(Error::Config("incidents must be in time order".into()));
            }
        }
        Ok(())
    }

    /// Exponential service durations, one per incident, shared by every
    /// policy run on this scenario.
    pub fn service_times(&self) -> Vec<f64> {
        let mut rng = seed::rng_for(self.seed, "service");
        self.incidents
            .iter()
            .map(|_| {
                let u: f64 = rng.sample(Open01);
                -self.service_mean_s * u.ln()
            })
            .collect()
    }

    fn env(&self) -> Environment<'_> {
        Environment {
            travel: &self.travel,
            service_s: self.service_mean_s,
            dispatch_offset_s: self.planner.dispatch_offset_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncidentOutcome {
    pub incident_id: IncidentId,
    pub reported_at: f64,
    pub responder_id: ResponderId,
    pub dispatched_at: f64,
    pub arrive_at: f64,
    /// Travel plus any time spent waiting in the queue, seconds.
    pub response_time: f64,
    pub queued: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayResult {
    /// One per incident, in input order.
    pub outcomes: Vec<IncidentOutcome>,
    /// Wall-clock seconds spent choosing each non-queued dispatch.
    pub decision_seconds: Vec<f64>,
    pub trace: Vec<DecisionRecord>,
}

impl ReplayResult {
    pub fn mean_response_time(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        self.outcomes.iter().map(|o| o.response_time).sum::<f64>() / self.outcomes.len() as f64
    }

    pub fn mean_decision_seconds(&self) -> f64 {
        if self.decision_seconds.is_empty() {
            return 0.0;
        }
        self.decision_seconds.iter().sum::<f64>() / self.decision_seconds.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEventKind {
    IncidentReported(usize),
    ResponderArrived { responder: usize, trip: u64 },
    ServiceCompleted { responder: usize, trip: u64 },
    ResponderReturned { responder: usize, trip: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: SimEventKind,
}

/// Min-heap on time, FIFO among equal times.
#[derive(Default)]
struct EventQueue {
    heap: BinaryHeap<Reverse<(Key, u64)>>,
    events: Vec<SimEvent>,
}

#[derive(Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl EventQueue {
    fn push(&mut self, event: SimEvent) {
        let seq = self.events.len() as u64;
        self.heap.push(Reverse((Key(event.time), seq)));
        self.events.push(event);
    }

    fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop().map(|Reverse((_, seq))| self.events[seq as usize])
    }
}

struct Replay<'a> {
    scenario: &'a Scenario,
    policy: Policy,
    trace: bool,
    service: Vec<f64>,
    fleet: Vec<Responder>,
    trip_of: Vec<u64>,
    queue: VecDeque<usize>,
    events: EventQueue,
    history: IncidentHistory,
    outcomes: Vec<Option<IncidentOutcome>>,
    result: ReplayResult,
}

const HISTORY_KEEP: f64 = 31.0 * crate::time::DAY;

impl Replay<'_> {
    fn advance(&mut self, t: f64) {
        for r in &mut self.fleet {
            r.advance(t);
        }
    }

    fn dispatch(&mut self, idx: usize, responder: usize, now: f64) -> Result<()> {
        let incident = &self.scenario.incidents[idx];
        let (trip, response) = plan_trip(
            &self.scenario.env(),
            &self.fleet[responder],
            incident,
            now,
            self.service[idx],
        )?;
        self.trip_of[responder] += 1;
        let gen = self.trip_of[responder];
        self.events.push(SimEvent {
            time: trip.arrive_at,
            kind: SimEventKind::ResponderArrived { responder, trip: gen },
        });
        self.events.push(SimEvent {
            time: trip.service_end,
            kind: SimEventKind::ServiceCompleted { responder, trip: gen },
        });
        self.events.push(SimEvent {
            time: trip.return_at,
            kind: SimEventKind::ResponderReturned { responder, trip: gen },
        });
        self.outcomes[idx] = Some(IncidentOutcome {
            incident_id: incident.id,
            reported_at: incident.occurred_at,
            responder_id: self.fleet[responder].id,
            dispatched_at: now,
            arrive_at: trip.arrive_at,
            response_time: response,
            queued: now > incident.occurred_at,
        });
        self.fleet[responder].dispatch(trip)
    }

    fn index_of(&self, id: ResponderId) -> usize {
        self.fleet
            .iter()
            .position(|r| r.id == id)
            .expect("policy returns fleet members")
    }

    fn choose(&mut self, idx: usize) -> Result<Option<ResponderId>> {
        let scenario = self.scenario;
        let incident = scenario.incidents[idx].clone();
        let started = Instant::now();
        let choice = match self.policy {
            Policy::Base(BaseMetric::Euclidean) => nearest_euclidean(&self.fleet, &incident),
            Policy::Base(BaseMetric::TravelTime) => {
                let state = DispatchState::at_incident(incident, self.fleet.clone());
                greedy_action(&state, &scenario.env())?
            }
            Policy::Planner => {
                let state = DispatchState::at_incident(incident.clone(), self.fleet.clone());
                let theta = ChainGenerator {
                    model: &scenario.model,
                    grid: &scenario.grid,
                    history: &self.history,
                    weather: &scenario.weather,
                };
                let seed = decision_seed(scenario.seed, incident.id);
                let (decision, record) = dispatch_decision(&state, &scenario.planner, &scenario.env(), &theta, seed)?;
                if self.trace {
                    self.result.trace.push(record);
                }
                match decision {
                    Decision::Dispatch(a) => Some(a.responder_id),
                    Decision::Enqueue => None,
                }
            }
        };
        if choice.is_some() {
            self.result.decision_seconds.push(started.elapsed().as_secs_f64());
        }
        Ok(choice)
    }

    /// Queue heads go to whichever free responder is closest by travel time,
    /// without search. Normally only the responder that just freed is free.
    fn drain_queue(&mut self, now: f64) -> Result<()> {
        while let Some(&idx) = self.queue.front() {
            let state = DispatchState {
                now,
                pending: VecDeque::from([self.scenario.incidents[idx].clone()]),
                fleet: self.fleet.clone(),
                chain_cursor: 0,
                response_time: None,
                terminal: false,
            };
            let Some(id) = greedy_action(&state, &self.scenario.env())? else {
                break;
            };
            self.queue.pop_front();
            let r = self.index_of(id);
            self.dispatch(idx, r, now)?;
        }
        Ok(())
    }

    fn run(mut self) -> Result<ReplayResult> {
        for i in 0..self.scenario.incidents.len() {
            self.events.push(SimEvent {
                time: self.scenario.incidents[i].occurred_at,
                kind: SimEventKind::IncidentReported(i),
            });
        }
        let mut last_prune = f64::NEG_INFINITY;
        while let Some(ev) = self.events.pop() {
            self.advance(ev.time);
            match ev.kind {
                SimEventKind::IncidentReported(idx) => {
                    let inc = &self.scenario.incidents[idx];
                    self.history.record(inc.grid_id, inc.occurred_at);
                    if ev.time - last_prune > crate::time::DAY {
                        self.history.prune_before(ev.time - HISTORY_KEEP);
                        last_prune = ev.time;
                    }
                    if !self.queue.is_empty() {
                        self.queue.push_back(idx);
                        self.drain_queue(ev.time)?;
                        continue;
                    }
                    match self.choose(idx)? {
                        Some(id) => {
                            let r = self.index_of(id);
                            self.dispatch(idx, r, ev.time)?;
                        }
                        None => self.queue.push_back(idx),
                    }
                }
                SimEventKind::ServiceCompleted { responder, trip } if trip == self.trip_of[responder] => {
                    self.drain_queue(ev.time)?;
                }
                SimEventKind::ResponderArrived { .. }
                | SimEventKind::ServiceCompleted { .. }
                | SimEventKind::ResponderReturned { .. } => {}
            }
        }
        if !self.queue.is_empty() {
            return Err(Error::Integrity(format!("{} incidents never served", self.queue.len())));
        }
        self.result.outcomes = self
            .outcomes
            .into_iter()
            .map(|o| o.expect("every incident is served"))
            .collect();
        Ok(self.result)
    }
}

/// Replays the scenario's incidents under `policy`.
pub fn run_replay(scenario: &Scenario, policy: Policy, trace: bool) -> Result<ReplayResult> {
    scenario.validate()?;
    let mut history = IncidentHistory::from_incidents(scenario.grid.len(), &scenario.history);
    if let Some(first) = scenario.incidents.first() {
        history.prune_before(first.occurred_at - CountWindow::Month.seconds() - crate::time::DAY);
    }
    let n = scenario.incidents.len();
    Replay {
        scenario,
        policy,
        trace,
        service: scenario.service_times(),
        fleet: scenario.responders.clone(),
        trip_of: vec![0; scenario.responders.len()],
        queue: VecDeque::new(),
        events: EventQueue::default(),
        history,
        outcomes: vec![None; n],
        result: ReplayResult::default(),
    }
    .run()
}
