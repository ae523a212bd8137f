use std::collections::VecDeque;

use crate::domain::{Incident, IncidentId, Responder, ResponderId, Trip};
use crate::error::{Error, Result};
use crate::generator::IncidentChain;
use crate::network::TravelTimes;

/// Sampled incidents get ids from here up, out of the way of real ones.
pub const CHAIN_ID_BASE: IncidentId = 1 << 63;

/// What the planner can see of the world besides the state itself.
#[derive(Debug, Clone, Copy)]
pub struct Environment<'a> {
    pub travel: &'a TravelTimes,
    /// Service duration assumed for every incident inside rollouts.
    pub service_s: f64,
    /// Constant added to every travel time.
    pub dispatch_offset_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DispatchAction {
    pub responder_id: ResponderId,
    pub incident_id: IncidentId,
}

/// A decision epoch: the head of `pending` needs a responder.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchState {
    pub now: f64,
    /// Waiting incidents in order of occurrence.
    pub pending: VecDeque<Incident>,
    pub fleet: Vec<Responder>,
    /// Index of the next chain incident not yet revealed.
    pub chain_cursor: usize,
    /// Response time of the dispatch that produced this state.
    pub response_time: Option<f64>,
    /// Chain exhausted and nothing waiting.
    pub terminal: bool,
}

impl DispatchState {
    /// State at the moment `incident` is reported.
    pub fn at_incident(incident: Incident, mut fleet: Vec<Responder>) -> Self {
        let now = incident.occurred_at;
        for r in &mut fleet {
            r.advance(now);
        }
        DispatchState {
            now,
            pending: VecDeque::from([incident]),
            fleet,
            chain_cursor: 0,
            response_time: None,
            terminal: false,
        }
    }

    pub fn responder(&self, id: ResponderId) -> Option<&Responder> {
        self.fleet.iter().find(|r| r.id == id)
    }

    pub fn free_responders(&self) -> impl Iterator<Item = &Responder> {
        self.fleet.iter().filter(|r| r.is_free())
    }

    pub fn has_free_responder(&self) -> bool {
        self.fleet.iter().any(Responder::is_free)
    }

    fn advance_fleet(&mut self, t: f64) {
        self.now = t;
        for r in &mut self.fleet {
            r.advance(t);
        }
    }
}

fn travel(env: &Environment, from: &crate::geo::LatLon, to: &crate::geo::LatLon, t: f64) -> Result<f64> {
    match env.travel.travel_time(from, to, t) {
        Ok(s) => Ok(s + env.dispatch_offset_s),
        Err(Error::NoRoute { from, to }) => Err(Error::InfeasibleAction(format!("no route from node {from} to {to}"))),
        Err(e) => Err(e),
    }
}

/// Expected travel time of `responder` to the head incident at `state.now`.
pub fn response_time(state: &DispatchState, env: &Environment, responder: ResponderId) -> Result<f64> {
    let incident = state.pending.front().ok_or(Error::EmptyActionSet)?;
    let r = state
        .responder(responder)
        .ok_or_else(|| Error::InfeasibleAction(format!("unknown responder {responder}")))?;
    if !r.is_free() {
        return Err(Error::InfeasibleAction(format!(
            "responder {responder} is busy ({:?})",
            r.status
        )));
    }
    travel(env, &r.location, &incident.location, state.now)
}

/// The full trip for `responder` serving `incident` from `now`, with service
/// lasting `service_s`, and the incident's response time. The response time
/// is summed from durations rather than differenced from epoch timestamps,
/// which would lose about 1e-7 s.
pub fn plan_trip(
    env: &Environment,
    responder: &Responder,
    incident: &Incident,
    now: f64,
    service_s: f64,
) -> Result<(Trip, f64)> {
    let to_scene = travel(env, &responder.location, &incident.location, now)?;
    let response = (now - incident.occurred_at) + to_scene;
    let arrive_at = now + to_scene;
    let service_end = arrive_at + service_s;
    let home = travel(env, &incident.location, &responder.depot_location, service_end)?;
    let trip = Trip {
        incident_id: incident.id,
        origin: responder.location,
        incident_location: incident.location,
        dispatched_at: now,
        arrive_at,
        service_end,
        return_at: service_end + home,
    };
    Ok((trip, response))
}

/// Applies `action` to the head incident (or leaves it queued for `None`)
/// and advances to the next decision epoch: the earlier of the next chain
/// incident and the next responder freeing up while incidents wait. A chain
/// incident that finds every responder busy still makes an epoch; the only
/// move there is `None`.
pub fn update_state(
    state: &DispatchState,
    action: Option<ResponderId>,
    chain: &IncidentChain,
    env: &Environment,
) -> Result<DispatchState> {
    let mut s = state.clone();
    match action {
        Some(id) => {
            let incident = s.pending.pop_front().ok_or(Error::EmptyActionSet)?;
            let idx = s
                .fleet
                .iter()
                .position(|r| r.id == id)
                .ok_or_else(|| Error::InfeasibleAction(format!("unknown responder {id}")))?;
            let (trip, response) = plan_trip(env, &s.fleet[idx], &incident, s.now, env.service_s)?;
            s.response_time = Some(response);
            s.fleet[idx].dispatch(trip)?;
        }
        None => {
            if s.has_free_responder() && !s.pending.is_empty() {
                return Err(Error::ContractViolation(
                    "an incident must be dispatched while a responder is free".into(),
                ));
            }
            s.response_time = None;
        }
    }

    loop {
        if !s.pending.is_empty() && s.has_free_responder() {
            return Ok(s);
        }
        let next_chain = chain.incidents.get(s.chain_cursor).map(|c| c.occurred_at);
        let next_free = if s.pending.is_empty() {
            None
        } else {
            s.fleet.iter().filter_map(Responder::frees_at).min_by(f64::total_cmp)
        };
        match (next_chain, next_free) {
            (None, None) => {
                s.terminal = true;
                return Ok(s);
            }
            (chain_t, Some(free_t)) if chain_t.is_none_or(|c| free_t <= c) => {
                s.advance_fleet(free_t);
            }
            (Some(chain_t), _) => {
                s.advance_fleet(chain_t);
                let c = &chain.incidents[s.chain_cursor];
                s.pending
                    .push_back(c.to_incident(CHAIN_ID_BASE + s.chain_cursor as u64, None));
                s.chain_cursor += 1;
                return Ok(s);
            }
            (None, Some(_)) => unreachable!("guarded above"),
        }
    }
}
