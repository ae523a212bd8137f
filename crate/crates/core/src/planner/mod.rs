//! Dispatch by tree search over sampled incident chains.
//!
//! For each free responder the planner simulates the dispatch forward along
//! `b` sampled chains. Within the first `h_s` levels the tree branches over
//! every responder whose travel time is within a factor `ε` of the best;
//! below that it follows the greedy choice until depth `h`. Each action's
//! score is the best leaf cost summed over chains.

mod state;

pub use state::{plan_trip, response_time, update_state, DispatchAction, DispatchState, Environment, CHAIN_ID_BASE};

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{IncidentId, ResponderId};
use crate::error::{Error, Result};
use crate::generator::{ChainGenerator, IncidentChain};
use crate::seed;
use crate::time::{DAY, MINUTE};

/// Unit of the exponent in the discount `γ^t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DiscountUnit {
    #[default]
    Minutes,
    Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Chains sampled per decision.
    pub b: usize,
    pub epsilon: f64,
    /// Depth below which the tree branches over candidate actions.
    pub h_s: usize,
    /// Total depth.
    pub h: usize,
    pub gamma: f64,
    pub discount_unit: DiscountUnit,
    /// Chains stop after this much simulated time.
    pub chain_horizon_s: f64,
    pub dispatch_offset_s: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            b: 10,
            epsilon: 1.5,
            h_s: 1,
            h: 4,
            gamma: 0.9,
            discount_unit: DiscountUnit::Minutes,
            chain_horizon_s: DAY,
            dispatch_offset_s: 0.0,
        }
    }
}

impl PlannerConfig {
    /// Tuned settings for a given number of stations (26, 13, 6 or 3);
    /// other counts use the nearest tuned row.
    pub fn tuned_for_stations(stations: usize) -> Self {
        let (epsilon, h_s, gamma) = match stations {
            0..=4 => (1.5, 1, 0.99999),
            5..=9 => (2.5, 2, 0.99999),
            10..=19 => (1.5, 1, 0.9),
            _ => (1.5, 1, 0.9),
        };
        PlannerConfig {
            b: 10,
            epsilon,
            h_s,
            gamma,
            ..PlannerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::Config("b must be at least 1".into()));
        }
        if !(self.epsilon >= 1.0) {
            return Err(Error::Config(format!("epsilon {} must be at least 1", self.epsilon)));
        }
        if self.h < self.h_s {
            return Err(Error::Config(format!("h {} must be at least h_s {}", self.h, self.h_s)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} must be in (0, 1]", self.gamma)));
        }
        if !(self.chain_horizon_s >= 0.0) || !(self.dispatch_offset_s >= 0.0) {
            return Err(Error::Config(
                "chain horizon and dispatch offset must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// [`utility_update`] with `t` in seconds; only the discount exponent is
    /// rescaled by the configured unit.
    pub fn discounted_update(&self, u_p: f64, t_seconds: f64, d: usize) -> f64 {
        let exponent = match self.discount_unit {
            DiscountUnit::Minutes => t_seconds / MINUTE,
            DiscountUnit::Seconds => t_seconds,
        };
        u_p + self.gamma.powf(exponent) * (t_seconds - u_p) / (d as f64 + 1.0)
    }
}

/// `u_p + γ^t (t − u_p) / (d + 1)`.
pub fn utility_update(u_p: f64, gamma: f64, t: f64, d: usize) -> f64 {
    u_p + gamma.powf(t) * (t - u_p) / (d as f64 + 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub state: DispatchState,
    pub cost: f64,
    pub depth: usize,
    /// Seconds since the root decision.
    pub elapsed: f64,
}

/// Candidate responders with their travel times, sorted by responder id.
/// Past the stochastic horizon only the best one is kept; ties in travel time
/// go to the lower id.
pub fn select_candidate_actions(
    state: &DispatchState,
    env: &Environment,
    d: usize,
    h_s: usize,
    epsilon: f64,
) -> Result<Vec<(ResponderId, f64)>> {
    let mut costs = Vec::new();
    for r in state.free_responders() {
        costs.push((r.id, response_time(state, env, r.id)?));
    }
    costs.sort_by_key(|c| c.0);
    let best = *costs
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .ok_or(Error::EmptyActionSet)?;
    if d >= h_s {
        return Ok(vec![best]);
    }
    let limit = epsilon * best.1;
    Ok(costs.into_iter().filter(|c| c.1 <= limit || c.0 == best.0).collect())
}

/// The responder with the shortest expected travel time.
pub fn greedy_action(state: &DispatchState, env: &Environment) -> Result<Option<ResponderId>> {
    match select_candidate_actions(state, env, 0, 0, 1.0) {
        Ok(c) => Ok(Some(c[0].0)),
        Err(Error::EmptyActionSet) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Minimum leaf cost below `node`.
pub fn create_state_tree(
    node: &TreeNode,
    chain: &IncidentChain,
    d: usize,
    config: &PlannerConfig,
    env: &Environment,
    root_time: f64,
) -> Result<f64> {
    if d > config.h || node.state.terminal {
        return Ok(node.cost);
    }
    if !node.state.has_free_responder() {
        // nothing to decide; the incident waits and the tree moves on
        let next = update_state(&node.state, None, chain, env)?;
        let child = TreeNode {
            elapsed: next.now - root_time,
            state: next,
            cost: node.cost,
            depth: d,
        };
        return create_state_tree(&child, chain, d, config, env, root_time);
    }
    let actions = select_candidate_actions(&node.state, env, d, config.h_s, config.epsilon)?;
    let d = d + 1;
    let mut best = f64::INFINITY;
    for (id, _) in actions {
        let next = update_state(&node.state, Some(id), chain, env)?;
        let t = next.response_time.expect("dispatch sets a response time");
        let cost = config.discounted_update(node.cost, t, d);
        let child = TreeNode {
            elapsed: next.now - root_time,
            state: next,
            cost,
            depth: d,
        };
        best = best.min(create_state_tree(&child, chain, d, config, env, root_time)?);
    }
    Ok(best)
}

/// Cost of each candidate under one chain, in candidate order.
pub fn chain_evaluation(
    chain: &IncidentChain,
    state: &DispatchState,
    d: usize,
    candidates: &[ResponderId],
    config: &PlannerConfig,
    env: &Environment,
) -> Result<Vec<f64>> {
    let d = d + 1;
    candidates
        .iter()
        .map(|&id| {
            let next = update_state(state, Some(id), chain, env)?;
            let util = next.response_time.expect("dispatch sets a response time");
            let root = TreeNode {
                elapsed: next.now - state.now,
                state: next,
                cost: util,
                depth: d,
            };
            create_state_tree(&root, chain, d, config, env, state.now)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Dispatch(DispatchAction),
    Enqueue,
}

/// One decision with everything needed to audit it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub incident_id: IncidentId,
    pub time: f64,
    /// `(responder, travel seconds)` for each candidate.
    pub candidates: Vec<(ResponderId, f64)>,
    /// `chain_costs[c][i]`: cost of candidate `i` under chain `c`.
    pub chain_costs: Vec<Vec<f64>>,
    pub totals: Vec<f64>,
    pub chosen: Option<ResponderId>,
    pub micros: u128,
}

/// Chooses a responder for the head of `state.pending`.
pub fn dispatch_decision(
    state: &DispatchState,
    config: &PlannerConfig,
    env: &Environment,
    theta: &ChainGenerator,
    seed: u64,
) -> Result<(Decision, DecisionRecord)> {
    let started = Instant::now();
    let incident = state.pending.front().ok_or(Error::EmptyActionSet)?;
    let mut record = DecisionRecord {
        incident_id: incident.id,
        time: state.now,
        candidates: Vec::new(),
        chain_costs: Vec::new(),
        totals: Vec::new(),
        chosen: None,
        micros: 0,
    };
    if !state.has_free_responder() {
        record.micros = started.elapsed().as_micros();
        return Ok((Decision::Enqueue, record));
    }
    let candidates = select_candidate_actions(state, env, 0, config.h_s, config.epsilon)?;
    let ids: Vec<ResponderId> = candidates.iter().map(|c| c.0).collect();
    record.candidates = candidates;
    let chosen = if ids.len() == 1 {
        ids[0]
    } else {
        let chains = theta.generate_chains(config.b, state.now, config.chain_horizon_s, Some(config.h), seed)?;
        let costs: Vec<Vec<f64>> = chains
            .par_iter()
            .map(|c| chain_evaluation(c, state, 0, &ids, config, env))
            .collect::<Result<_>>()?;
        let mut totals = vec![0.0; ids.len()];
        for row in &costs {
            for (t, c) in totals.iter_mut().zip(row) {
                *t += c;
            }
        }
        let best = (0..ids.len())
            .min_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(ids[a].cmp(&ids[b])))
            .expect("candidates are not empty");
        record.chain_costs = costs;
        record.totals = totals;
        ids[best]
    };
    record.chosen = Some(chosen);
    record.micros = started.elapsed().as_micros();
    Ok((
        Decision::Dispatch(DispatchAction {
            responder_id: chosen,
            incident_id: incident.id,
        }),
        record,
    ))
}

/// Per-decision seed: the same incident always sees the same chains.
pub fn decision_seed(root: u64, incident_id: IncidentId) -> u64 {
    seed::derive_index(seed::derive(root, "planner"), incident_id)
}

#[cfg(test)]
mod tests;
