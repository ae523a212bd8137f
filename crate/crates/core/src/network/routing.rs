use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use super::{LandmarkTable, NodeId, RoadGraph};
use crate::error::{Error, Result};
use crate::geo::LatLon;
use crate::speed::SpeedModel;

/// Shrinks potentials a hair so rounding in the landmark tables cannot make
/// them overestimate.
const POTENTIAL_SLACK: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub travel_time_s: f64,
    /// Nodes taken off the open list, counting re-expansions.
    pub settled: usize,
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

/// A* from `src` to `dst` (node indices). With `potential` ≡ 0 this is
/// Dijkstra. Nodes may be reopened, so a slightly inconsistent potential
/// still yields the optimum up to rounding.
fn search(
    graph: &RoadGraph,
    src: usize,
    dst: usize,
    weight: impl Fn(usize) -> Result<f64>,
    potential: impl Fn(usize) -> f64,
) -> Result<Route> {
    let n = graph.node_count();
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut pot = vec![f64::NAN; n];
    let mut heap = BinaryHeap::new();
    let mut settled = 0;
    g[src] = 0.0;
    pot[src] = potential(src);
    heap.push(Reverse((Key(pot[src]), src)));
    while let Some(Reverse((Key(f), u))) = heap.pop() {
        if f > g[u] + pot[u] {
            continue;
        }
        settled += 1;
        if u == dst {
            let mut nodes = vec![graph.node(dst).id];
            let mut v = dst;
            while v != src {
                v = graph.edges()[parent[v]].from;
                nodes.push(graph.node(v).id);
            }
            nodes.reverse();
            return Ok(Route {
                nodes,
                travel_time_s: g[dst],
                settled,
            });
        }
        for &ei in graph.out_edges(u) {
            let v = graph.edges()[ei].to;
            let ng = g[u] + weight(ei)?;
            if ng < g[v] {
                if pot[v].is_nan() {
                    pot[v] = potential(v);
                }
                if pot[v].is_infinite() {
                    continue;
                }
                g[v] = ng;
                parent[v] = ei;
                heap.push(Reverse((Key(ng + pot[v]), v)));
            }
        }
    }
    Err(Error::NoRoute {
        from: graph.node(src).id,
        to: graph.node(dst).id,
    })
}

/// `min(1, min over segments of free-flow / max predicted speed)`; scaling
/// free-flow lower bounds by this keeps them below predicted travel times.
fn admissible_scale(graph: &RoadGraph, speeds: &dyn SpeedModel) -> Result<f64> {
    let mut rho = 1.0f64;
    for (seg, ff) in graph.segments() {
        let max = speeds.max_speed_mph(seg)?;
        if !(max > 0.0) {
            return Err(Error::Format(format!("segment {seg} has no positive speed")));
        }
        rho = rho.min(ff / max);
    }
    Ok(rho)
}

fn index(graph: &RoadGraph, id: NodeId) -> Result<usize> {
    graph
        .index_of(id)
        .ok_or_else(|| Error::Integrity(format!("node {id} not in graph")))
}

/// Time-dependent ALT routing over speeds frozen at the departure time.
#[derive(Clone)]
pub struct Router {
    graph: Arc<RoadGraph>,
    landmarks: Arc<LandmarkTable>,
    speeds: Arc<dyn SpeedModel>,
    rho: f64,
}

impl std::fmt::Debug for Router {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Router")
            .field("nodes", &self.graph.node_count())
            .field("landmarks", &self.landmarks.len())
            .field("rho", &self.rho)
            .finish()
    }
}

impl Router {
    pub fn new(graph: Arc<RoadGraph>, landmarks: Arc<LandmarkTable>, speeds: Arc<dyn SpeedModel>) -> Result<Self> {
        if landmarks.from.iter().any(|r| r.len() != graph.node_count()) {
            return Err(Error::Integrity("landmark table does not match the graph".into()));
        }
        let rho = admissible_scale(&graph, speeds.as_ref())?;
        Ok(Router {
            graph,
            landmarks,
            speeds,
            rho,
        })
    }

    pub fn graph(&self) -> &RoadGraph {
        &self.graph
    }

    pub fn landmarks(&self) -> &LandmarkTable {
        &self.landmarks
    }

    pub fn speeds(&self) -> &dyn SpeedModel {
        self.speeds.as_ref()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Seconds to traverse edge `edge` when entered at time `t`.
    pub fn edge_seconds(&self, edge: usize, t: f64) -> Result<f64> {
        let e = &self.graph.edges()[edge];
        Ok(e.seconds_at(self.speeds.speed_mph(e.segment_id, t)?))
    }

    /// Every edge's weight under speeds frozen at `depart`.
    pub fn frozen_weights(&self, depart: f64) -> Result<Vec<f64>> {
        (0..self.graph.edge_count())
            .map(|e| self.edge_seconds(e, depart))
            .collect()
    }

    /// The landmark potential towards `dst`, in seconds.
    pub fn potential(&self, v: usize, dst: usize) -> f64 {
        let lb = self.landmarks.lower_bound(v, dst);
        if lb.is_infinite() {
            lb
        } else {
            (lb * self.rho * POTENTIAL_SLACK).max(0.0)
        }
    }

    /// ALT search between node indices.
    pub fn route(&self, src: usize, dst: usize, depart: f64) -> Result<Route> {
        search(
            &self.graph,
            src,
            dst,
            |e| self.edge_seconds(e, depart),
            |v| self.potential(v, dst),
        )
    }

    /// Plain Dijkstra between node indices, same weights.
    pub fn dijkstra(&self, src: usize, dst: usize, depart: f64) -> Result<Route> {
        search(&self.graph, src, dst, |e| self.edge_seconds(e, depart), |_| 0.0)
    }

    /// Routes between the graph nodes nearest to two coordinates.
    pub fn route_between(&self, src: &LatLon, dst: &LatLon, depart: f64) -> Result<Route> {
        self.route(self.graph.nearest_node(src), self.graph.nearest_node(dst), depart)
    }
}

pub fn alt_shortest_path(
    graph: &RoadGraph,
    landmarks: &LandmarkTable,
    speeds: &dyn SpeedModel,
    src: NodeId,
    dst: NodeId,
    depart: f64,
) -> Result<Route> {
    let (s, d) = (index(graph, src)?, index(graph, dst)?);
    let rho = admissible_scale(graph, speeds)?;
    let weight = |e: usize| {
        let edge = &graph.edges()[e];
        Ok(edge.seconds_at(speeds.speed_mph(edge.segment_id, depart)?))
    };
    let potential = |v: usize| {
        let lb = landmarks.lower_bound(v, d);
        if lb.is_infinite() {
            lb
        } else {
            (lb * rho * POTENTIAL_SLACK).max(0.0)
        }
    };
    search(graph, s, d, weight, potential)
}

pub fn dijkstra_shortest_path(
    graph: &RoadGraph,
    speeds: &dyn SpeedModel,
    src: NodeId,
    dst: NodeId,
    depart: f64,
) -> Result<Route> {
    let (s, d) = (index(graph, src)?, index(graph, dst)?);
    let weight = |e: usize| {
        let edge = &graph.edges()[e];
        Ok(edge.seconds_at(speeds.speed_mph(edge.segment_id, depart)?))
    };
    search(graph, s, d, weight, |_| 0.0)
}
