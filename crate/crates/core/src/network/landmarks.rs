use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{NodeId, RoadGraph};
use crate::error::{Error, Result};
use crate::seed;

/// Free-flow travel times (seconds) between every node and a few landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTable {
    /// Node indices of the landmarks.
    pub landmarks: Vec<usize>,
    /// `from[l][v]`: landmark `l` to node `v`.
    pub from: Vec<Vec<f64>>,
    /// `to[l][v]`: node `v` to landmark `l`.
    pub to: Vec<Vec<f64>>,
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

/// Single-source free-flow distances, following edges forwards or backwards.
fn freeflow_distances(graph: &RoadGraph, src: usize, reverse: bool) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Reverse((Key(0.0), src)));
    while let Some(Reverse((Key(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        let adj = if reverse { graph.in_edges(u) } else { graph.out_edges(u) };
        for &ei in adj {
            let e = &graph.edges()[ei];
            let v = if reverse { e.from } else { e.to };
            let nd = d + e.freeflow_seconds();
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((Key(nd), v)));
            }
        }
    }
    dist
}

/// Farthest-point landmark selection starting from a node drawn with `seed`.
pub fn select_landmarks(graph: &RoadGraph, k: usize, seed: u64) -> Result<LandmarkTable> {
    let start = seed::rng_for(seed, "landmarks").gen_range(0..graph.node_count());
    select_landmarks_from(graph, k, start)
}

/// Farthest-point selection with an explicit first landmark (node index).
///
/// Each further landmark maximizes the minimum round-trip free-flow time to
/// the landmarks chosen so far; nodes unreachable from every landmark are
/// preferred so that disconnected parts get covered.
pub fn select_landmarks_from(graph: &RoadGraph, k: usize, start: usize) -> Result<LandmarkTable> {
    let n = graph.node_count();
    if k == 0 || k > n {
        return Err(Error::Config(format!("landmark count {k} must be in 1..={n}")));
    }
    if start >= n {
        return Err(Error::Config(format!("start node index {start} out of range")));
    }
    let mut table = LandmarkTable {
        landmarks: Vec::with_capacity(k),
        from: Vec::with_capacity(k),
        to: Vec::with_capacity(k),
    };
    let mut closeness = vec![f64::INFINITY; n];
    let mut next = start;
    loop {
        let from = freeflow_distances(graph, next, false);
        let to = freeflow_distances(graph, next, true);
        for v in 0..n {
            closeness[v] = closeness[v].min(from[v] + to[v]);
        }
        table.landmarks.push(next);
        table.from.push(from);
        table.to.push(to);
        if table.landmarks.len() == k {
            break;
        }
        let mut best: Option<(f64, usize)> = None;
        for v in 0..n {
            if table.landmarks.contains(&v) {
                continue;
            }
            if best.is_none_or(|(b, _)| closeness[v] > b) {
                best = Some((closeness[v], v));
            }
        }
        next = best.expect("k <= n leaves a candidate").1;
    }
    Ok(table)
}

impl LandmarkTable {
    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Lower bound on the free-flow time from `v` to `target`; infinite when
    /// the table proves `target` unreachable from `v`.
    pub fn lower_bound(&self, v: usize, target: usize) -> f64 {
        let mut best = 0.0f64;
        for l in 0..self.landmarks.len() {
            let a = self.from[l][target] - self.from[l][v];
            let b = self.to[l][v] - self.to[l][target];
            for x in [a, b] {
                // inf - inf carries no information
                if !x.is_nan() && x > best {
                    best = x;
                }
            }
        }
        best
    }
}

#[derive(Serialize, Deserialize)]
struct LandmarkFile {
    format: String,
    node_count: usize,
    landmarks: Vec<NodeId>,
    from: Vec<Vec<Option<f64>>>,
    to: Vec<Vec<Option<f64>>>,
}

const LANDMARK_FORMAT: &str = "rtdispatch.landmarks";

fn encode(row: &[f64]) -> Vec<Option<f64>> {
    row.iter().map(|&d| d.is_finite().then_some(d)).collect()
}

fn decode(row: Vec<Option<f64>>) -> Vec<f64> {
    row.into_iter().map(|d| d.unwrap_or(f64::INFINITY)).collect()
}

/// JSON with landmark node ids; unreachable entries are `null`.
pub fn save_landmarks(path: &Path, graph: &RoadGraph, table: &LandmarkTable) -> Result<()> {
    let file = LandmarkFile {
        format: LANDMARK_FORMAT.into(),
        node_count: graph.node_count(),
        landmarks: table.landmarks.iter().map(|&i| graph.node(i).id).collect(),
        from: table.from.iter().map(|r| encode(r)).collect(),
        to: table.to.iter().map(|r| encode(r)).collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_landmarks(path: &Path, graph: &RoadGraph) -> Result<LandmarkTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: LandmarkFile =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.format != LANDMARK_FORMAT {
        return Err(Error::Format(format!("unexpected landmark format {:?}", file.format)));
    }
    let n = graph.node_count();
    let k = file.landmarks.len();
    if file.node_count != n
        || file.from.len() != k
        || file.to.len() != k
        || file.from.iter().chain(&file.to).any(|r| r.len() != n)
    {
        return Err(Error::Integrity("landmark table does not match the graph".into()));
    }
    let landmarks = file
        .landmarks
        .iter()
        .map(|&id| {
            graph
                .index_of(id)
                .ok_or_else(|| Error::Integrity(format!("landmark node {id} not in graph")))
        })
        .collect::<Result<_>>()?;
    Ok(LandmarkTable {
        landmarks,
        from: file.from.into_iter().map(decode).collect(),
        to: file.to.into_iter().map(decode).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::LatLon;
    use crate::network::Node;

    /// 0 -> 1 -> 2 -> 3 with lengths 100, 200, 300 at 45 mph, both directions.
    fn path_graph() -> RoadGraph {
        let nodes = (0..4)
            .map(|i| Node {
                id: i,
                location: LatLon::new(36.0 + i as f64 * 0.001, -86.0),
            })
            .collect();
        let mut edges = Vec::new();
        for (i, len) in [100.0, 200.0, 300.0].into_iter().enumerate() {
            let i = i as u64;
            edges.push((i, i + 1, len, 1, 45.0, i));
            edges.push((i + 1, i, len, 1, 45.0, 10 + i));
        }
        RoadGraph::new(nodes, &edges).unwrap()
    }

    #[test]
    fn path_graph_end_landmark_has_prefix_sums() {
        let g = path_graph();
        let t = select_landmarks_from(&g, 1, 0).unwrap();
        assert_eq!(t.landmarks, vec![0]);
        let v = 45.0 * 0.44704;
        let prefix = [0.0, 100.0 / v, 100.0 / v + 200.0 / v, 100.0 / v + 200.0 / v + 300.0 / v];
        for i in 0..4 {
            assert!((t.from[0][i] - prefix[i]).abs() < 1e-9);
            assert!((t.to[0][i] - prefix[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn second_landmark_is_far_end() {
        let t = select_landmarks_from(&path_graph(), 2, 0).unwrap();
        assert_eq!(t.landmarks, vec![0, 3]);
    }

    #[test]
    fn all_nodes_landmarks() {
        let t = select_landmarks(&path_graph(), 4, 9).unwrap();
        let mut l = t.landmarks.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
        assert!(select_landmarks(&path_graph(), 5, 9).is_err());
        assert!(select_landmarks(&path_graph(), 0, 9).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let g = path_graph();
        assert_eq!(select_landmarks(&g, 2, 5).unwrap(), select_landmarks(&g, 2, 5).unwrap());
    }

    #[test]
    fn disconnected_entries_infinite() {
        let nodes = (0..3)
            .map(|i| Node {
                id: i,
                location: LatLon::new(36.0, -86.0 + i as f64 * 0.001),
            })
            .collect();
        let g = RoadGraph::new(nodes, &[(0, 1, 100.0, 1, 30.0, 1)]).unwrap();
        let t = select_landmarks_from(&g, 1, 0).unwrap();
        assert!(t.from[0][2].is_infinite());
        assert!(t.to[0][1].is_infinite());
        // node 1 cannot reach the landmark, which is the target here
        assert!(t.lower_bound(1, 0).is_infinite());
        assert_eq!(t.lower_bound(2, 1), 0.0);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.json");
        let g = path_graph();
        let t = select_landmarks(&g, 2, 1).unwrap();
        save_landmarks(&path, &g, &t).unwrap();
        assert_eq!(load_landmarks(&path, &g).unwrap(), t);
    }
}
