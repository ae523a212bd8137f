//! Road graph, landmark tables, time-dependent routing and the travel-time
//! cache.

mod cache;
mod landmarks;
mod routing;

pub use cache::{CacheKey, TravelTimeCache, TravelTimes};
pub use landmarks::{load_landmarks, save_landmarks, select_landmarks, select_landmarks_from, LandmarkTable};
pub use routing::{alt_shortest_path, dijkstra_shortest_path, Route, Router};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::{LatLon, METERS_PER_SECOND_PER_MPH};

pub type NodeId = u64;
pub type SegmentId = u64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub location: LatLon,
}

/// Directed edge between node indices (not ids).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub length_m: f64,
    pub lanes: u32,
    pub freeflow_mph: f64,
    pub segment_id: SegmentId,
}

impl Edge {
    pub fn freeflow_seconds(&self) -> f64 {
        self.length_m / (self.freeflow_mph * METERS_PER_SECOND_PER_MPH)
    }

    pub fn seconds_at(&self, speed_mph: f64) -> f64 {
        self.length_m / (speed_mph * METERS_PER_SECOND_PER_MPH)
    }
}

/// Directed road graph with forward and reverse adjacency in CSR form.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: HashMap<NodeId, usize>,
    out_start: Vec<usize>,
    out_edges: Vec<usize>,
    in_start: Vec<usize>,
    in_edges: Vec<usize>,
}

fn csr(n: usize, edges: &[Edge], key: impl Fn(&Edge) -> usize) -> (Vec<usize>, Vec<usize>) {
    let mut start = vec![0usize; n + 1];
    for e in edges {
        start[key(e) + 1] += 1;
    }
    for i in 0..n {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut list = vec![0usize; edges.len()];
    for (i, e) in edges.iter().enumerate() {
        let k = key(e);
        list[fill[k]] = i;
        fill[k] += 1;
    }
    (start, list)
}

impl RoadGraph {
    /// Validates and indexes a graph. `edges` refer to node ids.
    pub fn new(nodes: Vec<Node>, edges: &[(NodeId, NodeId, f64, u32, f64, SegmentId)]) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Format("graph has no nodes".into()));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !(n.location.lat.is_finite() && n.location.lon.is_finite()) {
                return Err(Error::Format(format!("node {} has non-finite coordinates", n.id)));
            }
            if index.insert(n.id, i).is_some() {
                return Err(Error::Integrity(format!("duplicate node id {}", n.id)));
            }
        }
        let mut out = Vec::with_capacity(edges.len());
        for &(from, to, length_m, lanes, freeflow_mph, segment_id) in edges {
            let lookup = |id: NodeId| {
                index
                    .get(&id)
                    .copied()
                    .ok_or_else(|| Error::Integrity(format!("edge {from}->{to} references missing node {id}")))
            };
            let (f, t) = (lookup(from)?, lookup(to)?);
            if !(length_m > 0.0 && length_m.is_finite()) {
                return Err(Error::Integrity(format!("edge {from}->{to} has length {length_m}")));
            }
            if !(freeflow_mph > 0.0 && freeflow_mph.is_finite()) {
                return Err(Error::Integrity(format!(
                    "edge {from}->{to} has free-flow speed {freeflow_mph}"
                )));
            }
            out.push(Edge {
                from: f,
                to: t,
                length_m,
                lanes,
                freeflow_mph,
                segment_id,
            });
        }
        let (out_start, out_edges) = csr(nodes.len(), &out, |e| e.from);
        let (in_start, in_edges) = csr(nodes.len(), &out, |e| e.to);
        Ok(RoadGraph {
            nodes,
            edges: out,
            index,
            out_start,
            out_edges,
            in_start,
            in_edges,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    /// Indices of edges leaving node `idx`.
    pub fn out_edges(&self, idx: usize) -> &[usize] {
        &self.out_edges[self.out_start[idx]..self.out_start[idx + 1]]
    }

    /// Indices of edges entering node `idx`.
    pub fn in_edges(&self, idx: usize) -> &[usize] {
        &self.in_edges[self.in_start[idx]..self.in_start[idx + 1]]
    }

    /// Distinct segment ids with the free-flow speed of their first edge.
    pub fn segments(&self) -> impl Iterator<Item = (SegmentId, f64)> + '_ {
        let mut seen = std::collections::HashSet::new();
        self.edges
            .iter()
            .filter(move |e| seen.insert(e.segment_id))
            .map(|e| (e.segment_id, e.freeflow_mph))
    }

    /// Node index closest to `p` in straight-line distance; ties to the lower index.
    pub fn nearest_node(&self, p: &LatLon) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = n.location.distance_m(p);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn from_text(text: &str) -> Result<Self> {
        parse_graph(text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("[nodes]\nid,lat,lon\n");
        for n in &self.nodes {
            let _ = writeln!(s, "{},{},{}", n.id, n.location.lat, n.location.lon);
        }
        s.push_str("[edges]\nfrom,to,length_m,lanes,freeflow_mph,segment_id\n");
        for e in &self.edges {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                self.nodes[e.from].id, self.nodes[e.to].id, e.length_m, e.lanes, e.freeflow_mph, e.segment_id
            );
        }
        s
    }
}

#[derive(PartialEq)]
enum Section {
    None,
    Nodes,
    Edges,
}

fn parse_graph(text: &str) -> Result<RoadGraph> {
    let mut section = Section::None;
    let mut saw_nodes = false;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = i + 1;
        let fmt = |msg: String| Error::Format(format!("line {lineno}: {msg}"));
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "[nodes]" => {
                section = Section::Nodes;
                saw_nodes = true;
                continue;
            }
            "[edges]" => {
                section = Section::Edges;
                continue;
            }
            _ => {}
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match section {
            Section::None => return Err(fmt(format!("data outside a section: {line:?}"))),
            Section::Nodes => {
                if fields[0] == "id" {
                    continue;
                }
                if fields.len() != 3 {
                    return Err(fmt("node rows are id,lat,lon".into()));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| fmt(format!("bad number {s:?}")));
                let id = fields[0]
                    .parse()
                    .map_err(|_| fmt(format!("bad node id {:?}", fields[0])))?;
                nodes.push(Node {
                    id,
                    location: LatLon::new(num(fields[1])?, num(fields[2])?),
                });
            }
            Section::Edges => {
                if fields[0] == "from" {
                    continue;
                }
                if fields.len() != 6 {
                    return Err(fmt(
                        "edge rows are from,to,length_m,lanes,freeflow_mph,segment_id".into()
                    ));
                }
                let int = |s: &str| s.parse::<u64>().map_err(|_| fmt(format!("bad integer {s:?}")));
                let num = |s: &str| s.parse::<f64>().map_err(|_| fmt(format!("bad number {s:?}")));
                edges.push((
                    int(fields[0])?,
                    int(fields[1])?,
                    num(fields[2])?,
                    int(fields[3])? as u32,
                    num(fields[4])?,
                    int(fields[5])?,
                ));
            }
        }
    }
    if !saw_nodes || nodes.is_empty() {
        return Err(Error::Format("empty or missing [nodes] section".into()));
    }
    RoadGraph::new(nodes, &edges)
}

pub fn load_graph(path: &Path) -> Result<RoadGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_graph(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_graph(path: &Path, graph: &RoadGraph) -> Result<()> {
    fs::write(path, graph.to_text()).map_err(|e| Error::io(path, e))
}
