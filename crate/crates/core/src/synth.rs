//! Synthetic cities: a random road network, speed profiles, a ground-truth
//! incident model, incidents sampled from it, and depots placed where the
//! incidents are.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::distributions::{Distribution, Open01, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{build_grid, write_fleet, CellId, Depot, Grid, Incident, Responder, Weather};
use crate::error::{Error, Result};
use crate::generator::{ChainGenerator, WeatherSource};
use crate::geo::{BoundingBox, LatLon};
use crate::network::{
    save_graph, save_landmarks, select_landmarks, LandmarkTable, Node, RoadGraph, Router, TravelTimes,
};
use crate::planner::PlannerConfig;
use crate::seed;
use crate::sim::{BaseMetric, FilesConfig, OutputConfig, RegionConfig, Scenario, ScenarioConfig};
use crate::speed::{save_profiles, SpeedModel, SpeedProfiles};
use crate::survival::io::{save_model, write_incidents};
use crate::survival::{CountWindow, FeatureKind, FeatureSchema, IncidentHistory, SurvivalModel};
use crate::time::{self, CACHE_BIN_MINUTES, DAY, HOUR, MINUTE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CityParams {
    pub seed: u64,
    pub n_nodes: usize,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub cell_size_m: f64,
    pub n_depots: usize,
    /// Defaults to one per depot.
    pub responders: Option<usize>,
    /// City-wide baseline incident rate, before hotspots and covariates.
    pub incidents_per_hour: f64,
    pub n_incidents: usize,
    /// The last this-many incidents form the replay stream; the rest are history.
    pub replay_incidents: usize,
    pub hotspots: usize,
    /// Rate multiplier inside a hotspot cell.
    pub hotspot_factor: f64,
    pub start: String,
    pub sw_lat: f64,
    pub sw_lon: f64,
    pub landmarks_k: usize,
}

impl Default for CityParams {
    fn default() -> Self {
        CityParams {
            seed: 1,
            n_nodes: 1000,
            grid_cols: 8,
            grid_rows: 8,
            cell_size_m: 1609.344,
            n_depots: 6,
            responders: None,
            incidents_per_hour: 1.0,
            n_incidents: 3000,
            replay_incidents: 200,
            hotspots: 3,
            hotspot_factor: 3.0,
            start: "2017-01-02T00:00:00Z".into(),
            sw_lat: 36.0,
            sw_lon: -86.9,
            landmarks_k: 16,
        }
    }
}

impl CityParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_nodes", self.n_nodes),
            ("grid_cols", self.grid_cols),
            ("grid_rows", self.grid_rows),
            ("n_depots", self.n_depots),
            ("n_incidents", self.n_incidents),
            ("landmarks_k", self.landmarks_k),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n_nodes < 2 {
            return Err(Error::Config("n_nodes must be at least 2".into()));
        }
        if !(self.cell_size_m > 0.0) || !(self.incidents_per_hour > 0.0) || !(self.hotspot_factor > 0.0) {
            return Err(Error::Config(
                "cell size, rate and hotspot factor must be positive".into(),
            ));
        }
        if self.n_depots > self.grid_cols * self.grid_rows {
            return Err(Error::Config("more depots than cells".into()));
        }
        if self.hotspots > self.grid_cols * self.grid_rows {
            return Err(Error::Config("more hotspots than cells".into()));
        }
        if self.replay_incidents >= self.n_incidents {
            return Err(Error::Config("replay_incidents must leave some history".into()));
        }
        // With rate r·e^{-βk} and k ≈ 48 h × rate, a steady count exists only
        // while 48·r_max·|β|·e ≤ 1; beyond that the stream explodes.
        let cells = (self.grid_cols * self.grid_rows) as f64;
        let r_max = self.incidents_per_hour / cells * self.hotspot_factor.max(1.0);
        if 48.0 * r_max * COUNT_BETA.abs() * std::f64::consts::E > 1.0 {
            return Err(Error::Config(format!(
                "{} incidents/hour over {cells} cells is too dense for a stable stream",
                self.incidents_per_hour
            )));
        }
        if self.responders == Some(0) {
            return Err(Error::Config("responders must be at least 1".into()));
        }
        time::parse_timestamp(&self.start)?;
        Ok(())
    }

    fn responder_count(&self) -> usize {
        self.responders.unwrap_or(self.n_depots)
    }
}

/// A generated city held in memory.
#[derive(Debug)]
pub struct SyntheticCity {
    pub params: CityParams,
    pub grid: Arc<Grid>,
    pub graph: Arc<RoadGraph>,
    pub speeds: Arc<SpeedProfiles>,
    pub landmarks: Arc<LandmarkTable>,
    pub model: SurvivalModel,
    pub weather: WeatherSource,
    /// Every sampled incident in time order.
    pub incidents: Vec<Incident>,
    /// Depots in placement order, densest cells first.
    pub depots: Vec<Depot>,
    pub responders: Vec<Responder>,
}

impl SyntheticCity {
    pub fn history(&self) -> &[Incident] {
        &self.incidents[..self.incidents.len() - self.params.replay_incidents.min(self.incidents.len())]
    }

    pub fn replay(&self) -> &[Incident] {
        &self.incidents[self.history().len()..]
    }

    /// A replay scenario over this city using the first `responders` of its
    /// fleet and the ground-truth model.
    pub fn scenario(&self, responders: usize, planner: PlannerConfig, seed: u64) -> Result<Scenario> {
        let router = Router::new(
            self.graph.clone(),
            self.landmarks.clone(),
            self.speeds.clone() as Arc<dyn SpeedModel>,
        )?;
        let mut fleet: Vec<Responder> = self.responders.iter().take(responders).cloned().collect();
        let mut next = fleet.len();
        while fleet.len() < responders {
            fleet.push(Responder::idle_at(
                next as u32 + 1,
                &self.depots[next % self.depots.len()],
            ));
            next += 1;
        }
        Ok(Scenario {
            grid: self.grid.clone(),
            depots: self.depots.clone(),
            responders: fleet,
            travel: TravelTimes::new(router, self.grid.clone()),
            model: self.model.clone(),
            incidents: self.replay().to_vec(),
            history: self.history().to_vec(),
            weather: self.weather.clone(),
            planner,
            service_mean_s: 20.0 * MINUTE,
            base_metric: BaseMetric::Euclidean,
            seed,
        })
    }
}

fn uniform(rng: &mut seed::Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn round_to(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}

/// Jittered lattice over the region, every street two-way, a few diagonals.
/// Every fourth row and column is a faster arterial.
fn generate_graph(params: &CityParams, bbox: &BoundingBox, width_m: f64, height_m: f64) -> Result<RoadGraph> {
    let mut rng = seed::rng_for(params.seed, "city-graph");
    let projection = bbox.projection();
    let n = params.n_nodes;
    let cols = ((n as f64 * width_m / height_m).sqrt().ceil() as usize).clamp(1, n);
    let rows = n.div_ceil(cols);
    let (dx, dy) = (width_m / cols as f64, height_m / rows as f64);
    let nodes: Vec<Node> = (0..n)
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            let x = (c as f64 + 0.5 + uniform(&mut rng, -0.3, 0.3)) * dx;
            let y = (r as f64 + 0.5 + uniform(&mut rng, -0.3, 0.3)) * dy;
            let p = projection.to_latlon(x, y);
            Node {
                id: k as u64 + 1,
                location: LatLon::new(round_to(p.lat, 7), round_to(p.lon, 7)),
            }
        })
        .collect();
    let mut edges = Vec::new();
    let mut link = |rng: &mut seed::Rng, a: usize, b: usize, arterial: bool| {
        let straight = nodes[a].location.distance_m(&nodes[b].location);
        let length = round_to((straight * uniform(rng, 1.0, 1.15)).max(1.0), 2);
        let (ff, lanes) = if arterial {
            (round_to(uniform(rng, 45.0, 55.0), 1), rng.gen_range(2..=3))
        } else {
            (round_to(uniform(rng, 25.0, 35.0), 1), 1)
        };
        for (from, to) in [(a, b), (b, a)] {
            let seg = edges.len() as u64 + 1;
            edges.push((nodes[from].id, nodes[to].id, length, lanes, ff, seg));
        }
    };
    for k in 0..n {
        let (r, c) = (k / cols, k % cols);
        if c + 1 < cols && k + 1 < n {
            link(&mut rng, k, k + 1, r % 4 == 0);
        }
        if k + cols < n {
            link(&mut rng, k, k + cols, c % 4 == 0);
        }
        if c + 1 < cols && k + cols + 1 < n && rng.gen_bool(0.1) {
            link(&mut rng, k, k + cols + 1, false);
        }
    }
    RoadGraph::new(nodes, &edges)
}

/// Weekday rush hours around 08:00 and 17:00; each segment slows by its own
/// depth, drawn once per segment.
fn generate_speeds(params: &CityParams, graph: &RoadGraph) -> Result<SpeedProfiles> {
    let root = seed::derive(params.seed, "city-speeds");
    let mut depth: HashMap<u64, f64> = HashMap::new();
    for (seg, _) in graph.segments() {
        let mut rng = seed::rng(seed::derive_index(root, seg));
        depth.insert(seg, uniform(&mut rng, 0.1, 0.45));
    }
    SpeedProfiles::from_fn(graph, CACHE_BIN_MINUTES, |seg, ff, offset| {
        let day = (offset / DAY).floor();
        let hour = (offset - day * DAY) / HOUR + 0.25;
        let bump = |peak: f64| (-(hour - peak).powi(2) / 2.0).exp();
        let slow = if day < 5.0 {
            depth[&seg] * (bump(8.0) + bump(17.0)).min(1.0)
        } else {
            0.0
        };
        round_to(ff * (1.0 - slow), 3)
    })
}

/// Daily weather: a seasonal temperature cycle with noise, rain on about
/// three days in ten. Values carry the one-decimal precision of the
/// incident file.
fn generate_weather(params: &CityParams, start: f64, days: i64) -> WeatherSource {
    let mut rng = seed::rng_for(params.seed, "city-weather");
    let first = time::day_index(start);
    let mut map = HashMap::new();
    for d in first..first + days {
        let doy = (d.rem_euclid(365)) as f64;
        let temp = 4.0 + 10.0 * (2.0 * std::f64::consts::PI * (doy - 200.0) / 365.0).cos() + 2.5 * std_normal(&mut rng);
        let rain = if rng.gen_bool(0.3) {
            let u: f64 = rng.sample(Open01);
            -5.0 * u.ln()
        } else {
            0.0
        };
        map.insert(
            d,
            Weather {
                temp_c: round_to(temp, 1),
                rain_mm: round_to(rain, 1),
            },
        );
    }
    WeatherSource::Daily(map)
}

/// Standard normal via Box-Muller.
fn std_normal(rng: &mut seed::Rng) -> f64 {
    let u1: f64 = rng.sample(Open01);
    let u2: f64 = rng.sample(Open01);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Coefficient on the two-day cell count. Recent incidents raise the rate,
/// so the count feeds back on itself; see [`CityParams::validate`].
const COUNT_BETA: f64 = -0.02;

/// Temperature, rainfall, two-day cell count, one indicator per hotspot,
/// intercept. Sparse covariates such as time-of-day indicators are left out
/// so the coefficients stay identifiable from a few thousand incidents.
fn ground_truth(params: &CityParams, n_cells: usize) -> Result<SurvivalModel> {
    let mut rng = seed::rng_for(params.seed, "city-hotspots");
    let mut cells: Vec<CellId> = (0..n_cells as CellId).collect();
    let mut hot = Vec::new();
    for _ in 0..params.hotspots {
        let i = rng.gen_range(0..cells.len());
        hot.push(cells.swap_remove(i));
    }
    hot.sort_unstable();
    let mut kinds = vec![
        FeatureKind::Temperature,
        FeatureKind::Rainfall,
        FeatureKind::CellCount(CountWindow::TwoDays),
    ];
    let mut beta = vec![0.01, -0.04, COUNT_BETA];
    for h in hot {
        kinds.push(FeatureKind::Cell(h));
        beta.push(-params.hotspot_factor.ln());
    }
    kinds.push(FeatureKind::Intercept);
    // mean hours between incidents in one cell at baseline
    beta.push((n_cells as f64 / params.incidents_per_hour).ln());
    SurvivalModel::new(FeatureSchema::new(kinds)?, beta)
}

fn sample_incidents(
    params: &CityParams,
    grid: &Grid,
    model: &SurvivalModel,
    weather: &WeatherSource,
    start: f64,
    horizon: f64,
) -> Result<Vec<Incident>> {
    let history = IncidentHistory::new(grid.len());
    let generator = ChainGenerator {
        model,
        grid,
        history: &history,
        weather,
    };
    let chain = generator.generate_chain(
        start,
        horizon,
        Some(params.n_incidents),
        seed::derive(params.seed, "city-incidents"),
    )?;
    let mut rng = seed::rng_for(params.seed, "city-jitter");
    let projection = grid.projection();
    let mut out = Vec::with_capacity(chain.len());
    for (i, c) in chain.incidents.iter().enumerate() {
        let (x0, y0, x1, y1) = grid.cell_rect(c.grid_id);
        // keep clear of cell edges so rounding cannot move the point
        let x = x0 + (x1 - x0) * uniform(&mut rng, 0.02, 0.98);
        let y = y0 + (y1 - y0) * uniform(&mut rng, 0.02, 0.98);
        let p = projection.to_latlon(x, y);
        let p = LatLon::new(round_to(p.lat, 6), round_to(p.lon, 6));
        let location = if grid.grid_of(&p).ok() == Some(c.grid_id) {
            p
        } else {
            c.location
        };
        let occurred_at = c.occurred_at.round();
        out.push(Incident {
            id: i as u64 + 1,
            grid_id: c.grid_id,
            occurred_at,
            location,
            weather: weather.at(occurred_at),
        });
    }
    Ok(out)
}

/// Samples `n_depots` distinct cells with probability proportional to their
/// history incident count plus one.
fn place_depots(params: &CityParams, grid: &Grid, history: &[Incident]) -> Vec<Depot> {
    let mut weight = vec![1.0; grid.len()];
    for inc in history {
        weight[inc.grid_id as usize] += 1.0;
    }
    let mut rng = seed::rng_for(params.seed, "city-depots");
    let mut depots = Vec::with_capacity(params.n_depots);
    for k in 0..params.n_depots {
        let pick = WeightedIndex::new(&weight).expect("cells remain").sample(&mut rng);
        weight[pick] = 0.0;
        depots.push(Depot {
            id: k as u32 + 1,
            grid_id: pick as CellId,
            location: grid.cell(pick as CellId).centroid,
        });
    }
    depots
}

pub fn generate_synthetic_city(params: &CityParams) -> Result<SyntheticCity> {
    params.validate()?;
    let sw = LatLon::new(params.sw_lat, params.sw_lon);
    let width_m = params.grid_cols as f64 * params.cell_size_m;
    let height_m = params.grid_rows as f64 * params.cell_size_m;
    let bbox = BoundingBox::from_extent(sw, width_m, height_m)?;
    let grid = Arc::new(build_grid(bbox, params.cell_size_m)?);
    let graph = Arc::new(generate_graph(params, &bbox, width_m, height_m)?);
    let speeds = Arc::new(generate_speeds(params, &graph)?);
    let landmarks = Arc::new(select_landmarks(
        &graph,
        params.landmarks_k.min(graph.node_count()),
        params.seed,
    )?);
    let model = ground_truth(params, grid.len())?;

    let start = time::parse_timestamp(&params.start)?;
    // enough weather for several times the expected span
    let expected_days = params.n_incidents as f64 / params.incidents_per_hour / 24.0;
    let days = (4.0 * expected_days).ceil() as i64 + 30;
    let weather = generate_weather(params, start, days);
    let horizon = (time::day_index(start) + days) as f64 * DAY - start;
    let incidents = sample_incidents(params, &grid, &model, &weather, start, horizon)?;
    if incidents.len() <= params.replay_incidents {
        return Err(Error::Config(format!(
            "only {} incidents sampled; raise the rate or lower replay_incidents",
            incidents.len()
        )));
    }
    let history_len = incidents.len() - params.replay_incidents;
    let depots = place_depots(params, &grid, &incidents[..history_len]);
    let responders = (0..params.responder_count())
        .map(|i| Responder::idle_at(i as u32 + 1, &depots[i % depots.len()]))
        .collect();
    Ok(SyntheticCity {
        params: params.clone(),
        grid,
        graph,
        speeds,
        landmarks,
        model,
        weather,
        incidents,
        depots,
        responders,
    })
}

pub const SCENARIO_FILE: &str = "scenario.toml";

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    params: &'a CityParams,
    nodes: usize,
    edges: usize,
    cells: usize,
    incidents: usize,
    history_incidents: usize,
    replay_incidents: usize,
    depots: &'a [Depot],
    ground_truth: Vec<(String, f64)>,
    files: Vec<&'static str>,
}

/// Writes the city as a scenario directory and returns the scenario path.
pub fn write_city(city: &SyntheticCity, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = &city.params;
    save_graph(&dir.join("graph.txt"), &city.graph)?;
    save_profiles(&dir.join("speeds.csv"), &city.speeds)?;
    save_landmarks(&dir.join("landmarks.json"), &city.graph, &city.landmarks)?;
    save_model(&dir.join("model.toml"), &city.model)?;
    write_incidents(&dir.join("incidents_history.csv"), city.history())?;
    write_incidents(&dir.join("incidents_replay.csv"), city.replay())?;
    write_fleet(&dir.join("responders.csv"), &city.depots, &city.responders)?;

    let bbox = city.grid.bbox();
    let config = ScenarioConfig {
        seed: p.seed,
        responders: None,
        service_mean_minutes: 20.0,
        base_policy: BaseMetric::Euclidean,
        landmarks_k: p.landmarks_k,
        region: RegionConfig {
            min_lat: bbox.min_lat,
            min_lon: bbox.min_lon,
            max_lat: bbox.max_lat,
            max_lon: bbox.max_lon,
            cell_size_m: p.cell_size_m,
        },
        files: FilesConfig {
            graph: "graph.txt".into(),
            model: "model.toml".into(),
            fleet: "responders.csv".into(),
            incidents: Some("incidents_replay.csv".into()),
            history: Some("incidents_history.csv".into()),
            speeds: Some("speeds.csv".into()),
            landmarks: Some("landmarks.json".into()),
            cache: None,
        },
        synthetic: None,
        planner: PlannerConfig::tuned_for_stations(p.n_depots),
        output: OutputConfig {
            report_csv: Some("report.csv".into()),
            report_json: Some("report.json".into()),
            trace: None,
            cache: None,
        },
    };
    let scenario_path = dir.join(SCENARIO_FILE);
    std::fs::write(&scenario_path, config.to_toml()).map_err(|e| Error::io(&scenario_path, e))?;

    let manifest = Manifest {
        format: "rtdispatch.city",
        params: p,
        nodes: city.graph.node_count(),
        edges: city.graph.edge_count(),
        cells: city.grid.len(),
        incidents: city.incidents.len(),
        history_incidents: city.history().len(),
        replay_incidents: city.replay().len(),
        depots: &city.depots,
        ground_truth: city
            .model
            .schema
            .names()
            .into_iter()
            .zip(city.model.beta.iter().copied())
            .collect(),
        files: vec![
            SCENARIO_FILE,
            "graph.txt",
            "speeds.csv",
            "landmarks.json",
            "model.toml",
            "incidents_history.csv",
            "incidents_replay.csv",
            "responders.csv",
        ],
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(scenario_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::dijkstra_shortest_path;

    fn small() -> CityParams {
        CityParams {
            n_nodes: 120,
            grid_cols: 4,
            grid_rows: 4,
            n_depots: 3,
            n_incidents: 600,
            replay_incidents: 50,
            incidents_per_hour: 2.0,
            landmarks_k: 4,
            ..CityParams::default()
        }
    }

    #[test]
    fn graph_is_strongly_connected() {
        let city = generate_synthetic_city(&small()).unwrap();
        assert_eq!(city.graph.node_count(), 120);
        let first = city.graph.nodes()[0].id;
        let last = city.graph.nodes()[119].id;
        for (a, b) in [(first, last), (last, first)] {
            dijkstra_shortest_path(&city.graph, city.speeds.as_ref(), a, b, 0.0).unwrap();
        }
        let ids: std::collections::HashSet<u64> = city.graph.edges().iter().map(|e| e.segment_id).collect();
        assert_eq!(ids.len(), city.graph.edge_count());
    }

    #[test]
    fn incidents_ordered_and_in_their_cells() {
        let city = generate_synthetic_city(&small()).unwrap();
        assert_eq!(city.incidents.len(), 600);
        assert_eq!(city.replay().len(), 50);
        for w in city.incidents.windows(2) {
            assert!(w[1].occurred_at >= w[0].occurred_at);
        }
        for inc in &city.incidents {
            assert_eq!(city.grid.grid_of(&inc.location).unwrap(), inc.grid_id);
            assert!(inc.weather.is_some());
        }
    }

    #[test]
    fn single_depot_shared() {
        let city = generate_synthetic_city(&CityParams {
            n_depots: 1,
            responders: Some(4),
            ..small()
        })
        .unwrap();
        assert_eq!(city.depots.len(), 1);
        assert_eq!(city.responders.len(), 4);
        assert!(city.responders.iter().all(|r| r.home_depot == city.depots[0].id));
    }

    #[test]
    fn depots_distinct_cells() {
        let city = generate_synthetic_city(&CityParams { n_depots: 8, ..small() }).unwrap();
        let cells: std::collections::HashSet<_> = city.depots.iter().map(|d| d.grid_id).collect();
        assert_eq!(cells.len(), 8);
    }

    #[test]
    fn rush_hour_slower_than_night() {
        let city = generate_synthetic_city(&small()).unwrap();
        let seg = city.graph.edges()[0].segment_id;
        let monday = time::parse_timestamp("2017-01-09T00:00:00Z").unwrap();
        let night = city.speeds.speed_mph(seg, monday + 3.0 * HOUR).unwrap();
        let rush = city.speeds.speed_mph(seg, monday + 8.0 * HOUR).unwrap();
        assert!(rush < night);
        assert_eq!(night, city.graph.edges()[0].freeflow_mph);
    }

    #[test]
    fn bad_params_rejected() {
        assert!(generate_synthetic_city(&CityParams { n_nodes: 0, ..small() }).is_err());
        assert!(generate_synthetic_city(&CityParams {
            replay_incidents: 600,
            ..small()
        })
        .is_err());
    }

    #[test]
    fn written_scenario_loads_back() {
        let city = generate_synthetic_city(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_city(&city, dir.path()).unwrap();
        let mut config = ScenarioConfig::load(&path, &[]).unwrap();
        config.resolve_inputs(dir.path()).unwrap();
        let scenario = crate::sim::load_scenario(&config).unwrap();
        assert_eq!(scenario.incidents, city.replay());
        assert_eq!(scenario.history, city.history());
        assert_eq!(scenario.grid.len(), city.grid.len());
        assert_eq!(scenario.model, city.model);
        assert_eq!(scenario.responders, city.responders);
    }
}
