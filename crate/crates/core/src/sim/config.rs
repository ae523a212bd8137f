//! Scenario files: one TOML document naming data files and parameters.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BaseMetric, Scenario};
use crate::domain::{build_grid, load_fleet, Depot, Incident, Responder};
use crate::error::{Error, Result};
use crate::generator::{ChainGenerator, WeatherSource};
use crate::geo::BoundingBox;
use crate::network::{load_graph, load_landmarks, select_landmarks, Router, TravelTimeCache, TravelTimes};
use crate::planner::PlannerConfig;
use crate::seed;
use crate::speed::{load_profiles, SpeedModel, SpeedProfiles};
use crate::survival::io::{load_model, read_incidents};
use crate::survival::IncidentHistory;
use crate::time::{self, CACHE_BIN_MINUTES, HOUR, MINUTE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
    #[serde(default = "default_cell_size")]
    pub cell_size_m: f64,
}

fn default_cell_size() -> f64 {
    1609.344
}

impl RegionConfig {
    pub fn bbox(&self) -> Result<BoundingBox> {
        BoundingBox::new(self.min_lat, self.min_lon, self.max_lat, self.max_lon)
    }
}

/// Data files, relative to the scenario file unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilesConfig {
    pub graph: PathBuf,
    pub model: PathBuf,
    pub fleet: PathBuf,
    /// Incidents to replay. Without it, `[synthetic]` must be present.
    pub incidents: Option<PathBuf>,
    /// Earlier incidents feeding the count features and weather.
    pub history: Option<PathBuf>,
    /// Speed profiles; free-flow speeds when absent.
    pub speeds: Option<PathBuf>,
    /// Precomputed landmarks; selected at load time when absent.
    pub landmarks: Option<PathBuf>,
    /// Travel-time cache to start from.
    pub cache: Option<PathBuf>,
}

/// Incidents sampled from the model instead of read from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticIncidents {
    /// ISO-8601 start time.
    pub start: String,
    pub hours: f64,
    pub max_incidents: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub report_csv: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    /// Use only this many responders from the fleet file; more than the file
    /// holds are added round-robin over its depots.
    pub responders: Option<usize>,
    #[serde(default = "default_service_minutes")]
    pub service_mean_minutes: f64,
    #[serde(default)]
    pub base_policy: BaseMetric,
    #[serde(default = "default_landmarks")]
    pub landmarks_k: usize,
    pub region: RegionConfig,
    pub files: FilesConfig,
    pub synthetic: Option<SyntheticIncidents>,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_service_minutes() -> f64 {
    20.0
}

fn default_landmarks() -> usize {
    16
}

/// `a.b.c` path assignment into a TOML table, creating tables on the way.
fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {part} is not a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(Error::Config(format!("empty override key {key:?}")))
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ScenarioConfig {
    /// Parses `text`, applying `key=value` overrides before type checking.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = text
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| Error::Config(format!("scenario: {e}")))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut value, k.trim(), parse_override_value(v.trim()))?;
        }
        let config: ScenarioConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("scenario: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.responders == Some(0) {
            return Err(Error::Config("responders must be at least 1".into()));
        }
        if !(self.service_mean_minutes > 0.0) {
            return Err(Error::Config("service_mean_minutes must be positive".into()));
        }
        if self.landmarks_k == 0 {
            return Err(Error::Config("landmarks_k must be at least 1".into()));
        }
        if self.files.incidents.is_none() && self.synthetic.is_none() {
            return Err(Error::Config(
                "either files.incidents or [synthetic] is required".into(),
            ));
        }
        self.planner.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Makes every input path absolute against `base` and checks it exists.
    pub fn resolve_inputs(&mut self, base: &Path) -> Result<()> {
        let f = &mut self.files;
        let required = [&mut f.graph, &mut f.model, &mut f.fleet];
        let optional = [
            f.incidents.as_mut(),
            f.history.as_mut(),
            f.speeds.as_mut(),
            f.landmarks.as_mut(),
            f.cache.as_mut(),
        ];
        for p in required.into_iter().chain(optional.into_iter().flatten()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.is_file() {
                return Err(Error::Config(format!("missing file {}", p.display())));
            }
        }
        Ok(())
    }

    /// Makes output paths absolute against `base`.
    pub fn resolve_outputs(&mut self, base: &Path) {
        let o = &mut self.output;
        for p in [&mut o.report_csv, &mut o.report_json, &mut o.trace, &mut o.cache]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Takes `n` responders: the first `n` of the roster, cycling over its depots
/// with fresh ids when `n` exceeds it.
fn pick_responders(depots: &[Depot], roster: Vec<Responder>, n: Option<usize>) -> Vec<Responder> {
    let Some(n) = n else {
        return roster;
    };
    if n <= roster.len() {
        return roster.into_iter().take(n).collect();
    }
    let mut out = roster;
    let mut next_id = out.iter().map(|r| r.id).max().map_or(1, |m| m + 1);
    let mut k = 0;
    while out.len() < n {
        out.push(Responder::idle_at(next_id, &depots[k % depots.len()]));
        next_id += 1;
        k += 1;
    }
    out
}

/// Loads every file a config names. Input paths must already be resolved.
pub fn load_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let files = &config.files;
    let grid = Arc::new(build_grid(config.region.bbox()?, config.region.cell_size_m)?);
    let graph = Arc::new(load_graph(&files.graph)?);
    let speeds: Arc<dyn SpeedModel> = match &files.speeds {
        Some(p) => Arc::new(load_profiles(p, &graph)?),
        None => Arc::new(SpeedProfiles::freeflow(&graph, CACHE_BIN_MINUTES)?),
    };
    let landmarks = match &files.landmarks {
        Some(p) => load_landmarks(p, &graph)?,
        None => select_landmarks(&graph, config.landmarks_k.min(graph.node_count()), config.seed)?,
    };
    let router = Router::new(graph, Arc::new(landmarks), speeds)?;
    let cache = match &files.cache {
        Some(p) => TravelTimeCache::load(p)?,
        None => TravelTimeCache::new(),
    };
    let travel = TravelTimes::with_cache(router, grid.clone(), cache);
    let model = load_model(&files.model)?;
    let (depots, roster) = load_fleet(&files.fleet, &grid)?;
    if roster.is_empty() {
        return Err(Error::Config(format!("{} lists no responders", files.fleet.display())));
    }
    let responders = pick_responders(&depots, roster, config.responders);
    let history = match &files.history {
        Some(p) => read_incidents(p, &grid)?,
        None => Vec::new(),
    };
    let incidents = match (&files.incidents, &config.synthetic) {
        (Some(p), _) => {
            let mut v = read_incidents(p, &grid)?;
            v.sort_by(|a, b| a.occurred_at.total_cmp(&b.occurred_at));
            v
        }
        (None, Some(s)) => {
            let weather = WeatherSource::from_incidents(&history);
            synthetic_incidents(&model, &grid, &history, &weather, s, config.seed)?
        }
        (None, None) => unreachable!("validated"),
    };
    let mut all = history.clone();
    all.extend(incidents.iter().cloned());
    let weather = WeatherSource::from_incidents(&all);
    Ok(Scenario {
        grid,
        depots,
        responders,
        travel,
        model,
        incidents,
        history,
        weather,
        planner: config.planner.clone(),
        service_mean_s: config.service_mean_minutes * MINUTE,
        base_metric: config.base_policy,
        seed: config.seed,
    })
}

fn synthetic_incidents(
    model: &crate::survival::SurvivalModel,
    grid: &crate::domain::Grid,
    history: &[Incident],
    weather: &WeatherSource,
    synthetic: &SyntheticIncidents,
    root: u64,
) -> Result<Vec<Incident>> {
    let start = time::parse_timestamp(&synthetic.start)?;
    let past = IncidentHistory::from_incidents(grid.len(), history);
    let generator = ChainGenerator {
        model,
        grid,
        history: &past,
        weather,
    };
    let chain = generator.generate_chain(
        start,
        synthetic.hours * HOUR,
        synthetic.max_incidents,
        seed::derive(root, "incidents"),
    )?;
    Ok(chain
        .incidents
        .iter()
        .enumerate()
        .map(|(i, c)| c.to_incident(i as u64 + 1, weather.at(c.occurred_at)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[region]
min_lat = 36.0
min_lon = -86.9
max_lat = 36.1
max_lon = -86.8
[files]
graph = "graph.txt"
model = "model.toml"
fleet = "responders.csv"
incidents = "incidents.csv"
[planner]
b = 10
epsilon = 1.5
h_s = 1
gamma = 0.9
"#;

    #[test]
    fn defaults_fill_in() {
        let c = ScenarioConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.service_mean_minutes, 20.0);
        assert_eq!(c.base_policy, BaseMetric::Euclidean);
        assert_eq!(c.planner.h, 4);
        assert_eq!(c.region.cell_size_m, 1609.344);
    }

    #[test]
    fn overrides_are_type_checked() {
        let c = ScenarioConfig::parse(MINIMAL, &["planner.b=20".into(), "seed=9".into()]).unwrap();
        assert_eq!(c.planner.b, 20);
        assert_eq!(c.seed, 9);
        let c = ScenarioConfig::parse(MINIMAL, &["base_policy=travel_time".into()]).unwrap();
        assert_eq!(c.base_policy, BaseMetric::TravelTime);
        assert!(matches!(
            ScenarioConfig::parse(MINIMAL, &["planner.b=lots".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ScenarioConfig::parse(MINIMAL, &["planner.bee=1".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ScenarioConfig::parse(MINIMAL, &["seed".into()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_planner_rejected() {
        assert!(ScenarioConfig::parse(MINIMAL, &["planner.epsilon=0.5".into()]).is_err());
        assert!(ScenarioConfig::parse(MINIMAL, &["responders=0".into()]).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = ScenarioConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(ScenarioConfig::parse(&c.to_toml(), &[]).unwrap(), c);
    }

    #[test]
    fn missing_input_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ScenarioConfig::parse(MINIMAL, &[]).unwrap();
        match c.resolve_inputs(dir.path()) {
            Err(Error::Config(msg)) => assert!(msg.contains("graph.txt"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
