//! Covariates for the inter-arrival model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{CellId, Grid, Incident, Weather};
use crate::error::{Error, Result};
use crate::time::{self, DAY};

/// Trailing window for past-incident counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CountWindow {
    TwoDays,
    Week,
    Month,
}

impl CountWindow {
    pub const ALL: [CountWindow; 3] = [CountWindow::TwoDays, CountWindow::Week, CountWindow::Month];

    pub fn seconds(self) -> f64 {
        match self {
            CountWindow::TwoDays => 2.0 * DAY,
            CountWindow::Week => 7.0 * DAY,
            CountWindow::Month => 30.0 * DAY,
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            CountWindow::TwoDays => "2d",
            CountWindow::Week => "7d",
            CountWindow::Month => "30d",
        }
    }
}

const SEASONS: [&str; 4] = ["winter", "spring", "summer", "fall"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// One-hot over six four-hour bins starting at midnight.
    TimeOfDay(u8),
    Weekend,
    Season(u8),
    Temperature,
    Rainfall,
    CellCount(CountWindow),
    /// Counts summed over the cell's neighbors.
    NeighborCount(CountWindow),
    Intercept,
    /// Indicator for one specific cell.
    Cell(CellId),
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::TimeOfDay(k) => write!(f, "tod_{k}"),
            FeatureKind::Weekend => f.write_str("weekend"),
            FeatureKind::Season(k) => write!(f, "season_{}", SEASONS[*k as usize]),
            FeatureKind::Temperature => f.write_str("temp_mean_c"),
            FeatureKind::Rainfall => f.write_str("rain_mm"),
            FeatureKind::CellCount(w) => write!(f, "cell_count_{}", w.suffix()),
            FeatureKind::NeighborCount(w) => write!(f, "neighbor_count_{}", w.suffix()),
            FeatureKind::Intercept => f.write_str("intercept"),
            FeatureKind::Cell(id) => write!(f, "cell_{id}"),
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Schema(format!("unknown feature name {s:?}"));
        let window = |suffix: &str| {
            CountWindow::ALL
                .into_iter()
                .find(|w| w.suffix() == suffix)
                .ok_or_else(bad)
        };
        Ok(match s {
            "weekend" => FeatureKind::Weekend,
            "temp_mean_c" => FeatureKind::Temperature,
            "rain_mm" => FeatureKind::Rainfall,
            "intercept" => FeatureKind::Intercept,
            _ => {
                if let Some(k) = s.strip_prefix("tod_") {
                    let k: u8 = k.parse().map_err(|_| bad())?;
                    if k >= 6 {
                        return Err(bad());
                    }
                    FeatureKind::TimeOfDay(k)
                } else if let Some(name) = s.strip_prefix("season_") {
                    let k = SEASONS.iter().position(|n| *n == name).ok_or_else(bad)?;
                    FeatureKind::Season(k as u8)
                } else if let Some(w) = s.strip_prefix("cell_count_") {
                    FeatureKind::CellCount(window(w)?)
                } else if let Some(w) = s.strip_prefix("neighbor_count_") {
                    FeatureKind::NeighborCount(window(w)?)
                } else if let Some(id) = s.strip_prefix("cell_") {
                    FeatureKind::Cell(id.parse().map_err(|_| bad())?)
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

/// Ordered list of covariates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    kinds: Vec<FeatureKind>,
}

impl FeatureSchema {
    pub fn new(kinds: Vec<FeatureKind>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = kinds.iter().find(|k| !seen.insert(**k)) {
            return Err(Error::Schema(format!("duplicate feature {dup}")));
        }
        Ok(FeatureSchema { kinds })
    }

    /// The full covariate set: time of day, weekend, season, weather,
    /// past-incident counts for the cell and its neighbors, intercept.
    pub fn standard() -> Self {
        let mut kinds: Vec<FeatureKind> = (0..6).map(FeatureKind::TimeOfDay).collect();
        kinds.push(FeatureKind::Weekend);
        kinds.extend((0..4).map(FeatureKind::Season));
        kinds.push(FeatureKind::Temperature);
        kinds.push(FeatureKind::Rainfall);
        kinds.extend(CountWindow::ALL.map(FeatureKind::CellCount));
        kinds.extend(CountWindow::ALL.map(FeatureKind::NeighborCount));
        kinds.push(FeatureKind::Intercept);
        FeatureSchema { kinds }
    }

    pub fn intercept_only() -> Self {
        FeatureSchema {
            kinds: vec![FeatureKind::Intercept],
        }
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let kinds = names.iter().map(|n| n.as_ref().parse()).collect::<Result<Vec<_>>>()?;
        FeatureSchema::new(kinds)
    }

    pub fn names(&self) -> Vec<String> {
        self.kinds.iter().map(ToString::to_string).collect()
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn position(&self, kind: FeatureKind) -> Option<usize> {
        self.kinds.iter().position(|k| *k == kind)
    }

    pub fn uses_counts(&self) -> bool {
        self.kinds
            .iter()
            .any(|k| matches!(k, FeatureKind::CellCount(_) | FeatureKind::NeighborCount(_)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Weather was unavailable and zeros were substituted.
    pub weather_imputed: bool,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector {
            values,
            weather_imputed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, beta: &[f64]) -> f64 {
        self.values.iter().zip(beta).map(|(w, b)| w * b).sum()
    }
}

/// Per-cell occurrence times, kept sorted so window counts are two binary
/// searches.
#[derive(Debug, Clone, Default)]
pub struct IncidentHistory {
    by_cell: Vec<Vec<f64>>,
}

impl IncidentHistory {
    pub fn new(n_cells: usize) -> Self {
        IncidentHistory {
            by_cell: vec![Vec::new(); n_cells],
        }
    }

    pub fn from_incidents(n_cells: usize, incidents: &[Incident]) -> Self {
        let mut h = IncidentHistory::new(n_cells);
        for inc in incidents {
            h.record(inc.grid_id, inc.occurred_at);
        }
        h
    }

    pub fn record(&mut self, cell: CellId, t: f64) {
        let times = &mut self.by_cell[cell as usize];
        let at = times.partition_point(|x| *x <= t);
        times.insert(at, t);
    }

    /// Number of incidents in `cell` with occurrence time in `(t - window, t]`.
    pub fn count(&self, cell: CellId, t: f64, window: f64) -> usize {
        let times = &self.by_cell[cell as usize];
        let hi = times.partition_point(|x| *x <= t);
        let lo = times.partition_point(|x| *x <= t - window);
        hi - lo
    }

    /// Keeps only incidents newer than `t - window` (inclusive of boundary).
    pub fn prune_before(&mut self, t: f64) {
        for times in &mut self.by_cell {
            let cut = times.partition_point(|x| *x <= t);
            times.drain(..cut);
        }
    }

    pub fn len(&self) -> usize {
        self.by_cell.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Covariates for `cell` at `time`. History counts include incidents at
/// exactly `time`.
pub fn build_features(
    schema: &FeatureSchema,
    history: &IncidentHistory,
    grid: &Grid,
    cell: CellId,
    time: f64,
    weather: Option<Weather>,
) -> FeatureVector {
    let tod = time::time_of_day_bin(time) as u8;
    let season = time::season(time) as u8;
    let indicator = |on: bool| if on { 1.0 } else { 0.0 };
    let neighbor_count = |w: CountWindow| -> f64 {
        grid.cell(cell)
            .neighbor_ids
            .iter()
            .map(|n| history.count(*n, time, w.seconds()))
            .sum::<usize>() as f64
    };
    let values = schema
        .kinds()
        .iter()
        .map(|kind| match kind {
            FeatureKind::TimeOfDay(k) => indicator(*k == tod),
            FeatureKind::Weekend => indicator(time::is_weekend(time)),
            FeatureKind::Season(k) => indicator(*k == season),
            FeatureKind::Temperature => weather.map_or(0.0, |w| w.temp_c),
            FeatureKind::Rainfall => weather.map_or(0.0, |w| w.rain_mm),
            FeatureKind::CellCount(w) => history.count(cell, time, w.seconds()) as f64,
            FeatureKind::NeighborCount(w) => neighbor_count(*w),
            FeatureKind::Intercept => 1.0,
            FeatureKind::Cell(id) => indicator(*id == cell),
        })
        .collect();
    let uses_weather = schema
        .kinds()
        .iter()
        .any(|k| matches!(k, FeatureKind::Temperature | FeatureKind::Rainfall));
    FeatureVector {
        values,
        weather_imputed: uses_weather && weather.is_none(),
    }
}
