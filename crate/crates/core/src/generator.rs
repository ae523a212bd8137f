//! Sampling future incident chains from a fitted survival model.
//!
//! Every cell runs its own exponential clock with mean `exp(βᵀw)` hours. The
//! earliest clock fires, the incident is placed at that cell's centroid, and
//! only the firing cell draws a new clock, with covariates rebuilt at the
//! event time so count features see the new incident.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::domain::{CellId, Grid, Incident, IncidentId, Weather};
use crate::error::Result;
use crate::geo::LatLon;
use crate::seed;
use crate::survival::{build_features, sample_interarrival, FeatureVector, IncidentHistory, SurvivalModel};
use crate::time::{self, HOUR};

/// Weather visible to the feature builder at a given time.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum WeatherSource {
    #[default]
    Unknown,
    Constant(Weather),
    /// Keyed by [`time::day_index`]; days without a record are unknown.
    Daily(HashMap<i64, Weather>),
}

impl WeatherSource {
    pub fn at(&self, t: f64) -> Option<Weather> {
        match self {
            WeatherSource::Unknown => None,
            WeatherSource::Constant(w) => Some(*w),
            WeatherSource::Daily(days) => days.get(&time::day_index(t)).copied(),
        }
    }

    /// First recorded weather of each day in an incident log.
    pub fn from_incidents(incidents: &[Incident]) -> Self {
        let mut days = HashMap::new();
        for inc in incidents {
            if let Some(w) = inc.weather {
                days.entry(time::day_index(inc.occurred_at)).or_insert(w);
            }
        }
        if days.is_empty() {
            WeatherSource::Unknown
        } else {
            WeatherSource::Daily(days)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainIncident {
    pub occurred_at: f64,
    pub grid_id: CellId,
    pub location: LatLon,
    pub features: FeatureVector,
}

impl ChainIncident {
    pub fn to_incident(&self, id: IncidentId, weather: Option<Weather>) -> Incident {
        Incident {
            id,
            grid_id: self.grid_id,
            occurred_at: self.occurred_at,
            location: self.location,
            weather,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IncidentChain {
    pub incidents: Vec<ChainIncident>,
}

impl IncidentChain {
    pub fn len(&self) -> usize {
        self.incidents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.incidents.is_empty()
    }
}

/// Everything a chain depends on besides the seed.
#[derive(Debug, Clone, Copy)]
pub struct ChainGenerator<'a> {
    pub model: &'a SurvivalModel,
    pub grid: &'a Grid,
    /// Past incidents feeding the count features.
    pub history: &'a IncidentHistory,
    pub weather: &'a WeatherSource,
}

fn after(t: f64, floor: f64) -> f64 {
    if t > floor {
        t
    } else {
        // keep timestamps strictly increasing even when a tiny draw is absorbed
        f64::from_bits(floor.to_bits() + 1)
    }
}

impl ChainGenerator<'_> {
    fn features(&self, history: &IncidentHistory, cell: CellId, t: f64) -> FeatureVector {
        build_features(&self.model.schema, history, self.grid, cell, t, self.weather.at(t))
    }

    /// Incidents in `(start, start + horizon_time]`, at most `max_events` of them.
    pub fn generate_chain(
        &self,
        start: f64,
        horizon_time: f64,
        max_events: Option<usize>,
        seed: u64,
    ) -> Result<IncidentChain> {
        let mut chain = IncidentChain::default();
        let limit = max_events.unwrap_or(usize::MAX);
        if horizon_time <= 0.0 || limit == 0 || self.grid.is_empty() {
            return Ok(chain);
        }
        let end = start + horizon_time;
        let mut rng = seed::rng(seed);
        let mut history = self.history.clone();
        let mut clocks = Vec::with_capacity(self.grid.len());
        for cell in self.grid.cells() {
            let w = self.features(&history, cell.id, start);
            let dt = sample_interarrival(self.model, &w, &mut rng)? * HOUR;
            clocks.push(after(start + dt, start));
        }
        let mut last = start;
        while chain.len() < limit {
            let (idx, &t) = clocks
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("grid is not empty");
            if t > end {
                break;
            }
            let t = after(t, last);
            last = t;
            let cell = idx as CellId;
            history.record(cell, t);
            let w = self.features(&history, cell, t);
            let dt = sample_interarrival(self.model, &w, &mut rng)? * HOUR;
            clocks[idx] = after(t + dt, t);
            chain.incidents.push(ChainIncident {
                occurred_at: t,
                grid_id: cell,
                location: self.grid.cell(cell).centroid,
                features: w,
            });
        }
        Ok(chain)
    }

    /// `b` chains; chain 0 uses `seed` itself and chain `i` a sub-seed derived
    /// from it, so `b = 1` matches [`Self::generate_chain`].
    pub fn generate_chains(
        &self,
        b: usize,
        start: f64,
        horizon_time: f64,
        max_events: Option<usize>,
        seed: u64,
    ) -> Result<Vec<IncidentChain>> {
        (0..b)
            .into_par_iter()
            .map(|i| self.generate_chain(start, horizon_time, max_events, chain_seed(seed, i)))
            .collect()
    }
}

pub fn chain_seed(root: u64, index: usize) -> u64 {
    if index == 0 {
        root
    } else {
        seed::derive_index(root, index as u64)
    }
}
