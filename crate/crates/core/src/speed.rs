//! Per-segment speed prediction.
//!
//! The baseline predictor is a weekly table of historical mean speeds. Any
//! other predictor can be exported into the same profile file format and
//! loaded in its place.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{RoadGraph, SegmentId};
use crate::time::{self, MINUTES_PER_WEEK};

pub const DEFAULT_BIN_MINUTES: u32 = 30;
pub const MAX_SPEED_MPH: f64 = 120.0;

/// Anything that can predict a segment's speed at a given time.
pub trait SpeedModel: Send + Sync {
    fn speed_mph(&self, segment: SegmentId, t: f64) -> Result<f64>;

    /// Upper bound of `speed_mph` over all times.
    fn max_speed_mph(&self, segment: SegmentId) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedObservation {
    pub segment_id: SegmentId,
    pub timestamp: f64,
    pub speed_mph: f64,
}

impl SpeedObservation {
    pub fn new(segment_id: SegmentId, timestamp: f64, speed_mph: f64) -> Result<Self> {
        if !(speed_mph > 0.0 && speed_mph <= MAX_SPEED_MPH) {
            return Err(Error::Format(format!(
                "speed {speed_mph} mph outside (0, {MAX_SPEED_MPH}]"
            )));
        }
        Ok(SpeedObservation {
            segment_id,
            timestamp,
            speed_mph,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSpeedProfile {
    pub segment_id: SegmentId,
    pub bin_width: u32,
    pub speeds: Vec<f64>,
    pub fallback: f64,
}

impl SegmentSpeedProfile {
    fn max(&self) -> f64 {
        self.speeds.iter().copied().fold(self.fallback.min(0.0), f64::max)
    }
}

/// Weekly speed tables for every segment of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfiles {
    bin_width: u32,
    profiles: HashMap<SegmentId, SegmentSpeedProfile>,
}

fn check_bin_width(bin_width: u32) -> Result<usize> {
    if bin_width == 0 || !MINUTES_PER_WEEK.is_multiple_of(bin_width) {
        return Err(Error::Config(format!(
            "bin width {bin_width} min does not divide a week"
        )));
    }
    Ok((MINUTES_PER_WEEK / bin_width) as usize)
}

impl SpeedProfiles {
    /// Every bin at the segment's free-flow speed.
    pub fn freeflow(graph: &RoadGraph, bin_width: u32) -> Result<Self> {
        let bins = check_bin_width(bin_width)?;
        let profiles = graph
            .segments()
            .map(|(id, ff)| {
                (
                    id,
                    SegmentSpeedProfile {
                        segment_id: id,
                        bin_width,
                        speeds: vec![ff; bins],
                        fallback: ff,
                    },
                )
            })
            .collect();
        Ok(SpeedProfiles { bin_width, profiles })
    }

    /// Builds profiles from a function of (segment, free-flow speed, bin start
    /// offset in seconds from Monday 00:00).
    pub fn from_fn(graph: &RoadGraph, bin_width: u32, mut f: impl FnMut(SegmentId, f64, f64) -> f64) -> Result<Self> {
        let mut p = SpeedProfiles::freeflow(graph, bin_width)?;
        let width = f64::from(bin_width) * time::MINUTE;
        for prof in p.profiles.values_mut() {
            for (b, s) in prof.speeds.iter_mut().enumerate() {
                let v = f(prof.segment_id, prof.fallback, b as f64 * width);
                if !(v > 0.0) {
                    return Err(Error::Format(format!(
                        "non-positive speed {v} for segment {}",
                        prof.segment_id
                    )));
                }
                *s = v;
            }
        }
        Ok(p)
    }

    pub fn bin_width(&self) -> u32 {
        self.bin_width
    }

    pub fn profile(&self, segment: SegmentId) -> Option<&SegmentSpeedProfile> {
        self.profiles.get(&segment)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

impl SpeedModel for SpeedProfiles {
    fn speed_mph(&self, segment: SegmentId, t: f64) -> Result<f64> {
        let p = self.profiles.get(&segment).ok_or(Error::UnknownSegment(segment))?;
        Ok(p.speeds[time::weekly_bin(t, self.bin_width)])
    }

    fn max_speed_mph(&self, segment: SegmentId) -> Result<f64> {
        self.profiles
            .get(&segment)
            .map(SegmentSpeedProfile::max)
            .ok_or(Error::UnknownSegment(segment))
    }
}

/// Per-bin arithmetic means; empty bins fall back to free-flow speed.
pub fn fit_profiles(observations: &[SpeedObservation], graph: &RoadGraph, bin_width: u32) -> Result<SpeedProfiles> {
    let bins = check_bin_width(bin_width)?;
    let freeflow: HashMap<SegmentId, f64> = graph.segments().collect();
    let mut acc: HashMap<SegmentId, Vec<(f64, u32)>> = HashMap::new();
    for obs in observations {
        if !freeflow.contains_key(&obs.segment_id) {
            return Err(Error::UnknownSegment(obs.segment_id));
        }
        let cell = &mut acc.entry(obs.segment_id).or_insert_with(|| vec![(0.0, 0); bins])
            [time::weekly_bin(obs.timestamp, bin_width)];
        cell.0 += obs.speed_mph;
        cell.1 += 1;
    }
    let profiles = freeflow
        .into_iter()
        .map(|(id, ff)| {
            let speeds = match acc.get(&id) {
                Some(bins) => bins
                    .iter()
                    .map(|&(s, n)| if n > 0 { s / f64::from(n) } else { ff })
                    .collect(),
                None => vec![ff; bins],
            };
            (
                id,
                SegmentSpeedProfile {
                    segment_id: id,
                    bin_width,
                    speeds,
                    fallback: ff,
                },
            )
        })
        .collect();
    Ok(SpeedProfiles { bin_width, profiles })
}

pub fn predict_speed(model: &dyn SpeedModel, segment: SegmentId, t: f64) -> Result<f64> {
    model.speed_mph(segment, t)
}

/// Mean absolute error in mph over held-out observations.
pub fn evaluate_mae(model: &dyn SpeedModel, heldout: &[SpeedObservation]) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::NoObservations);
    }
    let mut total = 0.0;
    for o in heldout {
        total += (model.speed_mph(o.segment_id, o.timestamp)? - o.speed_mph).abs();
    }
    Ok(total / heldout.len() as f64)
}

/// Reads `segment_id,timestamp,speed_mph`.
pub fn read_speed_observations(path: &Path) -> Result<Vec<SpeedObservation>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let at = |msg: String| Error::Format(format!("{} line {line}: {msg}", path.display()));
        if rec.len() != 3 {
            return Err(at("expected segment_id,timestamp,speed_mph".into()));
        }
        let segment_id = rec[0]
            .parse()
            .map_err(|_| at(format!("bad segment id {:?}", &rec[0])))?;
        let timestamp = time::parse_timestamp(&rec[1]).map_err(|e| at(e.to_string()))?;
        let speed: f64 = rec[2].parse().map_err(|_| at(format!("bad speed {:?}", &rec[2])))?;
        out.push(SpeedObservation::new(segment_id, timestamp, speed).map_err(|e| at(e.to_string()))?);
    }
    Ok(out)
}

const BIN_WIDTH_PREFIX: &str = "# bin_width_minutes=";

/// Writes `(segment_id, bin_index, speed_mph)` triples, sorted, after a
/// comment line carrying the bin width.
pub fn save_profiles(path: &Path, profiles: &SpeedProfiles) -> Result<()> {
    let mut out = format!(
        "{BIN_WIDTH_PREFIX}{}\nsegment_id,bin_index,speed_mph\n",
        profiles.bin_width
    );
    let sorted: BTreeMap<_, _> = profiles.profiles.iter().collect();
    for (id, p) in sorted {
        for (b, s) in p.speeds.iter().enumerate() {
            out.push_str(&format!("{id},{b},{s}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads a profile table. Segments or bins missing from the file predict the
/// graph's free-flow speed.
pub fn load_profiles(path: &Path, graph: &RoadGraph) -> Result<SpeedProfiles> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut bin_width = DEFAULT_BIN_MINUTES;
    let mut profiles: Option<SpeedProfiles> = None;
    let fmt = |line: usize, msg: String| Error::Format(format!("{} line {}: {msg}", path.display(), line + 1));
    while let Some((i, line)) = lines.next() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(w) = line.strip_prefix(BIN_WIDTH_PREFIX) {
            bin_width = w.trim().parse().map_err(|_| fmt(i, format!("bad bin width {w:?}")))?;
            continue;
        }
        if line.starts_with('#') || line.starts_with("segment_id") {
            continue;
        }
        let p = match profiles.as_mut() {
            Some(p) => p,
            None => profiles.insert(SpeedProfiles::freeflow(graph, bin_width)?),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(fmt(i, "expected segment_id,bin_index,speed_mph".into()));
        }
        let seg: SegmentId = fields[0]
            .parse()
            .map_err(|_| fmt(i, format!("bad segment {:?}", fields[0])))?;
        let bin: usize = fields[1]
            .parse()
            .map_err(|_| fmt(i, format!("bad bin {:?}", fields[1])))?;
        let speed: f64 = fields[2]
            .parse()
            .map_err(|_| fmt(i, format!("bad speed {:?}", fields[2])))?;
        if !(speed > 0.0) || !speed.is_finite() {
            return Err(fmt(i, format!("speed {speed} must be positive")));
        }
        let prof = p.profiles.get_mut(&seg).ok_or(Error::UnknownSegment(seg))?;
        let slot = prof
            .speeds
            .get_mut(bin)
            .ok_or_else(|| fmt(i, format!("bin {bin} out of range")))?;
        *slot = speed;
    }
    match profiles {
        Some(p) => Ok(p),
        None => SpeedProfiles::freeflow(graph, bin_width),
    }
}
