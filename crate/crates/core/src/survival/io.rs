//! Model files and incident/observation tables.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSchema, FeatureVector, Observation, SurvivalDataset, SurvivalModel};
use crate::domain::{Grid, Incident, Weather};
use crate::error::{Error, Result};
use crate::geo::LatLon;
use crate::time::{format_timestamp, parse_timestamp};

pub const MODEL_FORMAT: &str = "rtdispatch.survival-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    time_unit: String,
    coefficient: Vec<Coefficient>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Coefficient {
    name: String,
    beta: f64,
}

pub fn model_to_string(model: &SurvivalModel) -> String {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        time_unit: "hours".into(),
        coefficient: model
            .schema
            .names()
            .into_iter()
            .zip(&model.beta)
            .map(|(name, beta)| Coefficient { name, beta: *beta })
            .collect(),
    };
    toml::to_string(&file).expect("model serializes")
}

pub fn model_from_str(s: &str) -> Result<SurvivalModel> {
    let file: ModelFile = toml::from_str(s).map_err(|e| Error::Format(format!("model file: {e}")))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Format(format!("unexpected model format {:?}", file.format)));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {}", file.version)));
    }
    if file.time_unit != "hours" {
        return Err(Error::Format(format!("unsupported time unit {:?}", file.time_unit)));
    }
    let names: Vec<&str> = file.coefficient.iter().map(|c| c.name.as_str()).collect();
    let schema = FeatureSchema::from_names(&names)?;
    SurvivalModel::new(schema, file.coefficient.iter().map(|c| c.beta).collect())
}

pub fn save_model(path: &Path, model: &SurvivalModel) -> Result<()> {
    fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SurvivalModel> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&s)
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<(usize, csv::StringRecord)>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok((header, rows))
}

/// True if the table's header names an incident log rather than
/// precomputed observations.
pub fn is_incident_table(path: &Path) -> Result<bool> {
    let (header, _) = read_table_header(path)?;
    Ok(header.iter().any(|h| h == "timestamp"))
}

fn read_table_header(path: &Path) -> Result<(Vec<String>, ())> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    Ok((header, ()))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Format(format!("{}: missing column {name:?}", path.display())))
}

/// Reads an incident log with columns
/// `id,timestamp,lat,lon[,temp_c,rain_mm]`, sorted by time.
pub fn read_incidents(path: &Path, grid: &Grid) -> Result<Vec<Incident>> {
    let (header, rows) = read_table(path)?;
    let c_id = column(&header, "id", path)?;
    let c_ts = column(&header, "timestamp", path)?;
    let c_lat = column(&header, "lat", path)?;
    let c_lon = column(&header, "lon", path)?;
    let c_temp = header.iter().position(|h| h == "temp_c");
    let c_rain = header.iter().position(|h| h == "rain_mm");

    let mut incidents = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let at = |e: Error| {
            let msg = match e {
                Error::Format(m) => m,
                other => other.to_string(),
            };
            Error::Format(format!("{} line {line}: {msg}", path.display()))
        };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize, what: &str| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| at(Error::Format(format!("bad {what} {:?}", field(i)))))
        };
        let opt = |c: Option<usize>, what: &str| -> Result<Option<f64>> {
            match c.map(field) {
                None | Some("") => Ok(None),
                Some(_) => num(c.unwrap(), what).map(Some),
            }
        };
        let id: u64 = field(c_id)
            .parse()
            .map_err(|_| at(Error::Format(format!("bad id {:?}", field(c_id)))))?;
        let occurred_at = parse_timestamp(field(c_ts)).map_err(at)?;
        let location = LatLon::new(num(c_lat, "lat")?, num(c_lon, "lon")?);
        let grid_id = grid.grid_of(&location).map_err(at)?;
        let weather = match (opt(c_temp, "temp_c")?, opt(c_rain, "rain_mm")?) {
            (Some(temp_c), Some(rain_mm)) => Some(Weather { temp_c, rain_mm }),
            (Some(temp_c), None) => Some(Weather { temp_c, rain_mm: 0.0 }),
            (None, Some(rain_mm)) => Some(Weather { temp_c: 0.0, rain_mm }),
            (None, None) => None,
        };
        incidents.push(Incident {
            id,
            grid_id,
            occurred_at,
            location,
            weather,
        });
    }
    incidents.sort_by(|a, b| a.occurred_at.total_cmp(&b.occurred_at).then(a.id.cmp(&b.id)));
    Ok(incidents)
}

pub fn write_incidents(path: &Path, incidents: &[Incident]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut run = || -> std::result::Result<(), csv::Error> {
        w.write_record(["id", "timestamp", "lat", "lon", "temp_c", "rain_mm"])?;
        for inc in incidents {
            let (temp, rain) = inc.weather.map_or((String::new(), String::new()), |w| {
                (format!("{:.1}", w.temp_c), format!("{:.1}", w.rain_mm))
            });
            w.write_record([
                inc.id.to_string(),
                format_timestamp(inc.occurred_at),
                format!("{:.6}", inc.location.lat),
                format!("{:.6}", inc.location.lon),
                temp,
                rain,
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    run().map_err(|e| Error::Format(e.to_string()))
}

/// Reads precomputed observations: header `tau_hours,<feature names…>`.
/// Returns the feature names alongside the dataset.
pub fn read_observations(path: &Path) -> Result<(Vec<String>, SurvivalDataset)> {
    let (header, rows) = read_table(path)?;
    if header.first().map(String::as_str) != Some("tau_hours") {
        return Err(Error::Format(format!(
            "{}: first column must be tau_hours",
            path.display()
        )));
    }
    let names = header[1..].to_vec();
    let mut observations = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let values = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("{} line {line}: {e}", path.display())))?;
        if values.len() != header.len() {
            return Err(Error::Format(format!(
                "{} line {line}: wrong field count",
                path.display()
            )));
        }
        observations.push(Observation {
            tau_hours: values[0],
            w: FeatureVector::new(values[1..].to_vec()),
        });
    }
    Ok((names, SurvivalDataset::new(observations)?))
}

pub fn write_observations(path: &Path, names: &[String], data: &SurvivalDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut run = || -> std::result::Result<(), csv::Error> {
        let mut header = vec!["tau_hours".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for o in &data.observations {
            let mut row = vec![o.tau_hours.to_string()];
            row.extend(o.w.values.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    };
    run().map_err(|e| Error::Format(e.to_string()))
}

/// Loads a dataset for `model_schema` from either an incident log or an
/// observation table. Observation tables must name exactly the schema's
/// features, in order.
pub fn load_dataset(path: &Path, grid: &Grid, schema: &FeatureSchema) -> Result<SurvivalDataset> {
    if is_incident_table(path)? {
        let incidents = read_incidents(path, grid)?;
        Ok(SurvivalDataset::from_incidents(&incidents, grid, schema))
    } else {
        let (names, data) = read_observations(path)?;
        if names != schema.names() {
            return Err(Error::Schema(format!(
                "table has {} features {:?}, model expects {} features",
                names.len(),
                names,
                schema.len()
            )));
        }
        Ok(data)
    }
}
