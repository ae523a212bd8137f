//! Spatial grid, depots, responders and incidents, plus the base dispatch
//! policy (nearest free responder by straight-line distance).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{BoundingBox, LatLon, Projection};

pub type CellId = u32;
pub type ResponderId = u32;
pub type DepotId = u32;
pub type IncidentId = u64;

/// Default cell edge length: one mile.
pub const DEFAULT_CELL_SIZE_M: f64 = 1609.344;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub id: CellId,
    pub centroid: LatLon,
    pub neighbor_ids: Vec<CellId>,
}

/// Axis-aligned tiling of a bounding box into square cells (the last row and
/// column are clipped to the box).
#[derive(Debug, Clone)]
pub struct Grid {
    bbox: BoundingBox,
    cell_size_m: f64,
    rows: usize,
    cols: usize,
    width_m: f64,
    height_m: f64,
    projection: Projection,
    cells: Vec<GridCell>,
}

/// Number of cells of size `cell` needed to cover `extent`, tolerant of
/// rounding in the projection.
fn cells_along(extent: f64, cell: f64) -> usize {
    ((extent / cell) - 1e-9).ceil().max(1.0) as usize
}

/// Index of the cell containing coordinate `v`; points on an interior
/// boundary go to the lower index.
fn index_along(v: f64, cell: f64, n: usize) -> usize {
    let k = (v / cell - 1e-9).ceil() - 1.0;
    (k.max(0.0) as usize).min(n - 1)
}

pub fn build_grid(bbox: BoundingBox, cell_size_m: f64) -> Result<Grid> {
    bbox.validate()?;
    if !(cell_size_m > 0.0) || !cell_size_m.is_finite() {
        return Err(Error::InvalidRegion(format!(
            "cell size {cell_size_m} must be positive"
        )));
    }
    let projection = bbox.projection();
    let (width_m, height_m) = projection.to_xy(&LatLon::new(bbox.max_lat, bbox.max_lon));
    let cols = cells_along(width_m, cell_size_m);
    let rows = cells_along(height_m, cell_size_m);

    let mut cells = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let x0 = c as f64 * cell_size_m;
            let y0 = r as f64 * cell_size_m;
            let x1 = (x0 + cell_size_m).min(width_m);
            let y1 = (y0 + cell_size_m).min(height_m);
            let mut neighbor_ids = Vec::new();
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if (dr, dc) != (0, 0) && nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols {
                        neighbor_ids.push((nr as usize * cols + nc as usize) as CellId);
                    }
                }
            }
            cells.push(GridCell {
                id: (r * cols + c) as CellId,
                centroid: projection.to_latlon(0.5 * (x0 + x1), 0.5 * (y0 + y1)),
                neighbor_ids,
            });
        }
    }
    Ok(Grid {
        bbox,
        cell_size_m,
        rows,
        cols,
        width_m,
        height_m,
        projection,
        cells,
    })
}

impl Grid {
    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Panics if `id` is not a cell of this grid.
    pub fn cell(&self, id: CellId) -> &GridCell {
        &self.cells[id as usize]
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    /// Id of the unique cell containing `p`.
    pub fn grid_of(&self, p: &LatLon) -> Result<CellId> {
        if !self.bbox.contains(p) {
            return Err(Error::OutOfRegion { lat: p.lat, lon: p.lon });
        }
        let (x, y) = self.projection.to_xy(p);
        let c = index_along(x.clamp(0.0, self.width_m), self.cell_size_m, self.cols);
        let r = index_along(y.clamp(0.0, self.height_m), self.cell_size_m, self.rows);
        Ok((r * self.cols + c) as CellId)
    }

    /// Rectangle of a cell in projected meters: (x0, y0, x1, y1).
    pub fn cell_rect(&self, id: CellId) -> (f64, f64, f64, f64) {
        let r = id as usize / self.cols;
        let c = id as usize % self.cols;
        let x0 = c as f64 * self.cell_size_m;
        let y0 = r as f64 * self.cell_size_m;
        (
            x0,
            y0,
            (x0 + self.cell_size_m).min(self.width_m),
            (y0 + self.cell_size_m).min(self.height_m),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Depot {
    pub id: DepotId,
    pub grid_id: CellId,
    pub location: LatLon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponderStatus {
    IdleAtDepot,
    EnRouteToIncident,
    Servicing,
    ReturningToDepot,
}

/// One dispatch cycle: travel to the incident, service, travel home.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub incident_id: IncidentId,
    pub origin: LatLon,
    pub incident_location: LatLon,
    pub dispatched_at: f64,
    pub arrive_at: f64,
    pub service_end: f64,
    pub return_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Responder {
    pub id: ResponderId,
    pub home_depot: DepotId,
    pub depot_location: LatLon,
    pub status: ResponderStatus,
    pub location: LatLon,
    /// Time the current trip ends back at the depot; equals the last update
    /// time while idle.
    pub busy_until: f64,
    pub trip: Option<Trip>,
}

impl Responder {
    pub fn idle_at(id: ResponderId, depot: &Depot) -> Self {
        Responder {
            id,
            home_depot: depot.id,
            depot_location: depot.location,
            status: ResponderStatus::IdleAtDepot,
            location: depot.location,
            busy_until: f64::NEG_INFINITY,
            trip: None,
        }
    }

    /// Free responders may be dispatched: idle ones and those driving home.
    pub fn is_free(&self) -> bool {
        matches!(
            self.status,
            ResponderStatus::IdleAtDepot | ResponderStatus::ReturningToDepot
        )
    }

    /// Time at which this responder next becomes free (`None` if free now).
    pub fn frees_at(&self) -> Option<f64> {
        match (&self.status, &self.trip) {
            (ResponderStatus::EnRouteToIncident | ResponderStatus::Servicing, Some(trip)) => Some(trip.service_end),
            _ => None,
        }
    }

    /// Starts a trip. The responder must be free.
    pub fn dispatch(&mut self, trip: Trip) -> Result<()> {
        if !self.is_free() {
            return Err(Error::InfeasibleAction(format!(
                "responder {} is busy ({:?})",
                self.id, self.status
            )));
        }
        self.status = if trip.arrive_at > trip.dispatched_at {
            ResponderStatus::EnRouteToIncident
        } else {
            ResponderStatus::Servicing
        };
        self.busy_until = trip.return_at;
        self.trip = Some(trip);
        Ok(())
    }

    /// Moves the responder along its trip to time `t`.
    pub fn advance(&mut self, t: f64) {
        let Some(trip) = &self.trip else {
            return;
        };
        if t < trip.arrive_at {
            let span = trip.arrive_at - trip.dispatched_at;
            let f = if span > 0.0 {
                (t - trip.dispatched_at) / span
            } else {
                1.0
            };
            self.status = ResponderStatus::EnRouteToIncident;
            self.location = trip.origin.lerp(&trip.incident_location, f);
        } else if t < trip.service_end {
            self.status = ResponderStatus::Servicing;
            self.location = trip.incident_location;
        } else if t < trip.return_at {
            let span = trip.return_at - trip.service_end;
            self.status = ResponderStatus::ReturningToDepot;
            self.location = trip
                .incident_location
                .lerp(&self.depot_location, (t - trip.service_end) / span);
        } else {
            self.status = ResponderStatus::IdleAtDepot;
            self.location = self.depot_location;
            self.busy_until = trip.return_at;
            self.trip = None;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weather {
    pub temp_c: f64,
    pub rain_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incident {
    pub id: IncidentId,
    pub grid_id: CellId,
    pub occurred_at: f64,
    pub location: LatLon,
    pub weather: Option<Weather>,
}

/// Base policy: the free responder closest to the incident in straight-line
/// distance. Ties go to the lower id.
pub fn nearest_euclidean(responders: &[Responder], incident: &Incident) -> Option<ResponderId> {
    responders
        .iter()
        .filter(|r| r.is_free())
        .map(|r| (r.location.distance_m(&incident.location), r.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

#[derive(Debug, Deserialize)]
struct FleetRow {
    id: ResponderId,
    lat: f64,
    lon: f64,
    depot_id: DepotId,
}

/// Reads a responder roster with header `id,lat,lon,depot_id`; the
/// coordinates are the depot's. Returns depots ordered by id and responders
/// in file order.
pub fn load_fleet(path: &Path, grid: &Grid) -> Result<(Vec<Depot>, Vec<Responder>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut depots: BTreeMap<DepotId, Depot> = BTreeMap::new();
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<FleetRow>().enumerate() {
        let row = row.map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 2)))?;
        let location = LatLon::new(row.lat, row.lon);
        let grid_id = grid.grid_of(&location)?;
        depots.entry(row.depot_id).or_insert(Depot {
            id: row.depot_id,
            grid_id,
            location,
        });
        rows.push(row);
    }
    let responders = rows
        .iter()
        .map(|row| Responder::idle_at(row.id, &depots[&row.depot_id]))
        .collect::<Vec<_>>();
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = responders.iter().find(|r| !seen.insert(r.id)) {
        return Err(Error::Integrity(format!("duplicate responder id {}", dup.id)));
    }
    Ok((depots.into_values().collect(), responders))
}

pub fn write_fleet(path: &Path, depots: &[Depot], responders: &[Responder]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let write = |w: &mut csv::Writer<std::fs::File>| -> std::result::Result<(), csv::Error> {
        w.write_record(["id", "lat", "lon", "depot_id"])?;
        for r in responders {
            let depot = depots.iter().find(|d| d.id == r.home_depot).expect("responder depot");
            w.write_record([
                r.id.to_string(),
                depot.location.lat.to_string(),
                depot.location.lon.to_string(),
                depot.id.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(|e| Error::Format(e.to_string()))
}
