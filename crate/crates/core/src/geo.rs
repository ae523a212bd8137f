//! Planar approximations for city-scale geometry.
//!
//! Everything here uses the equirectangular projection. At the scale of a
//! metropolitan region the distortion is well under a percent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
pub const METERS_PER_SECOND_PER_MPH: f64 = 0.44704;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    /// Straight-line distance in meters.
    pub fn distance_m(&self, other: &LatLon) -> f64 {
        let mean_lat = 0.5 * (self.lat + other.lat);
        let dx = (other.lon - self.lon).to_radians() * mean_lat.to_radians().cos();
        let dy = (other.lat - self.lat).to_radians();
        EARTH_RADIUS_M * dx.hypot(dy)
    }

    /// Point a fraction `f` of the way from `self` to `other`.
    pub fn lerp(&self, other: &LatLon, f: f64) -> LatLon {
        let f = f.clamp(0.0, 1.0);
        LatLon {
            lat: self.lat + (other.lat - self.lat) * f,
            lon: self.lon + (other.lon - self.lon) * f,
        }
    }
}

/// Axis-aligned latitude/longitude rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self> {
        let bbox = BoundingBox {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        };
        bbox.validate()?;
        Ok(bbox)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.min_lat, self.min_lon, self.max_lat, self.max_lon]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.max_lat <= self.min_lat || self.max_lon <= self.min_lon {
            return Err(Error::InvalidRegion(format!("degenerate bounding box {:?}", self)));
        }
        if self.min_lat < -90.0 || self.max_lat > 90.0 {
            return Err(Error::InvalidRegion("latitude out of range".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &LatLon) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }

    pub fn projection(&self) -> Projection {
        Projection {
            origin: LatLon::new(self.min_lat, self.min_lon),
            cos_ref: (0.5 * (self.min_lat + self.max_lat)).to_radians().cos(),
        }
    }

    /// A box of `width_m` by `height_m` meters whose south-west corner is `sw`.
    pub fn from_extent(sw: LatLon, width_m: f64, height_m: f64) -> Result<Self> {
        let dlat = (height_m / EARTH_RADIUS_M).to_degrees();
        let mid = sw.lat + 0.5 * dlat;
        let dlon = (width_m / (EARTH_RADIUS_M * mid.to_radians().cos())).to_degrees();
        BoundingBox::new(sw.lat, sw.lon, sw.lat + dlat, sw.lon + dlon)
    }
}

/// Equirectangular projection anchored at a bounding box's south-west corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    origin: LatLon,
    cos_ref: f64,
}

impl Projection {
    /// Meters east and north of the origin.
    pub fn to_xy(&self, p: &LatLon) -> (f64, f64) {
        let x = (p.lon - self.origin.lon).to_radians() * self.cos_ref * EARTH_RADIUS_M;
        let y = (p.lat - self.origin.lat).to_radians() * EARTH_RADIUS_M;
        (x, y)
    }

    pub fn to_latlon(&self, x: f64, y: f64) -> LatLon {
        LatLon {
            lat: self.origin.lat + (y / EARTH_RADIUS_M).to_degrees(),
            lon: self.origin.lon + (x / (EARTH_RADIUS_M * self.cos_ref)).to_degrees(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_degree_of_latitude() {
        let a = LatLon::new(36.0, -86.0);
        let b = LatLon::new(37.0, -86.0);
        let expected = EARTH_RADIUS_M * 1f64.to_radians();
        assert!((a.distance_m(&b) - expected).abs() < 1e-6);
    }

    #[test]
    fn projection_round_trips() {
        let bbox = BoundingBox::new(36.0, -87.0, 36.3, -86.6).unwrap();
        let proj = bbox.projection();
        let p = LatLon::new(36.17, -86.81);
        let (x, y) = proj.to_xy(&p);
        let q = proj.to_latlon(x, y);
        assert!((p.lat - q.lat).abs() < 1e-12 && (p.lon - q.lon).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(matches!(
            BoundingBox::new(36.0, -86.0, 36.0, -85.0),
            Err(Error::InvalidRegion(_))
        ));
    }
}
