//! Planar and spherical geometry over lat/lon points.
//!
//! Polygon tests treat longitude as x and latitude as y. Points on an edge or a
//! vertex count as inside.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GeoPoint, Polygon};

/// Sphere radius used for great-circle distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("bounding box is degenerate or out of range")]
    InvalidBBox,
    #[error("polygon ring must have at least 3 vertices and be closed")]
    InvalidPolygon,
}

/// Great-circle distance in meters.
pub fn haversine_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat_deg.to_radians(), b.lat_deg.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon_deg - a.lon_deg).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Closed axis-aligned box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<Self, GeoError> {
        let b = BBox { min_lon, min_lat, max_lon, max_lat };
        let finite = [min_lon, min_lat, max_lon, max_lat].iter().all(|v| v.is_finite());
        if !finite || min_lon >= max_lon || min_lat >= max_lat {
            return Err(GeoError::InvalidBBox);
        }
        Ok(b)
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat_deg) && (self.min_lon..=self.max_lon).contains(&p.lon_deg)
    }

    /// Parses `min_lon,min_lat,max_lon,max_lat`.
    pub fn parse(s: &str) -> Result<Self, GeoError> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| GeoError::InvalidBBox)?;
        match v.as_slice() {
            &[a, b, c, d] => BBox::new(a, b, c, d),
            _ => Err(GeoError::InvalidBBox),
        }
    }
}

/// An area of interest: a box or a drawn polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    BBox(BBox),
    Polygon(Polygon),
}

impl Region {
    pub fn contains(&self, p: &GeoPoint) -> bool {
        match self {
            Region::BBox(b) => b.contains(p),
            Region::Polygon(poly) => point_in_polygon(p, poly),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Region::BBox(b) => format!("bbox:{},{},{},{}", b.min_lon, b.min_lat, b.max_lon, b.max_lat),
            Region::Polygon(p) => format!("polygon:{} vertices", p.ring().len() - 1),
        }
    }
}

/// Parses a ring written as `lon,lat;lon,lat;...` (closing vertex optional).
pub fn parse_ring(s: &str) -> Result<Polygon, GeoError> {
    let coords = s
        .split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|pair| {
            let (lon, lat) = pair.split_once(',').ok_or(GeoError::InvalidPolygon)?;
            let lon = lon.trim().parse::<f64>().map_err(|_| GeoError::InvalidPolygon)?;
            let lat = lat.trim().parse::<f64>().map_err(|_| GeoError::InvalidPolygon)?;
            Ok((lon, lat))
        })
        .collect::<Result<Vec<_>, GeoError>>()?;
    Polygon::from_lon_lat(&coords).map_err(|_| GeoError::InvalidPolygon)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    cross(a, b, p).abs() <= EPS
        && p.0 >= a.0.min(b.0) - EPS
        && p.0 <= a.0.max(b.0) + EPS
        && p.1 >= a.1.min(b.1) - EPS
        && p.1 <= a.1.max(b.1) + EPS
}

/// Even-odd rule, boundary inclusive.
pub fn point_in_polygon(p: &GeoPoint, poly: &Polygon) -> bool {
    let pt = (p.lon_deg, p.lat_deg);
    let mut inside = false;
    for (a, b) in poly.edges() {
        if on_segment(pt, a, b) {
            return true;
        }
        if (a.1 > pt.1) != (b.1 > pt.1) {
            let x = a.0 + (pt.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if pt.0 < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Closed segment intersection, including touching and collinear overlap.
pub fn segments_intersect(a1: (f64, f64), a2: (f64, f64), b1: (f64, f64), b2: (f64, f64)) -> bool {
    let d1 = cross(b1, b2, a1);
    let d2 = cross(b1, b2, a2);
    let d3 = cross(a1, a2, b1);
    let d4 = cross(a1, a2, b2);
    if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS)) && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS)) {
        return true;
    }
    on_segment(a1, b1, b2) || on_segment(a2, b1, b2) || on_segment(b1, a1, a2) || on_segment(b2, a1, a2)
}

/// Two polygons intersect when a vertex of one lies inside the other or any pair of edges meets.
pub fn polygons_intersect(p: &Polygon, q: &Polygon) -> bool {
    p.ring().iter().any(|v| point_in_polygon(v, q))
        || q.ring().iter().any(|v| point_in_polygon(v, p))
        || p.edges().any(|(a1, a2)| q.edges().any(|(b1, b2)| segments_intersect(a1, a2, b1, b2)))
}
