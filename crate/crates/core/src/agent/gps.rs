use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("route has no waypoints")]
    Empty,
    #[error("waypoint {0}: timestamps must strictly increase")]
    NotIncreasing(usize),
    #[error("waypoint {0}: coordinates out of range")]
    OutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, f64)", into = "(f64, f64, f64)")]
pub struct Waypoint {
    pub time_s: f64,
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl From<(f64, f64, f64)> for Waypoint {
    fn from((time_s, lat_deg, lon_deg): (f64, f64, f64)) -> Self {
        Self {
            time_s,
            lat_deg,
            lon_deg,
        }
    }
}

impl From<Waypoint> for (f64, f64, f64) {
    fn from(w: Waypoint) -> Self {
        (w.time_s, w.lat_deg, w.lon_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpsRoute {
    pub waypoints: Vec<Waypoint>,
}

impl Default for GpsRoute {
    /// Parked at the lab.
    fn default() -> Self {
        Self {
            waypoints: vec![Waypoint::from((0.0, 22.5726, 88.3639))],
        }
    }
}

impl GpsRoute {
    pub fn validate(&self) -> Result<(), RouteError> {
        if self.waypoints.is_empty() {
            return Err(RouteError::Empty);
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !(w.lat_deg.abs() <= 90.0 && w.lon_deg.abs() <= 180.0 && w.time_s.is_finite()) {
                return Err(RouteError::OutOfRange(i));
            }
            if i > 0 && w.time_s <= self.waypoints[i - 1].time_s {
                return Err(RouteError::NotIncreasing(i));
            }
        }
        Ok(())
    }
}

/// Linear interpolation between bracketing waypoints, held at both ends.
pub fn position_at(route: &GpsRoute, time_s: f64) -> Result<(f64, f64), RouteError> {
    let pts = &route.waypoints;
    let (first, last) = match (pts.first(), pts.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(RouteError::Empty),
    };
    if time_s <= first.time_s {
        return Ok((first.lat_deg, first.lon_deg));
    }
    if time_s >= last.time_s {
        return Ok((last.lat_deg, last.lon_deg));
    }
    let i = pts.partition_point(|w| w.time_s <= time_s);
    let (a, b) = (&pts[i - 1], &pts[i]);
    let f = (time_s - a.time_s) / (b.time_s - a.time_s);
    Ok((
        a.lat_deg + f * (b.lat_deg - a.lat_deg),
        a.lon_deg + f * (b.lon_deg - a.lon_deg),
    ))
}
