//! Canonical data types shared by every stage.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo;

pub type PingId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointType {
    Whitelisted,
    PersonalArea,
    Other,
}

impl PointType {
    pub const ALL: [PointType; 3] = [PointType::Whitelisted, PointType::PersonalArea, PointType::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            PointType::Whitelisted => "whitelisted",
            PointType::PersonalArea => "personal_area",
            PointType::Other => "other",
        }
    }
}

impl fmt::Display for PointType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PointType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitelisted" => Ok(PointType::Whitelisted),
            "personal_area" => Ok(PointType::PersonalArea),
            "other" => Ok(PointType::Other),
            _ => Err(Error::InvalidInput(format!("unknown point_type {s:?}"))),
        }
    }
}

/// One timestamped GPS observation of a device.
#[derive(Debug, Clone, PartialEq)]
pub struct Ping {
    pub device_id: String,
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub accuracy_m: f64,
    pub point_type: PointType,
    pub geohash8: String,
}

impl Ping {
    pub fn new(
        device_id: impl Into<String>,
        timestamp: i64,
        lat: f64,
        lon: f64,
        accuracy_m: f64,
        point_type: PointType,
    ) -> Result<Self> {
        geo::check_coordinates(lat, lon)?;
        if timestamp <= 0 {
            return Err(Error::InvalidInput(format!("timestamp must be positive, got {timestamp}")));
        }
        if !(accuracy_m >= 0.0) || !accuracy_m.is_finite() {
            return Err(Error::InvalidInput(format!("accuracy_m must be non-negative, got {accuracy_m}")));
        }
        Ok(Ping {
            device_id: device_id.into(),
            timestamp,
            lat,
            lon,
            accuracy_m,
            point_type,
            geohash8: geo::geohash8(lat, lon),
        })
    }

    pub fn position(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }

    /// Ordering used whenever pings of one device are sorted.
    pub fn tie_break_cmp(&self, other: &Ping) -> Ordering {
        self.timestamp
            .cmp(&other.timestamp)
            .then(self.lat.total_cmp(&other.lat))
            .then(self.lon.total_cmp(&other.lon))
            .then(self.accuracy_m.total_cmp(&other.accuracy_m))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub device_id: String,
    pub pings: Vec<Ping>,
}

/// A ping with its stop label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPing {
    pub ping_id: PingId,
    pub ping: Ping,
    pub is_stop: bool,
    pub stop_id: Option<String>,
    /// Only known on synthetic data.
    pub ground_truth_stop_id: Option<String>,
}

impl LabeledPing {
    pub fn new(ping_id: PingId, ping: Ping, stop_id: Option<String>) -> Self {
        LabeledPing {
            ping_id,
            ping,
            is_stop: stop_id.is_some(),
            stop_id,
            ground_truth_stop_id: None,
        }
    }
}

/// A contiguous labeled dwell.
#[derive(Debug, Clone, PartialEq)]
pub struct StopEvent {
    pub stop_id: String,
    pub device_id: String,
    pub start_ts: i64,
    pub end_ts: i64,
    pub centroid_lat: f64,
    pub centroid_lon: f64,
    pub geohash8: String,
    pub member_ping_count: usize,
}

impl StopEvent {
    pub fn centroid(&self) -> (f64, f64) {
        (self.centroid_lat, self.centroid_lon)
    }

    pub fn duration_s(&self) -> i64 {
        self.end_ts - self.start_ts
    }
}

/// Group pings by device and sort each device's pings by the tie-break key.
pub fn group_into_trajectories(pings: Vec<Ping>) -> BTreeMap<String, Trajectory> {
    let mut out: BTreeMap<String, Trajectory> = BTreeMap::new();
    for ping in pings {
        out.entry(ping.device_id.clone())
            .or_insert_with(|| Trajectory { device_id: ping.device_id.clone(), pings: Vec::new() })
            .pings
            .push(ping);
    }
    for traj in out.values_mut() {
        traj.pings.sort_by(Ping::tie_break_cmp);
    }
    out
}

/// Derive one stop event per stop_id from labeled pings (centroid = member mean).
pub fn stops_from_labels(labeled: &[LabeledPing]) -> Vec<StopEvent> {
    struct Acc {
        device_id: String,
        start: i64,
        end: i64,
        lat_sum: f64,
        lon_sum: f64,
        count: usize,
    }
    let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
    for lp in labeled {
        let Some(stop_id) = lp.stop_id.as_deref() else { continue };
        let p = &lp.ping;
        let a = acc.entry(stop_id).or_insert_with(|| Acc {
            device_id: p.device_id.clone(),
            start: p.timestamp,
            end: p.timestamp,
            lat_sum: 0.0,
            lon_sum: 0.0,
            count: 0,
        });
        a.start = a.start.min(p.timestamp);
        a.end = a.end.max(p.timestamp);
        a.lat_sum += p.lat;
        a.lon_sum += p.lon;
        a.count += 1;
    }
    let mut stops: Vec<StopEvent> = acc
        .into_iter()
        .map(|(id, a)| {
            let lat = a.lat_sum / a.count as f64;
            let lon = a.lon_sum / a.count as f64;
            StopEvent {
                stop_id: id.to_string(),
                device_id: a.device_id,
                start_ts: a.start,
                end_ts: a.end,
                centroid_lat: lat,
                centroid_lon: lon,
                geohash8: geo::geohash8(lat, lon),
                member_ping_count: a.count,
            }
        })
        .collect();
    stops.sort_by(|a, b| {
        (a.device_id.as_str(), a.start_ts, a.stop_id.as_str()).cmp(&(b.device_id.as_str(), b.start_ts, b.stop_id.as_str()))
    });
    stops
}
