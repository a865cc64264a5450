//! Sequence-oriented, density-dependent stop labeler.
//!
//! A greedy forward scan grows a candidate from ping `i` while every member
//! stays within `roam_radius_m` of the running centroid and consecutive pings
//! are at most `max_ping_gap_s` apart. Candidates spanning at least
//! `min_duration_s` with at least `min_pings` members become stops and the
//! scan resumes after them; otherwise it resumes at `i + 1`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{self, haversine_m};
use crate::model::{LabeledPing, Ping, PingId, StopEvent, Trajectory};
use crate::synth::GroundTruthStop;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub roam_radius_m: f64,
    pub min_duration_s: i64,
    pub max_ping_gap_s: i64,
    pub min_pings: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams { roam_radius_m: 100.0, min_duration_s: 300, max_ping_gap_s: 3600, min_pings: 3 }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if self.roam_radius_m > 0.0 && self.min_duration_s > 0 && self.max_ping_gap_s > 0 && self.min_pings > 0 {
            Ok(())
        } else {
            Err(Error::Config("detector parameters must be strictly positive".into()))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detection {
    pub stops: Vec<StopEvent>,
    pub labels: Vec<LabeledPing>,
}

pub fn stop_id(device_id: &str, k: usize) -> String {
    format!("{device_id}-s{k:05}")
}

fn centroid(pings: &[Ping]) -> (f64, f64) {
    let n = pings.len() as f64;
    let (la, lo) = pings.iter().fold((0.0, 0.0), |(a, b), p| (a + p.lat, b + p.lon));
    (la / n, lo / n)
}

/// Label one time-sorted trajectory. Ping ids are `first_id + index`.
pub fn detect_stops(traj: &Trajectory, params: &DetectorParams, first_id: PingId) -> Detection {
    let pings = &traj.pings;
    let n = pings.len();
    let mut stop_of: Vec<Option<usize>> = vec![None; n];
    let mut stops = Vec::new();
    let mut i = 0;
    while i < n {
        let (mut lat_sum, mut lon_sum) = (pings[i].lat, pings[i].lon);
        let mut j = i + 1;
        while j < n {
            if pings[j].timestamp - pings[j - 1].timestamp > params.max_ping_gap_s {
                break;
            }
            let k = (j - i + 1) as f64;
            let c = ((lat_sum + pings[j].lat) / k, (lon_sum + pings[j].lon) / k);
            if pings[i..=j].iter().any(|p| haversine_m(p.position(), c) > params.roam_radius_m) {
                break;
            }
            lat_sum += pings[j].lat;
            lon_sum += pings[j].lon;
            j += 1;
        }
        let members = &pings[i..j];
        let span = members[members.len() - 1].timestamp - members[0].timestamp;
        if members.len() >= params.min_pings && span >= params.min_duration_s {
            let k = stops.len();
            let (lat, lon) = centroid(members);
            stops.push(StopEvent {
                stop_id: stop_id(&traj.device_id, k),
                device_id: traj.device_id.clone(),
                start_ts: members[0].timestamp,
                end_ts: members[members.len() - 1].timestamp,
                centroid_lat: lat,
                centroid_lon: lon,
                geohash8: geo::geohash8(lat, lon),
                member_ping_count: members.len(),
            });
            stop_of[i..j].iter_mut().for_each(|s| *s = Some(k));
            i = j;
        } else {
            i += 1;
        }
    }
    let labels = pings
        .iter()
        .zip(stop_of)
        .enumerate()
        .map(|(idx, (p, s))| LabeledPing::new(first_id + idx as PingId, p.clone(), s.map(|k| stops[k].stop_id.clone())))
        .collect();
    Detection { stops, labels }
}

/// Run the detector on every device; ping ids are assigned in device order.
pub fn detect_corpus(devices: &BTreeMap<String, Trajectory>, params: &DetectorParams) -> Detection {
    let mut offsets = Vec::with_capacity(devices.len());
    let mut next: PingId = 0;
    for t in devices.values() {
        offsets.push(next);
        next += t.pings.len() as PingId;
    }
    let parts: Vec<Detection> = devices
        .values()
        .zip(offsets)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(t, off)| detect_stops(t, params, off))
        .collect();
    let mut out = Detection::default();
    for d in parts {
        out.stops.extend(d.stops);
        out.labels.extend(d.labels);
    }
    out
}

/// Label pings from stop spans: a ping belongs to the stop of its device whose
/// `[start_ts, end_ts]` contains it. Output is sorted by device and tie-break
/// key, with ping ids assigned in that order.
pub fn stops_to_labels(stops: &[StopEvent], pings: &[Ping]) -> Result<Vec<LabeledPing>> {
    let mut by_device: BTreeMap<&str, Vec<&StopEvent>> = BTreeMap::new();
    for s in stops {
        by_device.entry(s.device_id.as_str()).or_default().push(s);
    }
    for list in by_device.values_mut() {
        list.sort_by_key(|s| (s.start_ts, s.end_ts));
        for w in list.windows(2) {
            if w[1].start_ts <= w[0].end_ts {
                return Err(Error::Integrity(format!("stops {} and {} overlap", w[0].stop_id, w[1].stop_id)));
            }
        }
    }
    let mut sorted: Vec<&Ping> = pings.iter().collect();
    sorted.sort_by(|a, b| a.device_id.cmp(&b.device_id).then_with(|| a.tie_break_cmp(b)));
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(idx, p)| {
            let stop = by_device.get(p.device_id.as_str()).and_then(|list| {
                let k = list.partition_point(|s| s.end_ts < p.timestamp);
                list.get(k).filter(|s| s.start_ts <= p.timestamp)
            });
            LabeledPing::new(idx as PingId, p.clone(), stop.map(|s| s.stop_id.clone()))
        })
        .collect())
}

/// Fraction of ground-truth stops (optionally only those lasting at least
/// `min_span_s`) overlapped by detected stops for at least `min_overlap` of
/// their span.
pub fn ground_truth_recall(truth: &[GroundTruthStop], detected: &[StopEvent], min_span_s: i64, min_overlap: f64) -> f64 {
    let mut by_device: BTreeMap<&str, Vec<&StopEvent>> = BTreeMap::new();
    for s in detected {
        by_device.entry(s.device_id.as_str()).or_default().push(s);
    }
    let considered: Vec<&GroundTruthStop> = truth.iter().filter(|g| g.end_ts - g.start_ts >= min_span_s).collect();
    if considered.is_empty() {
        return 1.0;
    }
    let hits = considered
        .iter()
        .filter(|g| {
            let span = (g.end_ts - g.start_ts) as f64;
            let covered: i64 = by_device
                .get(g.device_id.as_str())
                .map(|list| {
                    list.iter()
                        .map(|s| (s.end_ts.min(g.end_ts) - s.start_ts.max(g.start_ts)).max(0))
                        .sum()
                })
                .unwrap_or(0);
            covered as f64 >= min_overlap * span
        })
        .count();
    hits as f64 / considered.len() as f64
}
