//! Seeded generator of GPS trajectories with planted ground-truth stops.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`): device `k` draws from
//! stream `k + 1` of the configured seed and the shared POI pool from
//! stream 0, so devices are independent and can be generated in parallel
//! with a deterministic merge by device id.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{self, haversine_m, offset_m};
use crate::model::{Ping, PointType};

pub const DAY_S: i64 = 86_400;

#[derive(Debug, Clone, PartialEq)]
pub enum DropoutModel {
    None,
    /// Each ping dropped independently with this probability.
    Independent(f64),
    /// Every ping inside one of these closed intervals is dropped.
    Bursts(Vec<(i64, i64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_devices: usize,
    pub window_start_ts: i64,
    pub window_days: u32,
    /// Home, then work, then "other" anchors drawn from the shared POI pool.
    pub anchors_per_device: usize,
    pub n_pois: usize,
    pub whitelisted_poi_fraction: f64,
    pub mean_daily_pings: f64,
    /// Horizontal RMS error (per-axis sigma is this over sqrt 2).
    pub sigma_gps_m: f64,
    pub accuracy_min_m: f64,
    pub accuracy_max_m: f64,
    pub dwell_median_s: f64,
    pub dwell_sigma: f64,
    pub work_dwell_median_s: f64,
    pub work_prob: f64,
    pub depart_hour_mean: f64,
    pub depart_hour_sd: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    /// Monday first; scales the daily rate of non-work stops.
    pub weekday_weights: [f64; 7],
    pub stops_per_day: f64,
    pub anchor_radius_m: f64,
    pub area_radius_m: f64,
    pub city_lat: f64,
    pub city_lon: f64,
    pub city_radius_m: f64,
    pub dropout_prob: f64,
    pub bursts_per_day: f64,
    pub burst_mean_s: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 1,
            n_devices: 10,
            window_start_ts: 1_706_745_600, // 2024-02-01T00:00:00Z
            window_days: 28,
            anchors_per_device: 6,
            n_pois: 120,
            whitelisted_poi_fraction: 0.5,
            mean_daily_pings: 200.0,
            sigma_gps_m: 10.0,
            accuracy_min_m: 5.0,
            accuracy_max_m: 50.0,
            dwell_median_s: 1800.0,
            dwell_sigma: 0.6,
            work_dwell_median_s: 8.0 * 3600.0,
            work_prob: 0.85,
            depart_hour_mean: 8.0,
            depart_hour_sd: 1.0,
            speed_min_mps: 3.0,
            speed_max_mps: 15.0,
            weekday_weights: [1.0, 1.0, 1.0, 1.0, 1.0, 0.6, 0.4],
            stops_per_day: 2.5,
            anchor_radius_m: 5.0,
            area_radius_m: 50.0,
            city_lat: 40.75,
            city_lon: -73.98,
            city_radius_m: 8000.0,
            dropout_prob: 0.0,
            bursts_per_day: 0.0,
            burst_mean_s: 1800.0,
        }
    }
}

impl GeneratorConfig {
    pub fn window_end_ts(&self) -> i64 {
        self.window_start_ts + self.window_days as i64 * DAY_S
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_devices == 0 {
            problems.push("n_devices must be positive");
        }
        if self.window_days == 0 {
            problems.push("window is empty");
        }
        if self.window_start_ts <= 0 {
            problems.push("window_start must be after the epoch");
        }
        if self.anchors_per_device == 0 {
            problems.push("anchors_per_device must be positive");
        }
        if self.anchors_per_device > 2 && self.n_pois == 0 {
            problems.push("other anchors need a non-empty POI pool");
        }
        if !(self.mean_daily_pings > 0.0) {
            problems.push("mean_daily_pings must be positive");
        }
        if !(self.sigma_gps_m >= 0.0) {
            problems.push("sigma_gps_m must be non-negative");
        }
        if !(self.accuracy_min_m >= 0.0 && self.accuracy_max_m >= self.accuracy_min_m) {
            problems.push("accuracy range invalid");
        }
        if !(self.dwell_median_s > 0.0 && self.work_dwell_median_s > 0.0 && self.dwell_sigma >= 0.0) {
            problems.push("dwell distribution invalid");
        }
        if !(self.speed_min_mps > 0.0 && self.speed_max_mps >= self.speed_min_mps) {
            problems.push("speed range invalid");
        }
        if self.weekday_weights.iter().any(|w| !(*w >= 0.0)) {
            problems.push("weekday weights must be non-negative");
        }
        for (name, p) in [
            ("work_prob", self.work_prob),
            ("whitelisted_poi_fraction", self.whitelisted_poi_fraction),
            ("dropout_prob", self.dropout_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                problems.push(match name {
                    "work_prob" => "work_prob outside [0,1]",
                    "whitelisted_poi_fraction" => "whitelisted_poi_fraction outside [0,1]",
                    _ => "dropout_prob outside [0,1]",
                });
            }
        }
        if !(self.stops_per_day >= 0.0 && self.bursts_per_day >= 0.0 && self.burst_mean_s > 0.0) {
            problems.push("rates must be non-negative");
        }
        if geo::check_coordinates(self.city_lat, self.city_lon).is_err() {
            problems.push("city center out of range");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthStop {
    pub stop_id: String,
    pub device_id: String,
    pub anchor_id: String,
    pub start_ts: i64,
    /// Exclusive.
    pub end_ts: i64,
    pub lat: f64,
    pub lon: f64,
    pub ping_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub stops: Vec<GroundTruthStop>,
}

impl GroundTruth {
    pub fn for_device<'a>(&'a self, device_id: &'a str) -> impl Iterator<Item = &'a GroundTruthStop> + 'a {
        self.stops.iter().filter(move |s| s.device_id == device_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Sorted by device, then time.
    pub pings: Vec<Ping>,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone)]
struct Poi {
    id: String,
    lat: f64,
    lon: f64,
    whitelisted: bool,
}

#[derive(Debug, Clone)]
struct Anchor {
    id: String,
    lat: f64,
    lon: f64,
    whitelisted: bool,
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Dwell { anchor: usize, lat: f64, lon: f64, start: f64, end: f64 },
    Travel { from: (f64, f64), to: (f64, f64), start: f64, end: f64 },
}

impl Segment {
    fn end(&self) -> f64 {
        match *self {
            Segment::Dwell { end, .. } | Segment::Travel { end, .. } => end,
        }
    }
}

fn random_point_in_disk(rng: &mut ChaCha8Rng, lat: f64, lon: f64, radius_m: f64) -> (f64, f64) {
    let r = radius_m * rng.random::<f64>().sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    offset_m(lat, lon, r * theta.sin(), r * theta.cos())
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

fn weekday_of(ts: i64) -> usize {
    // 1970-01-01 was a Thursday.
    ((ts.div_euclid(DAY_S) + 3).rem_euclid(7)) as usize
}

fn build_pois(config: &GeneratorConfig) -> Vec<Poi> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    (0..config.n_pois)
        .map(|j| {
            let (lat, lon) = random_point_in_disk(&mut rng, config.city_lat, config.city_lon, config.city_radius_m);
            Poi { id: format!("poi{j:04}"), lat, lon, whitelisted: rng.random::<f64>() < config.whitelisted_poi_fraction }
        })
        .collect()
}

struct DeviceSim<'a> {
    config: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    anchors: Vec<Anchor>,
    segments: Vec<Segment>,
    /// Current dwell (anchor, position, start).
    current: (usize, (f64, f64), f64),
}

impl<'a> DeviceSim<'a> {
    fn new(config: &'a GeneratorConfig, device_index: usize, device_id: &str, pois: &[Poi]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(device_index as u64 + 1);
        let mut anchors = Vec::with_capacity(config.anchors_per_device);
        let (hl, ho) = random_point_in_disk(&mut rng, config.city_lat, config.city_lon, config.city_radius_m);
        anchors.push(Anchor { id: format!("home:{device_id}"), lat: hl, lon: ho, whitelisted: false });
        if config.anchors_per_device >= 2 {
            let (wl, wo) = random_point_in_disk(&mut rng, config.city_lat, config.city_lon, config.city_radius_m);
            anchors.push(Anchor { id: format!("work:{device_id}"), lat: wl, lon: wo, whitelisted: false });
        }
        let n_other = config.anchors_per_device.saturating_sub(2).min(pois.len());
        let chosen = rand::seq::index::sample(&mut rng, pois.len(), n_other);
        let mut chosen: Vec<usize> = chosen.into_iter().collect();
        chosen.sort_unstable();
        for j in chosen {
            let poi = &pois[j];
            anchors.push(Anchor { id: poi.id.clone(), lat: poi.lat, lon: poi.lon, whitelisted: poi.whitelisted });
        }
        let start = config.window_start_ts as f64;
        let home_pos = (anchors[0].lat, anchors[0].lon);
        let mut sim = DeviceSim { config, rng, anchors, segments: Vec::new(), current: (0, home_pos, start) };
        sim.current.1 = sim.dwell_position(0);
        sim
    }

    fn dwell_position(&mut self, anchor: usize) -> (f64, f64) {
        let a = &self.anchors[anchor];
        let (lat, lon) = (a.lat, a.lon);
        random_point_in_disk(&mut self.rng, lat, lon, self.config.anchor_radius_m)
    }

    fn close_dwell(&mut self, at: f64) {
        let (anchor, (lat, lon), start) = self.current;
        if at > start {
            self.segments.push(Segment::Dwell { anchor, lat, lon, start, end: at });
        }
    }

    /// Move to `anchor` starting at `t`; returns arrival time.
    fn travel_to(&mut self, anchor: usize, t: f64) -> f64 {
        self.close_dwell(t);
        let from = self.current.1;
        let to = self.dwell_position(anchor);
        let speed = self.rng.random_range(self.config.speed_min_mps..=self.config.speed_max_mps);
        let duration = (haversine_m(from, to) / speed).max(60.0);
        let arrive = t + duration;
        self.segments.push(Segment::Travel { from, to, start: t, end: arrive });
        self.current = (anchor, to, arrive);
        arrive
    }

    fn sample_dwell(&mut self, median: f64) -> f64 {
        let d = LogNormal::new(median.ln(), self.config.dwell_sigma).expect("valid lognormal");
        d.sample(&mut self.rng).max(60.0)
    }

    fn pick_other(&mut self) -> Option<usize> {
        let first_other = 2.min(self.anchors.len());
        let candidates: Vec<usize> = (first_other..self.anchors.len()).filter(|&a| a != self.current.0).collect();
        if candidates.is_empty() {
            return None;
        }
        // Earlier-listed anchors are favoured (1/(rank+1) weights).
        let weights: Vec<f64> = candidates.iter().map(|&a| 1.0 / (a - first_other + 1) as f64).collect();
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.random::<f64>() * total;
        for (c, w) in candidates.iter().zip(&weights) {
            if u < *w {
                return Some(*c);
            }
            u -= w;
        }
        candidates.last().copied()
    }

    fn schedule(&mut self) {
        let cfg = self.config;
        let window_end = cfg.window_end_ts() as f64;
        let depart_dist = Normal::new(cfg.depart_hour_mean, cfg.depart_hour_sd.max(0.0)).expect("valid normal");
        for day in 0..cfg.window_days as i64 {
            let day_start = (cfg.window_start_ts + day * DAY_S) as f64;
            let weekday = weekday_of(cfg.window_start_ts + day * DAY_S);
            let mut t = (day_start + depart_dist.sample(&mut self.rng).clamp(4.0, 14.0) * 3600.0)
                .max(self.current.2 + 3600.0);
            if self.anchors.len() < 2 || t >= window_end {
                continue;
            }
            let goes_to_work = weekday < 5 && self.rng.random::<f64>() < cfg.work_prob;
            let lambda = cfg.stops_per_day * cfg.weekday_weights[weekday];
            let n_other = if lambda > 0.0 {
                Poisson::new(lambda).expect("valid poisson").sample(&mut self.rng) as usize
            } else {
                0
            };
            let mut plan: Vec<(usize, f64)> = Vec::new();
            if goes_to_work {
                plan.push((1, cfg.work_dwell_median_s));
            }
            for _ in 0..n_other {
                plan.push((usize::MAX, cfg.dwell_median_s));
            }
            let mut left_home = false;
            for (target, median) in plan {
                let anchor = if target == usize::MAX {
                    match self.pick_other() {
                        Some(a) => a,
                        None => continue,
                    }
                } else if target == self.current.0 {
                    continue;
                } else {
                    target
                };
                if t >= window_end {
                    break;
                }
                let arrive = self.travel_to(anchor, t);
                left_home = true;
                t = arrive + self.sample_dwell(median);
                if t >= window_end {
                    break;
                }
            }
            if left_home && t < window_end {
                self.travel_to(0, t);
            }
        }
        self.close_dwell(window_end);
        for s in self.segments.iter_mut() {
            match s {
                Segment::Dwell { start, end, .. } | Segment::Travel { start, end, .. } => {
                    *start = start.min(window_end);
                    *end = end.min(window_end);
                }
            }
        }
        self.segments.retain(|s| match *s {
            Segment::Dwell { start, end, .. } | Segment::Travel { start, end, .. } => end > start,
        });
    }

    fn position_at(segment: &Segment, t: f64) -> (f64, f64) {
        match *segment {
            Segment::Dwell { lat, lon, .. } => (lat, lon),
            Segment::Travel { from, to, start, end } => {
                let f = if end > start { ((t - start) / (end - start)).clamp(0.0, 1.0) } else { 1.0 };
                (from.0 + (to.0 - from.0) * f, from.1 + (to.1 - from.1) * f)
            }
        }
    }

    fn top_anchor(&self) -> usize {
        let mut visits = vec![(0usize, 0.0f64); self.anchors.len()];
        for s in &self.segments {
            if let Segment::Dwell { anchor, start, end, .. } = *s {
                visits[anchor].0 += 1;
                visits[anchor].1 += end - start;
            }
        }
        (0..self.anchors.len())
            .max_by(|&a, &b| {
                visits[a]
                    .0
                    .cmp(&visits[b].0)
                    .then(visits[a].1.total_cmp(&visits[b].1))
                    .then(b.cmp(&a))
            })
            .unwrap_or(0)
    }

    fn point_type(&self, top: usize, lat: f64, lon: f64) -> PointType {
        let r = self.config.area_radius_m;
        let a = &self.anchors[top];
        if haversine_m((lat, lon), (a.lat, a.lon)) <= r {
            return PointType::PersonalArea;
        }
        if self.anchors.iter().any(|a| a.whitelisted && haversine_m((lat, lon), (a.lat, a.lon)) <= r) {
            return PointType::Whitelisted;
        }
        PointType::Other
    }

    fn emit(mut self, device_id: &str) -> (Vec<Ping>, Vec<GroundTruthStop>) {
        let cfg = self.config;
        self.schedule();
        let top = self.top_anchor();
        let rate = cfg.mean_daily_pings / DAY_S as f64;
        let inter = Exp::new(rate).expect("positive rate");
        let axis_sigma = cfg.sigma_gps_m / std::f64::consts::SQRT_2;
        let noise = Normal::new(0.0, axis_sigma.max(0.0)).expect("valid normal");
        let window_end = cfg.window_end_ts();
        let mut pings = Vec::new();
        let mut seg = 0usize;
        let mut t = cfg.window_start_ts as f64;
        loop {
            t += inter.sample(&mut self.rng);
            if t >= window_end as f64 {
                break;
            }
            while seg + 1 < self.segments.len() && self.segments[seg].end() <= t {
                seg += 1;
            }
            let (lat0, lon0) = Self::position_at(&self.segments[seg], t);
            let (dn, de) = (noise.sample(&mut self.rng), noise.sample(&mut self.rng));
            let (lat, lon) = offset_m(lat0, lon0, dn, de);
            let (lat, lon) = (round_to(lat, 7), round_to(lon, 7));
            let accuracy = round_to(self.rng.random_range(cfg.accuracy_min_m..=cfg.accuracy_max_m), 1);
            let ts = (t.floor() as i64).max(cfg.window_start_ts);
            let pt = self.point_type(top, lat, lon);
            pings.push(Ping::new(device_id, ts, lat, lon, accuracy, pt).expect("generated ping valid"));
        }

        let mut dropout = vec![];
        if cfg.bursts_per_day > 0.0 {
            let n = Poisson::new(cfg.bursts_per_day * cfg.window_days as f64)
                .expect("valid poisson")
                .sample(&mut self.rng) as usize;
            let len = Exp::new(1.0 / cfg.burst_mean_s).expect("valid exp");
            for _ in 0..n {
                let s = self.rng.random_range(cfg.window_start_ts..window_end);
                dropout.push((s, s + len.sample(&mut self.rng) as i64));
            }
        }
        if !dropout.is_empty() {
            pings = thin_signal(pings, &DropoutModel::Bursts(dropout), &mut self.rng);
        }
        if cfg.dropout_prob > 0.0 {
            pings = thin_signal(pings, &DropoutModel::Independent(cfg.dropout_prob), &mut self.rng);
        }

        let mut stops = Vec::new();
        let mut k = 0usize;
        for s in &self.segments {
            if let Segment::Dwell { anchor, lat, lon, start, end } = *s {
                let (start, end) = (start.floor() as i64, end.floor() as i64);
                if end <= start {
                    continue;
                }
                let lo = pings.partition_point(|p| p.timestamp < start);
                let hi = pings.partition_point(|p| p.timestamp < end);
                stops.push(GroundTruthStop {
                    stop_id: format!("{device_id}-gt{k:04}"),
                    device_id: device_id.to_string(),
                    anchor_id: self.anchors[anchor].id.clone(),
                    start_ts: start,
                    end_ts: end,
                    lat,
                    lon,
                    ping_count: hi - lo,
                });
                k += 1;
            }
        }
        (pings, stops)
    }
}

pub fn device_id(index: usize) -> String {
    format!("dev{index:04}")
}

/// Generate pings for every device together with the planted stops.
pub fn generate(config: &GeneratorConfig) -> Result<Generated> {
    config.validate()?;
    let pois = build_pois(config);
    let per_device: Vec<(Vec<Ping>, Vec<GroundTruthStop>)> = (0..config.n_devices)
        .into_par_iter()
        .map(|k| {
            let id = device_id(k);
            DeviceSim::new(config, k, &id, &pois).emit(&id)
        })
        .collect();
    let mut pings = Vec::new();
    let mut stops = Vec::new();
    for (p, s) in per_device {
        pings.extend(p);
        stops.extend(s);
    }
    Ok(Generated { pings, ground_truth: GroundTruth { stops } })
}

/// Drop pings according to `model`; order is preserved.
pub fn thin_signal(pings: Vec<Ping>, model: &DropoutModel, rng: &mut impl Rng) -> Vec<Ping> {
    match model {
        DropoutModel::None => pings,
        DropoutModel::Independent(p) => pings.into_iter().filter(|_| rng.random::<f64>() >= *p).collect(),
        DropoutModel::Bursts(intervals) => pings
            .into_iter()
            .filter(|ping| !intervals.iter().any(|&(a, b)| ping.timestamp >= a && ping.timestamp <= b))
            .collect(),
    }
}

pub const GROUND_TRUTH_HEADER: [&str; 9] = [
    "stop_id",
    "device_id",
    "start_ts",
    "end_ts",
    "centroid_lat",
    "centroid_lon",
    "geohash8",
    "member_ping_count",
    "anchor_id",
];

pub fn write_ground_truth<W: Write>(out: W, truth: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GROUND_TRUTH_HEADER)?;
    for s in &truth.stops {
        w.write_record([
            s.stop_id.clone(),
            s.device_id.clone(),
            s.start_ts.to_string(),
            s.end_ts.to_string(),
            s.lat.to_string(),
            s.lon.to_string(),
            geo::geohash8(s.lat, s.lon),
            s.ping_count.to_string(),
            s.anchor_id.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth<R: std::io::Read>(input: R) -> Result<GroundTruth> {
    let mut reader = csv::Reader::from_reader(input);
    if !reader.headers()?.iter().eq(GROUND_TRUTH_HEADER.iter().copied()) {
        return Err(Error::Row { line: 1, message: "unexpected ground-truth header".into() });
    }
    let mut stops = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str| Error::Row { line, message: format!("invalid {what}") };
        stops.push(GroundTruthStop {
            stop_id: rec[0].to_string(),
            device_id: rec[1].to_string(),
            start_ts: rec[2].parse().map_err(|_| bad("start_ts"))?,
            end_ts: rec[3].parse().map_err(|_| bad("end_ts"))?,
            lat: rec[4].parse().map_err(|_| bad("centroid_lat"))?,
            lon: rec[5].parse().map_err(|_| bad("centroid_lon"))?,
            ping_count: rec[7].parse().map_err(|_| bad("member_ping_count"))?,
            anchor_id: rec[8].to_string(),
        });
    }
    Ok(GroundTruth { stops })
}
