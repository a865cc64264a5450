//! Stop-history index: when and where each device (and everyone) stopped,
//! plus the per-cell stop/pass tallies behind the geohash entropy.
//!
//! Every stop contributes one occurrence, at its start time, in the geohash8
//! cell of its centroid. All history queries are half-open on the right: an
//! occurrence at exactly the query time is not counted.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::model::{stops_from_labels, LabeledPing};

pub const HOUR_S: i64 = 3600;
pub const DAY_S: i64 = 86_400;
pub const WEEK_S: i64 = 7 * DAY_S;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hour,
    Day,
    Week,
}

impl Window {
    pub fn seconds(self) -> i64 {
        match self {
            Window::Hour => HOUR_S,
            Window::Day => DAY_S,
            Window::Week => WEEK_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope<'a> {
    Individual(&'a str),
    Collective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recurrence {
    /// Same day of the week (UTC).
    Weekday,
    /// Same four-hour block of the day (UTC).
    Block,
}

/// Monday = 0.
pub fn weekday(ts: i64) -> usize {
    ((ts.div_euclid(DAY_S) + 3).rem_euclid(7)) as usize
}

/// 0 for 00-03h, 1 for 04-07h, ..., 5 for 20-23h.
pub fn hour_block(ts: i64) -> usize {
    (ts.rem_euclid(DAY_S) / HOUR_S / 4) as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopOccurrence {
    pub device_id: String,
    pub geohash8: String,
    pub ts: i64,
}

#[derive(Debug, Clone, Default)]
struct CellHistory {
    all: Vec<i64>,
    by_weekday: [Vec<i64>; 7],
    by_block: [Vec<i64>; 6],
}

impl CellHistory {
    fn push(&mut self, ts: i64) {
        self.all.push(ts);
        self.by_weekday[weekday(ts)].push(ts);
        self.by_block[hour_block(ts)].push(ts);
    }

    fn sort(&mut self) {
        self.all.sort_unstable();
        self.by_weekday.iter_mut().for_each(|v| v.sort_unstable());
        self.by_block.iter_mut().for_each(|v| v.sort_unstable());
    }
}

fn count_in(sorted: &[i64], from: i64, to: i64) -> u32 {
    (sorted.partition_point(|&t| t < to) - sorted.partition_point(|&t| t < from)) as u32
}

fn count_before(sorted: &[i64], t: i64) -> u32 {
    sorted.partition_point(|&x| x < t) as u32
}

/// Per cell, per device: (stops, passes) over the whole observation period.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VisitTable {
    pub cells: BTreeMap<String, BTreeMap<String, (u32, u32)>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellEntropy {
    pub value: f64,
    pub n_devices: usize,
    /// No device ever passed through the cell.
    pub no_data: bool,
}

impl VisitTable {
    pub fn build(labeled: &[LabeledPing], occurrences: &[StopOccurrence]) -> Self {
        let mut cells: BTreeMap<String, BTreeMap<String, (u32, u32)>> = BTreeMap::new();
        let mut by_device: BTreeMap<&str, Vec<&LabeledPing>> = BTreeMap::new();
        for lp in labeled {
            by_device.entry(lp.ping.device_id.as_str()).or_default().push(lp);
        }
        for (device, mut pings) in by_device {
            pings.sort_by(|a, b| a.ping.tie_break_cmp(&b.ping).then(a.ping_id.cmp(&b.ping_id)));
            let mut prev: Option<&str> = None;
            for lp in pings {
                let cell = lp.ping.geohash8.as_str();
                if prev != Some(cell) {
                    cells.entry(cell.to_string()).or_default().entry(device.to_string()).or_default().1 += 1;
                }
                prev = Some(cell);
            }
        }
        for occ in occurrences {
            cells.entry(occ.geohash8.clone()).or_default().entry(occ.device_id.clone()).or_default().0 += 1;
        }
        VisitTable { cells }
    }

    /// S = -sum_i p_i ln p_i over devices seen in the cell, with p_i the
    /// device's stops per pass. Passes are floored at the stop count so a stop
    /// whose centroid cell holds none of its pings still yields p <= 1.
    pub fn entropy(&self, geohash8: &str) -> CellEntropy {
        match self.cells.get(geohash8) {
            None => CellEntropy { value: 0.0, n_devices: 0, no_data: true },
            Some(devices) => CellEntropy {
                value: entropy_of(devices.values().copied()),
                n_devices: devices.len(),
                no_data: false,
            },
        }
    }
}

/// Entropy of (stops, passes) pairs; zero-probability terms contribute 0.
pub fn entropy_of(pairs: impl IntoIterator<Item = (u32, u32)>) -> f64 {
    let mut s = 0.0;
    for (stops, passes) in pairs {
        let denom = passes.max(stops);
        if stops == 0 || denom == 0 {
            continue;
        }
        let p = stops as f64 / denom as f64;
        s -= p * p.ln();
    }
    // -0.0 when every term is p = 1
    s + 0.0
}

#[derive(Debug, Clone, Default)]
pub struct HistoryIndex {
    individual: HashMap<String, HashMap<String, CellHistory>>,
    collective: HashMap<String, CellHistory>,
    pub visits: VisitTable,
}

/// One occurrence per stop in the labels, skipping `exclude`d stop ids.
pub fn stop_occurrences(labeled: &[LabeledPing], exclude: &HashSet<String>) -> Vec<StopOccurrence> {
    stops_from_labels(labeled)
        .into_iter()
        .filter(|s| !exclude.contains(&s.stop_id))
        .map(|s| StopOccurrence { device_id: s.device_id, geohash8: s.geohash8, ts: s.start_ts })
        .collect()
}

impl HistoryIndex {
    pub fn from_parts(occurrences: &[StopOccurrence], visits: VisitTable) -> Self {
        let mut individual: HashMap<String, HashMap<String, CellHistory>> = HashMap::new();
        let mut collective: HashMap<String, CellHistory> = HashMap::new();
        for occ in occurrences {
            individual
                .entry(occ.device_id.clone())
                .or_default()
                .entry(occ.geohash8.clone())
                .or_default()
                .push(occ.ts);
            collective.entry(occ.geohash8.clone()).or_default().push(occ.ts);
        }
        individual.values_mut().flat_map(|m| m.values_mut()).for_each(CellHistory::sort);
        collective.values_mut().for_each(CellHistory::sort);
        HistoryIndex { individual, collective, visits }
    }

    /// Index over every labeled stop except those in `exclude`.
    pub fn build(labeled: &[LabeledPing], exclude: &HashSet<String>) -> Self {
        let occurrences = stop_occurrences(labeled, exclude);
        let visits = VisitTable::build(labeled, &occurrences);
        Self::from_parts(&occurrences, visits)
    }

    fn cell(&self, scope: Scope<'_>, geohash8: &str) -> Option<&CellHistory> {
        match scope {
            Scope::Individual(device) => self.individual.get(device)?.get(geohash8),
            Scope::Collective => self.collective.get(geohash8),
        }
    }

    /// Stops in `[t - window, t)`.
    pub fn rolling_count(&self, scope: Scope<'_>, geohash8: &str, t: i64, window: Window) -> u32 {
        self.cell(scope, geohash8).map_or(0, |c| count_in(&c.all, t - window.seconds(), t))
    }

    /// Stops strictly before `t` sharing t's weekday or four-hour block.
    pub fn recurring_count(&self, scope: Scope<'_>, geohash8: &str, t: i64, key: Recurrence) -> u32 {
        self.cell(scope, geohash8).map_or(0, |c| match key {
            Recurrence::Weekday => count_before(&c.by_weekday[weekday(t)], t),
            Recurrence::Block => count_before(&c.by_block[hour_block(t)], t),
        })
    }

    pub fn entropy(&self, geohash8: &str) -> CellEntropy {
        self.visits.entropy(geohash8)
    }
}

pub fn build_history_index(labeled: &[LabeledPing]) -> HistoryIndex {
    HistoryIndex::build(labeled, &HashSet::new())
}
