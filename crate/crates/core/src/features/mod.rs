//! Per-ping feature rows: individual and collective stop history, geohash
//! entropy, neighbor intervals, signal accuracy and the one-hot point type.

mod history;
mod scaler;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;

pub use history::{
    build_history_index, entropy_of, hour_block, stop_occurrences, weekday, CellEntropy, HistoryIndex, Recurrence, Scope,
    StopOccurrence, VisitTable, Window,
};
pub use scaler::{fit_scaler, read_scaler, transform, write_scaler, ColumnScale, ScalerParams};

use crate::error::{Error, Result};
use crate::geo::haversine_m;
use crate::model::{LabeledPing, Ping, PingId, PointType};

pub const FEATURE_COLUMNS: [&str; 19] = [
    "ind_hour",
    "ind_day",
    "ind_week",
    "ind_block",
    "ind_weekday",
    "col_hour",
    "col_day",
    "col_week",
    "col_block",
    "col_weekday",
    "geohash_entropy",
    "time_interval_s",
    "space_interval_m",
    "accuracy_m",
    "accuracy_prev_m",
    "accuracy_next_m",
    "type_whitelisted",
    "type_personal_area",
    "type_other",
];

pub const COLLECTIVE_COLUMNS: [&str; 5] = ["col_hour", "col_day", "col_week", "col_block", "col_weekday"];
pub const ONE_HOT_COLUMNS: [&str; 3] = ["type_whitelisted", "type_personal_area", "type_other"];
/// Columns derived from stop history (the ones a leakage check must cover).
pub const HISTORY_COLUMNS: [&str; 10] = [
    "ind_hour",
    "ind_day",
    "ind_week",
    "ind_block",
    "ind_weekday",
    "col_hour",
    "col_day",
    "col_week",
    "col_block",
    "col_weekday",
];

pub fn is_one_hot(column: &str) -> bool {
    ONE_HOT_COLUMNS.contains(&column)
}

/// Columns used for training: all 19, or without the collective block.
pub fn training_columns(include_collective: bool) -> Vec<String> {
    FEATURE_COLUMNS
        .iter()
        .filter(|c| include_collective || !COLLECTIVE_COLUMNS.contains(c))
        .map(|c| c.to_string())
        .collect()
}

/// Row-major numeric table with the ping id and label of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub ping_ids: Vec<PingId>,
    pub labels: Vec<bool>,
    pub values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>) -> Self {
        FeatureTable { columns, ping_ids: Vec::new(), labels: Vec::new(), values: Vec::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.ping_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn push_row(&mut self, ping_id: PingId, label: bool, row: &[f64]) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.ping_ids.push(ping_id);
        self.labels.push(label);
        self.values.extend_from_slice(row);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let d = self.n_cols();
        self.values.iter().skip(j).step_by(d).copied().collect()
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let d = self.n_cols();
        self.values[i * d + j] = v;
    }

    /// Project onto `columns` (in that order).
    pub fn select_columns(&self, columns: &[String]) -> Result<FeatureTable> {
        let missing: Vec<String> = columns.iter().filter(|c| self.column_index(c).is_none()).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::Schema { offending: missing });
        }
        let idx: Vec<usize> = columns.iter().map(|c| self.column_index(c).unwrap()).collect();
        let mut out = FeatureTable::new(columns.to_vec());
        out.values.reserve(self.n_rows() * idx.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            out.ping_ids.push(self.ping_ids[i]);
            out.labels.push(self.labels[i]);
            out.values.extend(idx.iter().map(|&j| row[j]));
        }
        Ok(out)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable {
        let mut out = FeatureTable::new(self.columns.clone());
        out.values.reserve(rows.len() * self.n_cols());
        for &i in rows {
            out.push_row(self.ping_ids[i], self.labels[i], self.row(i));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["ping_id".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("label".into());
        w.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            rec.clear();
            rec.push(self.ping_ids[i].to_string());
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            rec.push(if self.labels[i] { "1" } else { "0" }.into());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<FeatureTable> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let n = header.len();
        if n < 2 || &header[0] != "ping_id" || &header[n - 1] != "label" {
            return Err(Error::Row { line: 1, message: "feature header must start with ping_id and end with label".into() });
        }
        let columns: Vec<String> = header.iter().skip(1).take(n - 2).map(String::from).collect();
        let mut table = FeatureTable::new(columns);
        let mut row = Vec::with_capacity(n - 2);
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |what: &str| Error::Row { line, message: format!("invalid {what}") };
            let ping_id: PingId = rec[0].parse().map_err(|_| bad("ping_id"))?;
            row.clear();
            for j in 1..n - 1 {
                row.push(rec[j].parse::<f64>().map_err(|_| bad(&header[j]))?);
            }
            let label = match &rec[n - 1] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("label")),
            };
            table.push_row(ping_id, label, &row);
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborIntervals {
    pub time_interval_s: f64,
    pub space_interval_m: f64,
    pub accuracy_prev_m: f64,
    pub accuracy_next_m: f64,
}

/// Intervals between the neighbors of ping `i`; a missing neighbor at either
/// end of the trajectory is replaced by the ping itself.
pub fn neighbor_intervals(pings: &[&Ping], i: usize) -> NeighborIntervals {
    let prev = pings[i.saturating_sub(1)];
    let next = pings[(i + 1).min(pings.len() - 1)];
    NeighborIntervals {
        time_interval_s: (next.timestamp - prev.timestamp) as f64,
        space_interval_m: haversine_m(prev.position(), next.position()),
        accuracy_prev_m: prev.accuracy_m,
        accuracy_next_m: next.accuracy_m,
    }
}

fn one_hot(pt: PointType) -> [f64; 3] {
    match pt {
        PointType::Whitelisted => [1.0, 0.0, 0.0],
        PointType::PersonalArea => [0.0, 1.0, 0.0],
        PointType::Other => [0.0, 0.0, 1.0],
    }
}

/// All 19 columns for a ping given its neighbor intervals.
pub fn feature_row(index: &HistoryIndex, ping: &Ping, nb: &NeighborIntervals) -> [f64; 19] {
    let g = ping.geohash8.as_str();
    let t = ping.timestamp;
    let ind = Scope::Individual(&ping.device_id);
    let col = Scope::Collective;
    let c = |v: u32| v as f64;
    let oh = one_hot(ping.point_type);
    [
        c(index.rolling_count(ind, g, t, Window::Hour)),
        c(index.rolling_count(ind, g, t, Window::Day)),
        c(index.rolling_count(ind, g, t, Window::Week)),
        c(index.recurring_count(ind, g, t, Recurrence::Block)),
        c(index.recurring_count(ind, g, t, Recurrence::Weekday)),
        c(index.rolling_count(col, g, t, Window::Hour)),
        c(index.rolling_count(col, g, t, Window::Day)),
        c(index.rolling_count(col, g, t, Window::Week)),
        c(index.recurring_count(col, g, t, Recurrence::Block)),
        c(index.recurring_count(col, g, t, Recurrence::Weekday)),
        index.entropy(g).value,
        nb.time_interval_s,
        nb.space_interval_m,
        ping.accuracy_m,
        nb.accuracy_prev_m,
        nb.accuracy_next_m,
        oh[0],
        oh[1],
        oh[2],
    ]
}

/// Positions of each device's pings in trajectory order (tie-break key, then ping id).
pub fn device_orders(labeled: &[LabeledPing]) -> Vec<Vec<usize>> {
    let mut by_device: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, lp) in labeled.iter().enumerate() {
        by_device.entry(lp.ping.device_id.as_str()).or_default().push(i);
    }
    by_device
        .into_values()
        .map(|mut idx| {
            idx.sort_by(|&a, &b| labeled[a].ping.tie_break_cmp(&labeled[b].ping).then(labeled[a].ping_id.cmp(&labeled[b].ping_id)));
            idx
        })
        .collect()
}

/// One row per labeled ping, in input order.
pub fn assemble_features(labeled: &[LabeledPing], index: &HistoryIndex) -> FeatureTable {
    let orders = device_orders(labeled);
    let mut rows: Vec<[f64; 19]> = vec![[0.0; 19]; labeled.len()];
    let computed: Vec<Vec<(usize, [f64; 19])>> = orders
        .par_iter()
        .map(|order| {
            let traj: Vec<&Ping> = order.iter().map(|&i| &labeled[i].ping).collect();
            order
                .iter()
                .enumerate()
                .map(|(k, &i)| (i, feature_row(index, traj[k], &neighbor_intervals(&traj, k))))
                .collect()
        })
        .collect();
    for (i, row) in computed.into_iter().flatten() {
        rows[i] = row;
    }
    let mut table = FeatureTable::new(FEATURE_COLUMNS.iter().map(|c| c.to_string()).collect());
    table.values.reserve(labeled.len() * 19);
    for (lp, row) in labeled.iter().zip(&rows) {
        table.push_row(lp.ping_id, lp.is_stop, row);
    }
    table
}

/// Per-cell entropy, sorted by geohash.
pub fn entropy_table(visits: &VisitTable) -> Vec<(String, CellEntropy)> {
    visits.cells.keys().map(|g| (g.clone(), visits.entropy(g))).collect()
}

pub fn write_entropy<W: Write>(out: W, visits: &VisitTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["geohash8", "S_j", "n_devices"])?;
    for (g, e) in entropy_table(visits) {
        w.write_record([g, e.value.to_string(), e.n_devices.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ping;

    fn p(ts: i64, lat: f64, lon: f64, acc: f64) -> Ping {
        Ping::new("d", ts, lat, lon, acc, PointType::Other).unwrap()
    }

    #[test]
    fn stationary_triple() {
        let pings = [p(100, 1.0, 1.0, 3.0), p(160, 1.0, 1.0, 4.0), p(220, 1.0, 1.0, 5.0)];
        let refs: Vec<&Ping> = pings.iter().collect();
        let nb = neighbor_intervals(&refs, 1);
        assert_eq!((nb.time_interval_s, nb.space_interval_m), (120.0, 0.0));
        assert_eq!((nb.accuracy_prev_m, nb.accuracy_next_m), (3.0, 5.0));
    }

    #[test]
    fn equator_neighbors() {
        let pings = [p(100, 0.0, 0.0, 3.0), p(160, 0.3, 0.4, 3.0), p(220, 0.0, 1.0, 3.0)];
        let refs: Vec<&Ping> = pings.iter().collect();
        assert!((neighbor_intervals(&refs, 1).space_interval_m - 111_194.93).abs() < 0.01);
    }

    #[test]
    fn boundaries_use_self() {
        let pings = [p(100, 1.0, 1.0, 3.0), p(160, 1.0, 1.001, 4.0)];
        let refs: Vec<&Ping> = pings.iter().collect();
        let first = neighbor_intervals(&refs, 0);
        assert_eq!(first.time_interval_s, 60.0);
        assert_eq!(first.accuracy_prev_m, 3.0);
        let last = neighbor_intervals(&refs, 1);
        assert_eq!(last.time_interval_s, 60.0);
        assert_eq!(last.accuracy_next_m, 4.0);
        let single = [p(100, 1.0, 1.0, 7.0)];
        let refs: Vec<&Ping> = single.iter().collect();
        let nb = neighbor_intervals(&refs, 0);
        assert_eq!((nb.time_interval_s, nb.space_interval_m, nb.accuracy_prev_m, nb.accuracy_next_m), (0.0, 0.0, 7.0, 7.0));
    }

    #[test]
    fn table_shape_and_one_hot() {
        let labeled: Vec<LabeledPing> = (0..6)
            .map(|k| {
                let pt = PointType::ALL[k % 3];
                let ping = Ping::new(if k < 3 { "a" } else { "b" }, 1000 + k as i64 * 60, 1.0, 1.0, 5.0, pt).unwrap();
                LabeledPing::new(k as u64, ping, None)
            })
            .collect();
        let idx = build_history_index(&labeled);
        let table = assemble_features(&labeled, &idx);
        assert_eq!(table.n_rows(), 6);
        assert_eq!(table.n_cols(), 19);
        for i in 0..6 {
            let r = table.row(i);
            assert_eq!(r[16] + r[17] + r[18], 1.0);
            // never-visited history
            assert!(r[..10].iter().all(|&v| v == 0.0));
            assert!(r.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn history_columns_see_earlier_stops() {
        let mk = |k: u64, ts: i64, stop: Option<&str>| LabeledPing::new(k, p(ts, 1.0, 1.0, 5.0), stop.map(String::from));
        let labeled = vec![mk(0, 1000, Some("s0")), mk(1, 1300, Some("s0")), mk(2, 1600, Some("s0")), mk(3, 5000, None)];
        let table = assemble_features(&labeled, &build_history_index(&labeled));
        assert_eq!(table.row(0)[0], 0.0); // stop starts at t: excluded
        assert_eq!(table.row(1)[0], 1.0);
        assert_eq!(table.row(3)[0], 0.0); // more than an hour later
        assert_eq!(table.row(3)[1], 1.0);
        assert_eq!(table.row(3)[6], 1.0);
    }

    #[test]
    fn csv_roundtrip_and_selection() {
        let mut t = FeatureTable::new(vec!["a".into(), "b".into()]);
        t.push_row(7, true, &[1.5, -0.25]);
        t.push_row(9, false, &[1e-300, 3.0]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(FeatureTable::read_csv(buf.as_slice()).unwrap(), t);
        let s = t.select_columns(&["b".into()]).unwrap();
        assert_eq!(s.column(0), vec![-0.25, 3.0]);
        match t.select_columns(&["zz".into()]) {
            Err(Error::Schema { offending }) => assert_eq!(offending, vec!["zz".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn training_schema() {
        assert_eq!(training_columns(true).len(), 19);
        let cols = training_columns(false);
        assert_eq!(cols.len(), 14);
        assert!(cols.iter().all(|c| !c.starts_with("col_")));
    }
}
