use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{NaiveDate, Timelike};

use crate::error::Result;
use crate::model::{stops_from_labels, LabeledPing};
use crate::quality::utc_day;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailyCount {
    pub day: NaiveDate,
    pub devices: usize,
    /// Stops starting on this day.
    pub stops: usize,
}

pub fn daily_counts(labeled: &[LabeledPing]) -> Vec<DailyCount> {
    let mut devices: BTreeMap<NaiveDate, BTreeSet<&str>> = BTreeMap::new();
    for lp in labeled {
        devices.entry(utc_day(lp.ping.timestamp)).or_default().insert(lp.ping.device_id.as_str());
    }
    let mut stops: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for s in stops_from_labels(labeled) {
        *stops.entry(utc_day(s.start_ts)).or_default() += 1;
    }
    devices
        .into_iter()
        .map(|(day, d)| DailyCount { day, devices: d.len(), stops: stops.get(&day).copied().unwrap_or(0) })
        .collect()
}

/// Stops by UTC hour of their start.
pub fn hourly_stop_histogram(labeled: &[LabeledPing]) -> [usize; 24] {
    let mut h = [0; 24];
    for s in stops_from_labels(labeled) {
        let t = chrono::DateTime::from_timestamp(s.start_ts, 0).expect("timestamp in range");
        h[t.hour() as usize] += 1;
    }
    h
}

pub fn write_daily_counts<W: Write>(out: W, rows: &[DailyCount]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["day", "devices", "stops"])?;
    for r in rows {
        w.write_record([r.day.to_string(), r.devices.to_string(), r.stops.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_hourly_histogram<W: Write>(out: W, hist: &[usize; 24]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["hour", "stops"])?;
    for (h, c) in hist.iter().enumerate() {
        w.write_record([h.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
