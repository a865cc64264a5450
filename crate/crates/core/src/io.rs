//! CSV readers and writers for ping, labeled-ping and stop-event files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! parse -> write -> parse reproduces every field bit for bit.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{LabeledPing, Ping, PingId, PointType, StopEvent};

pub const PING_HEADER: [&str; 6] = ["device_id", "timestamp", "lat", "lon", "accuracy_m", "point_type"];
pub const LABELED_HEADER: [&str; 9] = [
    "device_id",
    "timestamp",
    "lat",
    "lon",
    "accuracy_m",
    "point_type",
    "is_stop",
    "stop_id",
    "ping_id",
];
pub const STOP_HEADER: [&str; 8] = [
    "stop_id",
    "device_id",
    "start_ts",
    "end_ts",
    "centroid_lat",
    "centroid_lon",
    "geohash8",
    "member_ping_count",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowErrorPolicy {
    #[default]
    Fail,
    SkipAndCount,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseConfig {
    pub on_error: RowErrorPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Parsed<T> {
    pub rows: Vec<T>,
    pub skipped: Vec<RowIssue>,
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(Error::Row {
            line: 1,
            message: format!("expected header {:?}, found {:?}", expected.join(","), found.iter().collect::<Vec<_>>().join(",")),
        })
    }
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, name: &str) -> std::result::Result<&'a str, String> {
    rec.get(i).ok_or_else(|| format!("missing field {name}"))
}

fn parse_num<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<T, String> {
    let raw = field(rec, i, name)?;
    raw.trim().parse::<T>().map_err(|_| format!("invalid {name}: {raw:?}"))
}

fn ping_from_record(rec: &csv::StringRecord) -> std::result::Result<Ping, String> {
    let device_id = field(rec, 0, "device_id")?.to_string();
    if device_id.is_empty() {
        return Err("empty device_id".into());
    }
    let timestamp: i64 = parse_num(rec, 1, "timestamp")?;
    let lat: f64 = parse_num(rec, 2, "lat")?;
    let lon: f64 = parse_num(rec, 3, "lon")?;
    let accuracy_m: f64 = parse_num(rec, 4, "accuracy_m")?;
    let point_type: PointType = field(rec, 5, "point_type")?.parse().map_err(|e: Error| e.to_string())?;
    Ping::new(device_id, timestamp, lat, lon, accuracy_m, point_type).map_err(|e| e.to_string())
}

fn labeled_from_record(rec: &csv::StringRecord) -> std::result::Result<LabeledPing, String> {
    let ping = ping_from_record(rec)?;
    let is_stop = match field(rec, 6, "is_stop")? {
        "0" => false,
        "1" => true,
        other => return Err(format!("invalid is_stop: {other:?}")),
    };
    let stop_id = field(rec, 7, "stop_id")?;
    let stop_id = match (is_stop, stop_id.is_empty()) {
        (true, false) => Some(stop_id.to_string()),
        (false, true) => None,
        (true, true) => return Err("is_stop=1 requires a stop_id".into()),
        (false, false) => return Err("stop_id must be empty when is_stop=0".into()),
    };
    let ping_id: PingId = parse_num(rec, 8, "ping_id")?;
    Ok(LabeledPing::new(ping_id, ping, stop_id))
}

fn read_rows<R: Read, T>(
    input: R,
    header: &[&str],
    config: &ParseConfig,
    convert: impl Fn(&csv::StringRecord) -> std::result::Result<T, String>,
) -> Result<Parsed<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    check_header(reader.headers()?, header)?;
    let mut out = Parsed { rows: Vec::new(), skipped: Vec::new() };
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let result = if record.len() != header.len() {
            Err(format!("expected {} fields, found {}", header.len(), record.len()))
        } else {
            convert(&record)
        };
        match result {
            Ok(row) => out.rows.push(row),
            Err(message) => match config.on_error {
                RowErrorPolicy::Fail => return Err(Error::Row { line, message }),
                RowErrorPolicy::SkipAndCount => out.skipped.push(RowIssue { line, message }),
            },
        }
    }
    Ok(out)
}

/// Parse a ping CSV. Output is sorted by device, then by the tie-break key.
pub fn parse_pings<R: Read>(input: R, config: &ParseConfig) -> Result<Parsed<Ping>> {
    let mut parsed = read_rows(input, &PING_HEADER, config, ping_from_record)?;
    parsed
        .rows
        .sort_by(|a, b| a.device_id.cmp(&b.device_id).then_with(|| a.tie_break_cmp(b)));
    Ok(parsed)
}

/// Parse a labeled-ping CSV, keeping file order.
pub fn parse_labeled<R: Read>(input: R, config: &ParseConfig) -> Result<Parsed<LabeledPing>> {
    read_rows(input, &LABELED_HEADER, config, labeled_from_record)
}

fn ping_fields(p: &Ping) -> [String; 6] {
    [
        p.device_id.clone(),
        p.timestamp.to_string(),
        p.lat.to_string(),
        p.lon.to_string(),
        p.accuracy_m.to_string(),
        p.point_type.as_str().to_string(),
    ]
}

pub fn write_pings<W: Write>(out: W, pings: &[Ping]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PING_HEADER)?;
    for p in pings {
        w.write_record(ping_fields(p))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labeled<W: Write>(out: W, pings: &[LabeledPing]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LABELED_HEADER)?;
    for lp in pings {
        let [a, b, c, d, e, f] = ping_fields(&lp.ping);
        w.write_record([
            a,
            b,
            c,
            d,
            e,
            f,
            if lp.is_stop { "1" } else { "0" }.to_string(),
            lp.stop_id.clone().unwrap_or_default(),
            lp.ping_id.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn stop_fields(s: &StopEvent) -> [String; 8] {
    [
        s.stop_id.clone(),
        s.device_id.clone(),
        s.start_ts.to_string(),
        s.end_ts.to_string(),
        s.centroid_lat.to_string(),
        s.centroid_lon.to_string(),
        s.geohash8.clone(),
        s.member_ping_count.to_string(),
    ]
}

pub fn write_stops<W: Write>(out: W, stops: &[StopEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STOP_HEADER)?;
    for s in stops {
        w.write_record(stop_fields(s))?;
    }
    w.flush()?;
    Ok(())
}

fn stop_from_record(rec: &csv::StringRecord) -> std::result::Result<StopEvent, String> {
    let stop = StopEvent {
        stop_id: field(rec, 0, "stop_id")?.to_string(),
        device_id: field(rec, 1, "device_id")?.to_string(),
        start_ts: parse_num(rec, 2, "start_ts")?,
        end_ts: parse_num(rec, 3, "end_ts")?,
        centroid_lat: parse_num(rec, 4, "centroid_lat")?,
        centroid_lon: parse_num(rec, 5, "centroid_lon")?,
        geohash8: field(rec, 6, "geohash8")?.to_string(),
        member_ping_count: parse_num(rec, 7, "member_ping_count")?,
    };
    if stop.start_ts > stop.end_ts {
        return Err("start_ts after end_ts".into());
    }
    Ok(stop)
}

pub fn read_stops<R: Read>(input: R) -> Result<Vec<StopEvent>> {
    Ok(read_rows(input, &STOP_HEADER, &ParseConfig::default(), stop_from_record)?.rows)
}
