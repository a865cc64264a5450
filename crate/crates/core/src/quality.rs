//! Device-quality filter: early activity, active days per month, daily ping volume.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, NaiveDate};

use crate::model::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanBasis {
    /// Mean over days with at least one ping.
    ActiveDays,
    /// Mean over every calendar day of the window.
    CalendarDays,
}

#[derive(Debug, Clone)]
pub struct QualityConfig {
    /// A device must have a ping on or before this date.
    pub activity_start: NaiveDate,
    pub window_start: NaiveDate,
    /// Exclusive.
    pub window_end: NaiveDate,
    pub min_active_days: u32,
    pub min_daily_pings: f64,
    pub mean_basis: MeanBasis,
}

impl QualityConfig {
    pub fn new(window_start: NaiveDate, window_end: NaiveDate) -> Self {
        QualityConfig {
            activity_start: window_start,
            window_start,
            window_end,
            min_active_days: 20,
            min_daily_pings: 200.0,
            mean_basis: MeanBasis::ActiveDays,
        }
    }

    fn window_days(&self) -> i64 {
        (self.window_end - self.window_start).num_days().max(0)
    }

    /// (year, month, days of that month inside the window).
    fn months(&self) -> Vec<(i32, u32, u32)> {
        let mut out: Vec<(i32, u32, u32)> = Vec::new();
        let mut day = self.window_start;
        while day < self.window_end {
            match out.last_mut() {
                Some((y, m, n)) if *y == day.year() && *m == day.month() => *n += 1,
                _ => out.push((day.year(), day.month(), 1)),
            }
            day = day.succ_opt().expect("date overflow");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceQuality {
    pub device_id: String,
    pub active_before_start: bool,
    /// (year, month, active days, required days).
    pub active_days_per_month: Vec<(i32, u32, u32, u32)>,
    pub active_days: u32,
    pub mean_daily_pings: f64,
    pub retained: bool,
}

pub fn utc_day(ts: i64) -> NaiveDate {
    DateTime::from_timestamp(ts, 0).expect("timestamp in chrono range").date_naive()
}

pub fn assess_device(traj: &Trajectory, config: &QualityConfig) -> DeviceQuality {
    let mut per_day: BTreeMap<NaiveDate, u64> = BTreeMap::new();
    let mut active_before_start = false;
    for p in &traj.pings {
        let day = utc_day(p.timestamp);
        if day <= config.activity_start {
            active_before_start = true;
        }
        if day >= config.window_start && day < config.window_end {
            *per_day.entry(day).or_default() += 1;
        }
    }
    let active_days = per_day.len() as u32;
    let total: u64 = per_day.values().sum();
    let denom = match config.mean_basis {
        MeanBasis::ActiveDays => active_days as f64,
        MeanBasis::CalendarDays => config.window_days() as f64,
    };
    let mean_daily_pings = if denom > 0.0 { total as f64 / denom } else { 0.0 };

    let active_days_per_month: Vec<_> = config
        .months()
        .into_iter()
        .map(|(y, m, days_in_window)| {
            let active = per_day.keys().filter(|d| d.year() == y && d.month() == m).count() as u32;
            (y, m, active, config.min_active_days.min(days_in_window))
        })
        .collect();
    let months_ok = !active_days_per_month.is_empty()
        && active_days_per_month.iter().all(|&(_, _, active, required)| active >= required);
    let retained = active_before_start && months_ok && mean_daily_pings >= config.min_daily_pings;
    DeviceQuality {
        device_id: traj.device_id.clone(),
        active_before_start,
        active_days_per_month,
        active_days,
        mean_daily_pings,
        retained,
    }
}

pub fn assess_quality(devices: &BTreeMap<String, Trajectory>, config: &QualityConfig) -> Vec<DeviceQuality> {
    devices.values().map(|t| assess_device(t, config)).collect()
}

/// Devices passing every quality condition.
pub fn apply_quality_filter(devices: &BTreeMap<String, Trajectory>, config: &QualityConfig) -> BTreeSet<String> {
    assess_quality(devices, config)
        .into_iter()
        .filter(|q| q.retained)
        .map(|q| q.device_id)
        .collect()
}
