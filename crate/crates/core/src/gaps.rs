//! Synthetic data reduction: mask the point cloud of a stratified sample of
//! stops, keeping only their first and last member pings.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::Datelike;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{LabeledPing, PingId, PointType, StopEvent};
use crate::quality::utc_day;

/// Which factors partition stops before sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrataKeys {
    pub weekday: bool,
    pub point_type: bool,
    pub persistence: bool,
}

impl Default for StrataKeys {
    fn default() -> Self {
        StrataKeys { weekday: true, point_type: true, persistence: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stratum {
    pub weekday: Option<u8>,
    pub point_type: Option<PointType>,
    pub persistence_tercile: Option<u8>,
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wd = self.weekday.map_or("*".to_string(), |w| w.to_string());
        let pt = self.point_type.map_or("*", |p| p.as_str());
        let tc = self.persistence_tercile.map_or("*".to_string(), |t| t.to_string());
        write!(f, "wd{wd}|{pt}|t{tc}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedStop {
    pub stop_id: String,
    pub stratum: String,
    pub retained: Vec<PingId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapPlan {
    pub masked: Vec<MaskedStop>,
    pub fraction: f64,
    pub seed: u64,
    pub keys: StrataKeys,
    /// stratum -> (stops in stratum, stops masked)
    pub strata: BTreeMap<String, (usize, usize)>,
}

impl GapPlan {
    pub fn masked_ids(&self) -> HashSet<&str> {
        self.masked.iter().map(|m| m.stop_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Positive {
    pub ping_id: PingId,
    pub stop_id: String,
}

/// Tercile (0..=2) of each device's active-day count, ranked ascending.
pub fn persistence_terciles(labeled: &[LabeledPing]) -> HashMap<String, u8> {
    let mut days: BTreeMap<&str, BTreeSet<chrono::NaiveDate>> = BTreeMap::new();
    for lp in labeled {
        days.entry(lp.ping.device_id.as_str()).or_default().insert(utc_day(lp.ping.timestamp));
    }
    let mut ranked: Vec<(usize, &str)> = days.iter().map(|(d, s)| (s.len(), *d)).collect();
    ranked.sort();
    let n = ranked.len().max(1);
    ranked
        .into_iter()
        .enumerate()
        .map(|(rank, (_, d))| (d.to_string(), ((3 * rank) / n).min(2) as u8))
        .collect()
}

fn members_by_stop(labeled: &[LabeledPing]) -> HashMap<&str, Vec<&LabeledPing>> {
    let mut out: HashMap<&str, Vec<&LabeledPing>> = HashMap::new();
    for lp in labeled {
        if let Some(s) = lp.stop_id.as_deref() {
            out.entry(s).or_default().push(lp);
        }
    }
    for v in out.values_mut() {
        v.sort_by_key(|lp| (lp.ping.timestamp, lp.ping_id));
    }
    out
}

fn dominant_point_type(members: &[&LabeledPing]) -> PointType {
    let mut counts = [0usize; 3];
    for m in members {
        counts[PointType::ALL.iter().position(|p| *p == m.ping.point_type).unwrap()] += 1;
    }
    // Ties go to the earlier variant.
    let best = (0..3).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
    PointType::ALL[best]
}

pub fn retained_members(members: &[&LabeledPing]) -> Vec<PingId> {
    match members.len() {
        0 => Vec::new(),
        1 => vec![members[0].ping_id],
        n => vec![members[0].ping_id, members[n - 1].ping_id],
    }
}

/// Round half away from zero.
fn nearest(x: f64) -> usize {
    x.round().max(0.0) as usize
}

pub fn plan_gaps(stops: &[StopEvent], labeled: &[LabeledPing], fraction: f64, seed: u64, keys: StrataKeys) -> Result<GapPlan> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!("gap fraction {fraction} outside [0, 1]")));
    }
    let members = members_by_stop(labeled);
    for s in stops {
        let found = members.get(s.stop_id.as_str()).map_or(0, Vec::len);
        if found != s.member_ping_count {
            return Err(Error::Integrity(format!(
                "stop {} lists {} members but labels carry {found}",
                s.stop_id, s.member_ping_count
            )));
        }
    }
    let terciles = persistence_terciles(labeled);
    let mut strata: BTreeMap<Stratum, Vec<&StopEvent>> = BTreeMap::new();
    for s in stops {
        let m = members.get(s.stop_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let stratum = Stratum {
            weekday: keys.weekday.then(|| utc_day(s.start_ts).weekday().num_days_from_monday() as u8),
            point_type: keys.point_type.then(|| dominant_point_type(m)),
            persistence_tercile: keys.persistence.then(|| terciles.get(&s.device_id).copied().unwrap_or(0)),
        };
        strata.entry(stratum).or_default().push(s);
    }
    let mut masked = Vec::new();
    let mut sizes = BTreeMap::new();
    for (ordinal, (stratum, mut list)) in strata.into_iter().enumerate() {
        list.sort_by(|a, b| a.stop_id.cmp(&b.stop_id));
        let k = nearest(fraction * list.len() as f64).min(list.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ordinal as u64);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, list.len(), k).into_vec();
        picked.sort_unstable();
        let label = stratum.to_string();
        for idx in picked {
            let s = list[idx];
            let m = members.get(s.stop_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            masked.push(MaskedStop { stop_id: s.stop_id.clone(), stratum: label.clone(), retained: retained_members(m) });
        }
        sizes.insert(label, (list.len(), k));
    }
    masked.sort_by(|a, b| a.stop_id.cmp(&b.stop_id));
    Ok(GapPlan { masked, fraction, seed, keys, strata: sizes })
}

/// Remove every non-retained member of each masked stop. Retained pings keep
/// their stop label and form the positives manifest.
pub fn apply_gaps(labeled: &[LabeledPing], plan: &GapPlan) -> Result<(Vec<LabeledPing>, Vec<Positive>)> {
    let members = members_by_stop(labeled);
    let mut drop: HashSet<PingId> = HashSet::new();
    let mut positives = Vec::new();
    for m in &plan.masked {
        let list = members
            .get(m.stop_id.as_str())
            .ok_or_else(|| Error::Integrity(format!("masked stop {} has no member pings", m.stop_id)))?;
        let ids: HashSet<PingId> = list.iter().map(|lp| lp.ping_id).collect();
        if let Some(bad) = m.retained.iter().find(|id| !ids.contains(id)) {
            return Err(Error::Integrity(format!("ping {bad} is not a member of stop {}", m.stop_id)));
        }
        let keep: HashSet<PingId> = m.retained.iter().copied().collect();
        drop.extend(ids.difference(&keep));
        positives.extend(m.retained.iter().map(|&ping_id| Positive { ping_id, stop_id: m.stop_id.clone() }));
    }
    positives.sort_by_key(|p| p.ping_id);
    let reduced = labeled.iter().filter(|lp| !drop.contains(&lp.ping_id)).cloned().collect();
    Ok((reduced, positives))
}

pub fn write_gap_plan<W: Write>(out: W, plan: &GapPlan) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stop_id", "stratum", "retained_ping_ids"])?;
    for m in &plan.masked {
        let ids: Vec<String> = m.retained.iter().map(|i| i.to_string()).collect();
        w.write_record([m.stop_id.as_str(), m.stratum.as_str(), ids.join(";").as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gap_plan<R: Read>(input: R) -> Result<Vec<MaskedStop>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let retained = if rec[2].is_empty() {
            Vec::new()
        } else {
            rec[2]
                .split(';')
                .map(|s| s.parse::<PingId>().map_err(|_| Error::Row { line, message: format!("bad ping id {s:?}") }))
                .collect::<Result<Vec<_>>>()?
        };
        out.push(MaskedStop { stop_id: rec[0].to_string(), stratum: rec[1].to_string(), retained });
    }
    Ok(out)
}

pub fn write_positives<W: Write>(out: W, positives: &[Positive]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["ping_id", "stop_id"])?;
    for p in positives {
        w.write_record([p.ping_id.to_string(), p.stop_id.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_positives<R: Read>(input: R) -> Result<Vec<Positive>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let ping_id = rec[0].parse().map_err(|_| Error::Row { line, message: "bad ping_id".into() })?;
        out.push(Positive { ping_id, stop_id: rec[1].to_string() });
    }
    Ok(out)
}
