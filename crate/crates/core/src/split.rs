//! Temporal train/validation/test split that never cuts a stop in two.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{LabeledPing, PingId, StopEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitSet {
    Train,
    Validation,
    Test,
}

impl SplitSet {
    pub const ALL: [SplitSet; 3] = [SplitSet::Train, SplitSet::Validation, SplitSet::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitSet::Train => "train",
            SplitSet::Validation => "validation",
            SplitSet::Test => "test",
        }
    }
}

impl fmt::Display for SplitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitSet::Train),
            "validation" => Ok(SplitSet::Validation),
            "test" => Ok(SplitSet::Test),
            _ => Err(Error::InvalidInput(format!("unknown split set {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.6, validation: 0.2, test: 0.2 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::InvalidInput("split fractions must be positive".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repair {
    pub stop_id: String,
    pub set: SplitSet,
    /// Timestamp buckets the stop's pings touched beyond its start bucket.
    pub spans_to: SplitSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub assignment: BTreeMap<PingId, SplitSet>,
    pub t_train: i64,
    pub t_val: i64,
    pub repairs: Vec<Repair>,
}

impl DatasetSplit {
    pub fn set_of(&self, id: PingId) -> Option<SplitSet> {
        self.assignment.get(&id).copied()
    }

    pub fn bucket(&self, ts: i64) -> SplitSet {
        bucket(ts, self.t_train, self.t_val)
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in self.assignment.values() {
            c[*s as usize] += 1;
        }
        c
    }
}

fn bucket(ts: i64, t_train: i64, t_val: i64) -> SplitSet {
    if ts < t_train {
        SplitSet::Train
    } else if ts < t_val {
        SplitSet::Validation
    } else {
        SplitSet::Test
    }
}

/// Smallest t with at least `fraction` of the sorted starts strictly before it.
fn reference_time(sorted_starts: &[i64], fraction: f64) -> i64 {
    let n = sorted_starts.len();
    let k = ((fraction * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted_starts[k - 1] + 1
}

pub fn temporal_split(labeled: &[LabeledPing], stops: &[StopEvent], fractions: SplitFractions) -> Result<DatasetSplit> {
    fractions.validate()?;
    if stops.len() < 3 {
        return Err(Error::InvalidInput(format!("temporal split needs at least 3 stops, got {}", stops.len())));
    }
    let mut starts: Vec<i64> = stops.iter().map(|s| s.start_ts).collect();
    starts.sort_unstable();
    let t_train = reference_time(&starts, fractions.train);
    let t_val = reference_time(&starts, fractions.train + fractions.validation).max(t_train);

    let stop_set: HashMap<&str, SplitSet> =
        stops.iter().map(|s| (s.stop_id.as_str(), bucket(s.start_ts, t_train, t_val))).collect();
    let mut latest: BTreeMap<&str, SplitSet> = BTreeMap::new();
    let mut assignment = BTreeMap::new();
    for lp in labeled {
        let by_time = bucket(lp.ping.timestamp, t_train, t_val);
        let set = match lp.stop_id.as_deref() {
            Some(id) => {
                let set = *stop_set
                    .get(id)
                    .ok_or_else(|| Error::Integrity(format!("ping {} refers to unknown stop {id}", lp.ping_id)))?;
                if by_time > set {
                    let e = latest.entry(id).or_insert(by_time);
                    *e = (*e).max(by_time);
                }
                set
            }
            None => by_time,
        };
        if assignment.insert(lp.ping_id, set).is_some() {
            return Err(Error::Integrity(format!("duplicate ping id {}", lp.ping_id)));
        }
    }
    let repairs = latest
        .into_iter()
        .map(|(id, spans_to)| Repair { stop_id: id.to_string(), set: stop_set[id], spans_to })
        .collect();
    Ok(DatasetSplit { assignment, t_train, t_val, repairs })
}

pub fn write_split<W: Write>(mut out: W, split: &DatasetSplit) -> Result<()> {
    writeln!(out, "# t_train={}", split.t_train)?;
    writeln!(out, "# t_val={}", split.t_val)?;
    for r in &split.repairs {
        writeln!(out, "# repaired={} set={} spans_to={}", r.stop_id, r.set, r.spans_to)?;
    }
    writeln!(out, "ping_id,set")?;
    for (id, set) in &split.assignment {
        writeln!(out, "{id},{set}")?;
    }
    Ok(())
}

pub fn read_split<R: BufRead>(input: R) -> Result<DatasetSplit> {
    let mut t_train = None;
    let mut t_val = None;
    let mut repairs = Vec::new();
    let mut assignment = BTreeMap::new();
    let mut seen_header = false;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n as u64 + 1;
        let bad = |m: &str| Error::Row { line: lineno, message: m.to_string() };
        if let Some(comment) = line.strip_prefix("# ") {
            if let Some(v) = comment.strip_prefix("t_train=") {
                t_train = Some(v.parse().map_err(|_| bad("bad t_train"))?);
            } else if let Some(v) = comment.strip_prefix("t_val=") {
                t_val = Some(v.parse().map_err(|_| bad("bad t_val"))?);
            } else if let Some(v) = comment.strip_prefix("repaired=") {
                let mut parts = v.split(' ');
                let stop_id = parts.next().unwrap_or_default().to_string();
                let mut field = |key: &str| -> Result<SplitSet> {
                    parts.next().and_then(|p| p.strip_prefix(key)).ok_or_else(|| bad("bad repair line"))?.parse()
                };
                let set = field("set=")?;
                let spans_to = field("spans_to=")?;
                repairs.push(Repair { stop_id, set, spans_to });
            }
            continue;
        }
        if !seen_header {
            if line != "ping_id,set" {
                return Err(bad("expected header ping_id,set"));
            }
            seen_header = true;
            continue;
        }
        let (id, set) = line.split_once(',').ok_or_else(|| bad("expected ping_id,set"))?;
        assignment.insert(id.parse().map_err(|_| bad("bad ping_id"))?, set.parse()?);
    }
    match (t_train, t_val) {
        (Some(t_train), Some(t_val)) => Ok(DatasetSplit { assignment, t_train, t_val, repairs }),
        _ => Err(Error::InvalidInput("split file lacks t_train/t_val header lines".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{stops_from_labels, Ping, PointType};
    use proptest::prelude::*;

    fn lp(id: u64, ts: i64, stop: Option<String>) -> LabeledPing {
        LabeledPing::new(id, Ping::new("d", ts, 1.0, 1.0, 5.0, PointType::Other).unwrap(), stop)
    }

    /// Stops of `len` seconds (3 pings) starting at the given times, plus a
    /// non-stop ping after each. With `len == 0` no stop can cross a boundary.
    fn corpus(starts: &[i64], len: i64) -> Vec<LabeledPing> {
        let mut out = Vec::new();
        for (k, &s) in starts.iter().enumerate() {
            for (j, off) in [0, len / 2, len].into_iter().enumerate() {
                out.push(lp((k * 10 + j) as u64, s + off, Some(format!("s{k:03}"))));
            }
            out.push(lp((k * 10 + 5) as u64, s + len + 50, None));
        }
        out
    }

    #[test]
    fn ten_stops_six_two_two() {
        let starts: Vec<i64> = (0..10).map(|k| 1000 + k * 1000).collect();
        let labeled = corpus(&starts, 0);
        let stops = stops_from_labels(&labeled);
        let split = temporal_split(&labeled, &stops, SplitFractions::default()).unwrap();
        let mut per_set = [0; 3];
        for s in &stops {
            per_set[split.bucket(s.start_ts) as usize] += 1;
        }
        assert_eq!(per_set, [6, 2, 2]);
        assert!(split.repairs.is_empty());
        assert_eq!(split.t_train, 6001);
        assert_eq!(split.t_val, 8001);
    }

    #[test]
    fn straddler_moves_earlier() {
        let starts: Vec<i64> = (0..10).map(|k| 1000 + k * 1000).collect();
        // t_val = 8001; stop 7 starts at 8000 and lasts 600 s.
        let mut labeled = corpus(&starts, 0);
        labeled.retain(|l| l.stop_id.as_deref() != Some("s007"));
        for (j, off) in [0, 300, 600].into_iter().enumerate() {
            labeled.push(lp(900 + j as u64, 8000 + off, Some("s007".into())));
        }
        let stops = stops_from_labels(&labeled);
        let split = temporal_split(&labeled, &stops, SplitFractions::default()).unwrap();
        assert_eq!(split.t_val, 8001);
        assert_eq!(split.repairs.len(), 1);
        assert_eq!(split.repairs[0].stop_id, "s007");
        for id in 900..903 {
            assert_eq!(split.set_of(id), Some(SplitSet::Validation));
        }
    }

    #[test]
    fn boundary_stop_with_duration_is_repaired() {
        let starts: Vec<i64> = (0..10).map(|k| 1000 + k * 1000).collect();
        let labeled = corpus(&starts, 100);
        let stops = stops_from_labels(&labeled);
        let split = temporal_split(&labeled, &stops, SplitFractions::default()).unwrap();
        let ids: Vec<&str> = split.repairs.iter().map(|r| r.stop_id.as_str()).collect();
        assert_eq!(ids, ["s005", "s007"]);
    }

    #[test]
    fn too_few_stops() {
        let labeled = corpus(&[100, 200], 10);
        let stops = stops_from_labels(&labeled);
        assert!(temporal_split(&labeled, &stops, SplitFractions::default()).is_err());
    }

    #[test]
    fn bad_fractions() {
        let f = SplitFractions { train: 0.7, validation: 0.2, test: 0.2 };
        assert!(f.validate().is_err());
        let f = SplitFractions { train: 1.0, validation: 0.0, test: 0.0 };
        assert!(f.validate().is_err());
    }

    #[test]
    fn file_roundtrip() {
        let starts: Vec<i64> = (0..10).map(|k| 1000 + k * 1000).collect();
        let labeled = corpus(&starts, 3000);
        let stops = stops_from_labels(&labeled);
        let split = temporal_split(&labeled, &stops, SplitFractions::default()).unwrap();
        assert!(!split.repairs.is_empty());
        let mut buf = Vec::new();
        write_split(&mut buf, &split).unwrap();
        assert_eq!(read_split(buf.as_slice()).unwrap(), split);
    }

    proptest! {
        #[test]
        fn partition_and_integrity(gaps in prop::collection::vec(1i64..5000, 100..160), len in 10i64..4000) {
            let mut t = 0;
            let starts: Vec<i64> = gaps.iter().map(|g| { t += g; t }).collect();
            let labeled = corpus(&starts, len);
            let stops = stops_from_labels(&labeled);
            let split = temporal_split(&labeled, &stops, SplitFractions::default()).unwrap();
            prop_assert_eq!(split.assignment.len(), labeled.len());
            let mut sets: BTreeMap<&str, SplitSet> = BTreeMap::new();
            for l in &labeled {
                let set = split.set_of(l.ping_id).unwrap();
                match l.stop_id.as_deref() {
                    Some(id) => prop_assert_eq!(*sets.entry(id).or_insert(set), set),
                    None => prop_assert_eq!(set, split.bucket(l.ping.timestamp)),
                }
            }
            let n = stops.len() as f64;
            let mut per_set = [0f64; 3];
            for set in sets.values() {
                per_set[*set as usize] += 1.0;
            }
            for (c, f) in per_set.iter().zip([0.6, 0.2, 0.2]) {
                prop_assert!((c - f * n).abs() <= 2.0);
            }
        }
    }
}
