use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{quantiles, Quantiles};
use crate::error::Result;
use crate::geo::haversine_m;
use crate::model::{Ping, StopEvent};

/// Distances of one group of points to their device's nearest stop centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSample {
    pub quantiles: Option<Quantiles>,
    pub total: usize,
    pub sampled: usize,
    /// Points whose device has no stops.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub false_positives: DistanceSample,
    pub true_negatives: DistanceSample,
}

pub fn nearest_stop_distance(p: &Ping, device_stops: &[&StopEvent]) -> Option<f64> {
    device_stops.iter().map(|s| haversine_m(p.position(), s.centroid())).min_by(f64::total_cmp)
}

fn sample_group(points: &[&Ping], by_device: &BTreeMap<&str, Vec<&StopEvent>>, limit: Option<usize>, rng: &mut ChaCha8Rng) -> DistanceSample {
    let picked: Vec<&Ping> = match limit {
        Some(m) if m < points.len() => {
            let mut idx = rand::seq::index::sample(rng, points.len(), m).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| points[i]).collect()
        }
        _ => points.to_vec(),
    };
    let mut excluded = 0;
    let mut d = Vec::with_capacity(picked.len());
    for p in &picked {
        match by_device.get(p.device_id.as_str()).and_then(|s| nearest_stop_distance(p, s)) {
            Some(x) => d.push(x),
            None => excluded += 1,
        }
    }
    DistanceSample { quantiles: quantiles(&d), total: points.len(), sampled: picked.len(), excluded }
}

/// Nearest-stop distance quantiles for false positives (all of them) and a
/// seeded subsample of at most `tn_sample` true negatives.
pub fn fp_distance_quantiles(fp: &[&Ping], tn: &[&Ping], stops: &[StopEvent], tn_sample: usize, seed: u64) -> DistanceReport {
    let mut by_device: BTreeMap<&str, Vec<&StopEvent>> = BTreeMap::new();
    for s in stops {
        by_device.entry(s.device_id.as_str()).or_default().push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DistanceReport {
        false_positives: sample_group(fp, &by_device, None, &mut rng),
        true_negatives: sample_group(tn, &by_device, Some(tn_sample), &mut rng),
    }
}

pub fn write_distance_quantiles<W: Write>(out: W, rows: &[(String, &DistanceReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "group", "min_m", "q25_m", "q50_m", "q75_m", "max_m", "count", "excluded"])?;
    for (model, r) in rows {
        for (group, s) in [("false_positive", &r.false_positives), ("true_negative", &r.true_negatives)] {
            let mut rec = vec![model.clone(), group.to_string()];
            match s.quantiles {
                Some(q) => rec.extend([q.min, q.q25, q.q50, q.q75, q.max].iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), 5)),
            }
            rec.push(s.sampled.to_string());
            rec.push(s.excluded.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
