use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{CorrelationMatrix, DistanceReport, Importance, PrecisionRecall};
use crate::detect::{detect_stops, DetectorParams};
use crate::features::device_orders;
use crate::gaps::Positive;
use crate::model::{LabeledPing, PingId, Trajectory};

/// Recall on masked stops, measured two ways over the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualRecall {
    /// Hits over retained positives in the test split.
    pub retained_basis: f64,
    /// Hits over every original member of the masked stops represented in
    /// the test split; removed members count as misses.
    pub all_members_basis: f64,
    pub hits: usize,
    pub retained_positives: usize,
    pub all_members: usize,
    pub masked_stops: usize,
}

/// `predicted` maps each test ping to its predicted label; pings absent from
/// it are outside the evaluated split.
pub fn dual_recall(predicted: &HashMap<PingId, bool>, positives: &[Positive], member_counts: &HashMap<String, usize>) -> DualRecall {
    let mut hits = 0;
    let mut retained = 0;
    let mut stops: BTreeSet<&str> = BTreeSet::new();
    for p in positives {
        if let Some(&label) = predicted.get(&p.ping_id) {
            retained += 1;
            hits += label as usize;
            stops.insert(&p.stop_id);
        }
    }
    let all_members: usize = stops.iter().map(|s| member_counts.get(*s).copied().unwrap_or(0)).sum();
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    DualRecall {
        retained_basis: ratio(hits, retained),
        all_members_basis: ratio(hits, all_members.max(retained)),
        hits,
        retained_positives: retained,
        all_members,
        masked_stops: stops.len(),
    }
}

/// How many retained points of masked stops the density detector labels as
/// stop members when re-run on the gapped data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecovery {
    pub retained_points: usize,
    pub recovered: usize,
    pub fraction: f64,
    pub stops_detected: usize,
}

pub fn baseline_recovery(gapped: &[LabeledPing], params: &DetectorParams, positives: &[Positive]) -> BaselineRecovery {
    let mut in_stop: HashSet<PingId> = HashSet::new();
    let mut stops_detected = 0;
    for order in device_orders(gapped) {
        let traj = Trajectory {
            device_id: gapped[order[0]].ping.device_id.clone(),
            pings: order.iter().map(|&i| gapped[i].ping.clone()).collect(),
        };
        let det = detect_stops(&traj, params, 0);
        stops_detected += det.stops.len();
        for (k, l) in det.labels.iter().enumerate() {
            if l.is_stop {
                in_stop.insert(gapped[order[k]].ping_id);
            }
        }
    }
    let recovered = positives.iter().filter(|p| in_stop.contains(&p.ping_id)).count();
    let fraction = if positives.is_empty() { 0.0 } else { recovered as f64 / positives.len() as f64 };
    BaselineRecovery { retained_points: positives.len(), recovered, fraction, stops_detected }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub threshold: f64,
    pub test_rows: usize,
    pub auc: f64,
    #[serde(flatten)]
    pub metrics: PrecisionRecall,
    pub masked_recall: DualRecall,
    pub distances: DistanceReport,
    pub importance: Vec<Importance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub models: Vec<ModelReport>,
    pub baseline: BaselineRecovery,
    pub correlation: CorrelationMatrix,
    pub split_counts: BTreeMap<String, usize>,
    pub columns: Vec<String>,
}
