//! Classification metrics and diagnostics over scored pings.

pub mod distance;
mod report;
mod tables;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use distance::{fp_distance_quantiles, nearest_stop_distance, write_distance_quantiles, DistanceReport, DistanceSample};
pub use report::{baseline_recovery, dual_recall, BaselineRecovery, DualRecall, EvalReport, ModelReport};
pub use tables::{daily_counts, hourly_stop_histogram, write_daily_counts, write_hourly_histogram, DailyCount};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::models::Scorer;

/// Midranks (1-based) of `scores`, ties sharing their average rank.
fn midranks(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j averaged; kept in half-units so the sum stays exact
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve as the Mann-Whitney statistic: the probability
/// that a random positive outranks a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n1 == 0 {
        return Err(Error::SingleClass { missing: "positive" });
    }
    if n0 == 0 {
        return Err(Error::SingleClass { missing: "negative" });
    }
    let ranks = midranks(scores);
    // doubled to stay integral
    let twice_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| 2.0 * r).sum();
    let twice_u = twice_rank_sum - (n1 * (n1 + 1)) as f64;
    Ok(twice_u / 2.0 / (n1 as f64 * n0 as f64))
}

/// (false positive rate, true positive rate) at each distinct score,
/// from the highest threshold down.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64, f64)> {
    let n1 = labels.iter().filter(|&&l| l).count().max(1) as f64;
    let n0 = (labels.len() - labels.iter().filter(|&&l| l).count()).max(1) as f64;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![(f64::INFINITY, 0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        out.push((s, fp / n0, tp / n1));
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// No predicted positives; precision reported as 0.
    pub precision_undefined: bool,
    /// No actual positives; recall reported as 0.
    pub recall_undefined: bool,
    pub confusion: Confusion,
}

pub fn confusion(predicted: &[bool], truth: &[bool]) -> Result<Confusion> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidInput(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    let mut c = Confusion::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn precision_recall(predicted: &[bool], truth: &[bool]) -> Result<PrecisionRecall> {
    Ok(from_confusion(confusion(predicted, truth)?))
}

pub fn from_confusion(c: Confusion) -> PrecisionRecall {
    let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    PrecisionRecall { precision, recall, precision_undefined, recall_undefined, confusion: c }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
    pub count: usize,
}

/// Linear interpolation between the order statistics of `sorted`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        // monotone in q and bounded by the neighbors
        (sorted[lo] + frac * (sorted[hi] - sorted[lo])).clamp(sorted[lo], sorted[hi])
    }
}

pub fn quantiles(values: &[f64]) -> Option<Quantiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Quantiles {
        min: v[0],
        q25: quantile(&v, 0.25),
        q50: quantile(&v, 0.5),
        q75: quantile(&v, 0.75),
        max: v[v.len() - 1],
        count: v.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub columns: Vec<String>,
    /// `None` where a column is constant.
    pub values: Vec<Vec<Option<f64>>>,
    pub constant_columns: Vec<String>,
}

pub fn pearson_matrix(table: &FeatureTable) -> Result<CorrelationMatrix> {
    let n = table.n_rows();
    if n < 2 {
        return Err(Error::InvalidInput("correlation needs at least 2 rows".into()));
    }
    let d = table.n_cols();
    let centered: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let col = table.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            col.into_iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centered.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let constant: Vec<bool> = norms.iter().map(|&s| !(s > 0.0) || !s.is_finite()).collect();
    let mut values = vec![vec![None; d]; d];
    for a in 0..d {
        if constant[a] {
            continue;
        }
        values[a][a] = Some(1.0);
        for b in a + 1..d {
            if constant[b] {
                continue;
            }
            let dot: f64 = centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum();
            let r = (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0);
            values[a][b] = Some(r);
            values[b][a] = Some(r);
        }
    }
    let constant_columns = (0..d).filter(|&j| constant[j]).map(|j| table.columns[j].clone()).collect();
    Ok(CorrelationMatrix { columns: table.columns.clone(), values, constant_columns })
}

pub fn write_correlation<W: std::io::Write>(out: W, m: &CorrelationMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["column".to_string()];
    header.extend(m.columns.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in m.columns.iter().zip(&m.values) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub column: String,
    pub mean_drop: f64,
    pub drops: Vec<f64>,
}

/// AUC drop after shuffling each column, averaged over `repeats` seeded
/// permutations. Ranked by descending mean drop. `max_rows` evaluates a
/// seeded subsample of the rows instead of all of them.
pub fn permutation_importance(
    model: &dyn Scorer,
    table: &FeatureTable,
    repeats: usize,
    seed: u64,
    max_rows: Option<usize>,
) -> Result<Vec<Importance>> {
    let table = match max_rows {
        Some(m) if m < table.n_rows() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows: Vec<usize> = rand::seq::index::sample(&mut rng, table.n_rows(), m).into_vec();
            rows.sort_unstable();
            table.select_rows(&rows)
        }
        _ => table.clone(),
    };
    let base = roc_auc(&model.predict_proba(&table)?, &table.labels)?;
    let mut out = Vec::with_capacity(table.n_cols());
    for j in 0..table.n_cols() {
        let original = table.column(j);
        let mut shuffled = table.clone();
        let mut drops = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((1 + j * repeats + r) as u64);
            let mut col = original.clone();
            col.shuffle(&mut rng);
            for (i, v) in col.into_iter().enumerate() {
                shuffled.set(i, j, v);
            }
            drops.push(base - roc_auc(&model.predict_proba(&shuffled)?, &shuffled.labels)?);
        }
        let mean_drop = if repeats == 0 { 0.0 } else { drops.iter().sum::<f64>() / repeats as f64 };
        out.push(Importance { column: table.columns[j].clone(), mean_drop, drops });
    }
    out.sort_by(|a, b| b.mean_drop.total_cmp(&a.mean_drop));
    Ok(out)
}
