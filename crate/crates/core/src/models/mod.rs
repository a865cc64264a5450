//! Binary stop classifiers with probability outputs.

pub mod ffnn;
pub mod forest;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::model::PingId;

pub use ffnn::{Ffnn, FfnnConfig, Init};
pub use forest::{Forest, ForestConfig, Node, Tree};

pub const FORMAT_VERSION: u32 = 1;

/// Hex sha256 over the newline-joined column names.
pub fn schema_hash(columns: &[String]) -> String {
    let mut h = Sha256::new();
    for (i, c) in columns.iter().enumerate() {
        if i > 0 {
            h.update(b"\n");
        }
        h.update(c.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Error unless `got` equals `expected`, listing every column out of place.
pub fn check_schema(expected: &[String], got: &[String]) -> Result<()> {
    if expected == got {
        return Ok(());
    }
    let mut offending: Vec<String> = got.iter().filter(|c| !expected.contains(c)).cloned().collect();
    offending.extend(expected.iter().filter(|c| !got.contains(c)).map(|c| format!("missing:{c}")));
    if offending.is_empty() {
        offending = got.iter().zip(expected).filter(|(a, b)| a != b).map(|(a, _)| a.clone()).collect();
    }
    Err(Error::Schema { offending })
}

/// Balanced class weights `n / (2 n_c)` as (negative, positive).
pub fn class_weights(labels: &[bool], balanced: bool) -> Result<(f64, f64)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(Error::SingleClass { missing: "positive" });
    }
    if neg == 0 {
        return Err(Error::SingleClass { missing: "negative" });
    }
    if !balanced {
        return Ok((1.0, 1.0));
    }
    let n = labels.len() as f64;
    Ok((n / (2.0 * neg as f64), n / (2.0 * pos as f64)))
}

pub trait Scorer: Sync {
    fn columns(&self) -> &[String];

    /// Probability of the stop class for one row in training column order.
    fn score_row(&self, row: &[f64]) -> f64;

    fn predict_proba(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        check_schema(self.columns(), &table.columns)?;
        Ok((0..table.n_rows()).into_par_iter().map(|i| self.score_row(table.row(i))).collect())
    }
}

pub fn classify(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

pub fn write_predictions<W: Write>(out: W, ping_ids: &[PingId], scores: &[f64], threshold: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["ping_id", "score", "predicted_label"])?;
    for (id, s) in ping_ids.iter().zip(scores) {
        w.write_record([id.to_string(), s.to_string(), if *s >= threshold { "1" } else { "0" }.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<(PingId, f64, bool)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = || Error::Row { line, message: "invalid prediction row".into() };
        out.push((rec[0].parse().map_err(|_| bad())?, rec[1].parse().map_err(|_| bad())?, &rec[2] == "1"));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    schema_hash: String,
    columns: Vec<String>,
    model: T,
}

pub trait ModelKind: Serialize + DeserializeOwned {
    const KIND: &'static str;
    fn model_columns(&self) -> &[String];
}

pub fn save_model<M: ModelKind>(path: &Path, model: &M) -> Result<()> {
    let env = Envelope {
        format_version: FORMAT_VERSION,
        kind: M::KIND.to_string(),
        schema_hash: schema_hash(model.model_columns()),
        columns: model.model_columns().to_vec(),
        model,
    };
    fs::write(path, serde_json::to_vec(&env)?)?;
    Ok(())
}

pub fn load_model<M: ModelKind>(path: &Path) -> Result<M> {
    let bytes = fs::read(path)?;
    let env: Envelope<M> = serde_json::from_slice(&bytes)?;
    if env.format_version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {}", env.format_version)));
    }
    if env.kind != M::KIND {
        return Err(Error::ModelFormat(format!("expected a {} model, found {}", M::KIND, env.kind)));
    }
    if env.schema_hash != schema_hash(&env.columns) || env.columns != env.model.model_columns() {
        return Err(Error::ModelFormat("schema hash does not match the stored columns".into()));
    }
    Ok(env.model)
}

#[cfg(test)]
pub(crate) mod toy {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two columns; label = x0 + x1 > 0 (linearly separable with a margin).
    pub fn separable(n: usize, seed: u64) -> FeatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = FeatureTable::new(vec!["x0".into(), "x1".into()]);
        let mut id = 0;
        while t.n_rows() < n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            if (a + b).abs() < 0.1 {
                continue;
            }
            t.push_row(id, a + b > 0.0, &[a, b]);
            id += 1;
        }
        t
    }
}
