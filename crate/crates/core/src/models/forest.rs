//! Bagged decision trees over binned features, split by class-weighted Gini.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{class_weights, ModelKind, Scorer};
use crate::error::{Error, Result};
use crate::features::FeatureTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means ceil(sqrt(d)).
    pub mtry: Option<usize>,
    pub max_bins: usize,
    pub class_weighted: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 200, max_depth: 12, min_leaf: 5, mtry: None, max_bins: 256, class_weighted: true, seed: 1 }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::Config("forest n_trees, max_depth and min_leaf must be positive".into()));
        }
        if !(2..=256).contains(&self.max_bins) {
            return Err(Error::Config("forest max_bins must be in 2..=256".into()));
        }
        if self.mtry == Some(0) {
            return Err(Error::Config("forest mtry must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Build from an explicit node list rooted at index 0. Every node must be
    /// reachable exactly once and every leaf value must lie in [0, 1].
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Tree> {
        if nodes.is_empty() {
            return Err(Error::ModelFormat("tree has no nodes".into()));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= nodes.len() || seen[i] {
                return Err(Error::ModelFormat(format!("node {i} is out of range or shared")));
            }
            seen[i] = true;
            match nodes[i] {
                Node::Split { left, right, threshold, .. } => {
                    if threshold.is_nan() {
                        return Err(Error::ModelFormat(format!("node {i} has a NaN threshold")));
                    }
                    stack.push(left);
                    stack.push(right);
                }
                Node::Leaf { value } => {
                    if !(0.0..=1.0).contains(&value) {
                        return Err(Error::ModelFormat(format!("leaf {i} value {value} outside [0, 1]")));
                    }
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::ModelFormat(format!("node {i} is unreachable")));
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split { feature, threshold, left, right } => i = if row[feature] <= threshold { left } else { right },
                Node::Leaf { value } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub columns: Vec<String>,
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
}

impl Forest {
    pub fn from_trees(columns: Vec<String>, trees: Vec<Tree>, config: ForestConfig) -> Forest {
        Forest { columns, trees, config }
    }
}

impl Scorer for Forest {
    fn columns(&self) -> &[String] {
        &self.columns
    }

    fn score_row(&self, row: &[f64]) -> f64 {
        // Fixed-point accumulation keeps the mean independent of tree order.
        const SCALE: f64 = (1u64 << 53) as f64;
        let sum: u128 = self.trees.iter().map(|t| (t.predict(row) * SCALE).round() as u128).sum();
        (sum as f64 / SCALE / self.trees.len() as f64).clamp(0.0, 1.0)
    }
}

impl ModelKind for Forest {
    const KIND: &'static str = "forest";
    fn model_columns(&self) -> &[String] {
        &self.columns
    }
}

/// Candidate thresholds: midpoints of consecutive distinct values, or evenly
/// spaced order statistics when there are too many distinct values.
fn cut_points(column: &[f64], max_bins: usize) -> Vec<f64> {
    let mut v: Vec<f64> = column.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() <= max_bins {
        return v.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect();
    }
    let mut sorted: Vec<f64> = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..max_bins).map(|q| sorted[(q * n / max_bins).min(n - 1)]).collect();
    cuts.dedup();
    // x <= max never separates anything
    if cuts.last() == sorted.last() {
        cuts.pop();
    }
    cuts
}

struct Binned {
    /// Column-major bin indices.
    bins: Vec<Vec<u8>>,
    cuts: Vec<Vec<f64>>,
}

fn bin_table(table: &FeatureTable, max_bins: usize) -> Binned {
    let (bins, cuts) = (0..table.n_cols())
        .into_par_iter()
        .map(|j| {
            let col = table.column(j);
            let cuts = cut_points(&col, max_bins);
            let bins = col.iter().map(|&x| cuts.partition_point(|&c| c < x) as u8).collect();
            (bins, cuts)
        })
        .unzip();
    Binned { bins, cuts }
}

struct Grower<'a> {
    binned: &'a Binned,
    labels: &'a [bool],
    class_w: (f64, f64),
    config: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy)]
struct Stats {
    w_neg: f64,
    w_pos: f64,
    count: usize,
}

impl Stats {
    const ZERO: Stats = Stats { w_neg: 0.0, w_pos: 0.0, count: 0 };

    fn add(&mut self, other: &Stats) {
        self.w_neg += other.w_neg;
        self.w_pos += other.w_pos;
        self.count += other.count;
    }

    fn weight(&self) -> f64 {
        self.w_neg + self.w_pos
    }

    /// Weight times Gini impurity.
    fn weighted_gini(&self) -> f64 {
        let w = self.weight();
        if w <= 0.0 {
            return 0.0;
        }
        2.0 * self.w_neg * self.w_pos / w
    }
}

impl Grower<'_> {
    fn stats(&self, rows: &[(u32, u32)]) -> Stats {
        let mut s = Stats::ZERO;
        for &(r, mult) in rows {
            let w = mult as f64 * if self.labels[r as usize] { self.class_w.1 } else { self.class_w.0 };
            if self.labels[r as usize] {
                s.w_pos += w;
            } else {
                s.w_neg += w;
            }
            s.count += mult as usize;
        }
        s
    }

    fn leaf(&mut self, s: &Stats) -> usize {
        let w = s.weight();
        let value = if w > 0.0 { (s.w_pos / w).clamp(0.0, 1.0) } else { 0.5 };
        self.nodes.push(Node::Leaf { value });
        self.nodes.len() - 1
    }

    /// Best (feature, bin) by impurity decrease, or None.
    fn best_split(&self, rows: &[(u32, u32)], total: &Stats, rng: &mut ChaCha8Rng) -> Option<(usize, usize)> {
        let d = self.binned.bins.len();
        let features = sample(rng, d, self.mtry.min(d));
        let parent = total.weighted_gini();
        let mut best: Option<(f64, usize, usize)> = None;
        let mut hist = vec![Stats::ZERO; 256];
        for f in features.iter() {
            let n_bins = self.binned.cuts[f].len() + 1;
            if n_bins < 2 {
                continue;
            }
            hist[..n_bins].fill(Stats::ZERO);
            let col = &self.binned.bins[f];
            for &(r, mult) in rows {
                let h = &mut hist[col[r as usize] as usize];
                let w = mult as f64;
                if self.labels[r as usize] {
                    h.w_pos += w * self.class_w.1;
                } else {
                    h.w_neg += w * self.class_w.0;
                }
                h.count += mult as usize;
            }
            let mut left = Stats::ZERO;
            for b in 0..n_bins - 1 {
                left.add(&hist[b]);
                if left.count < self.config.min_leaf {
                    continue;
                }
                let right = Stats { w_neg: total.w_neg - left.w_neg, w_pos: total.w_pos - left.w_pos, count: total.count - left.count };
                if right.count < self.config.min_leaf {
                    break;
                }
                let gain = parent - left.weighted_gini() - right.weighted_gini();
                if gain > 1e-12 * parent.max(1.0) && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, b));
                }
            }
        }
        best.map(|(_, f, b)| (f, b))
    }

    fn grow(&mut self, rows: Vec<(u32, u32)>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let total = self.stats(&rows);
        let pure = total.w_neg == 0.0 || total.w_pos == 0.0;
        if pure || depth >= self.config.max_depth || total.count < 2 * self.config.min_leaf {
            return self.leaf(&total);
        }
        let Some((feature, bin)) = self.best_split(&rows, &total, rng) else {
            return self.leaf(&total);
        };
        let col = &self.binned.bins[feature];
        let (left_rows, right_rows): (Vec<_>, Vec<_>) = rows.into_iter().partition(|&(r, _)| col[r as usize] as usize <= bin);
        let threshold = self.binned.cuts[feature][bin];
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[me] = Node::Split { feature, threshold, left, right };
        me
    }
}

pub fn train_forest(table: &FeatureTable, config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    let class_w = class_weights(&table.labels, config.class_weighted)?;
    let n = table.n_rows();
    if n > u32::MAX as usize {
        return Err(Error::InvalidInput("too many training rows".into()));
    }
    let d = table.n_cols();
    let binned = bin_table(table, config.max_bins);
    let mtry = config.mtry.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).max(1);
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let mut mult = vec![0u32; n];
            for _ in 0..n {
                mult[rng.random_range(0..n)] += 1;
            }
            let rows: Vec<(u32, u32)> =
                mult.iter().enumerate().filter(|(_, &m)| m > 0).map(|(i, &m)| (i as u32, m)).collect();
            let mut g = Grower { binned: &binned, labels: &table.labels, class_w, config, mtry, nodes: Vec::new() };
            g.grow(rows, 0, &mut rng);
            Tree { nodes: g.nodes }
        })
        .collect();
    Ok(Forest { columns: table.columns.clone(), trees, config: *config })
}
