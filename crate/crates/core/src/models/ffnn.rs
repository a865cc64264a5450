//! Fully connected network: ReLU hidden layers, one logistic output unit,
//! trained on class-weighted cross-entropy with mini-batch SGD.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{class_weights, ModelKind, Scorer};
use crate::error::{Error, Result};
use crate::features::FeatureTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    He,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FfnnConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub class_weighted: bool,
    pub init: Init,
    pub seed: u64,
}

impl Default for FfnnConfig {
    fn default() -> Self {
        FfnnConfig {
            hidden_layers: 1,
            width: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 20,
            batch_size: 256,
            class_weighted: true,
            init: Init::He,
            seed: 1,
        }
    }
}

impl FfnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("ffnn width, epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("ffnn learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("ffnn momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let w = &self.w[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.b[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ffnn {
    pub columns: Vec<String>,
    pub layers: Vec<Dense>,
    pub config: FfnnConfig,
    /// Mean training loss after each epoch.
    pub loss_history: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy on the logit: -(y ln s + (1-y) ln(1-s)).
fn bce_logit(z: f64, y: bool) -> f64 {
    softplus(z) - if y { z } else { 0.0 }
}

impl Ffnn {
    pub fn new(columns: Vec<String>, config: &FfnnConfig) -> Ffnn {
        let d = columns.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sizes = vec![d];
        sizes.extend(std::iter::repeat_n(config.width, config.hidden_layers));
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|p| {
                let (n_in, n_out) = (p[0], p[1]);
                let w = match config.init {
                    Init::Zero => vec![0.0; n_in * n_out],
                    Init::He => {
                        let normal = Normal::new(0.0, (2.0 / n_in.max(1) as f64).sqrt()).expect("finite std");
                        (0..n_in * n_out).map(|_| normal.sample(&mut rng)).collect()
                    }
                };
                Dense { n_in, n_out, w, b: vec![0.0; n_out] }
            })
            .collect();
        Ffnn { columns, layers, config: *config, loss_history: Vec::new() }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter count");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    /// Output logit and the post-activation of every layer (input first).
    fn forward_trace(&self, x: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let mut acts = vec![x.to_vec()];
        let mut z = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.forward(acts.last().unwrap(), &mut z);
            if k + 1 < self.layers.len() {
                acts.push(z.iter().map(|v| v.max(0.0)).collect());
            }
        }
        (z[0], acts)
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.forward_trace(x).0
    }

    /// Accumulate `scale * dLoss/dparams` for one example into `grad`.
    fn backprop(&self, x: &[f64], y: bool, scale: f64, grad: &mut [f64], offsets: &[usize]) -> f64 {
        let (z, acts) = self.forward_trace(x);
        let loss = bce_logit(z, y);
        let mut delta = vec![scale * (sigmoid(z) - if y { 1.0 } else { 0.0 })];
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let a = &acts[k];
            let off = offsets[k];
            for o in 0..layer.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[off + o * layer.n_in..off + (o + 1) * layer.n_in];
                for (gi, ai) in g.iter_mut().zip(a) {
                    *gi += d * ai;
                }
                grad[off + layer.w.len() + o] += d;
            }
            if k > 0 {
                let mut prev = vec![0.0; layer.n_in];
                for o in 0..layer.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let w = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                    for (p, wi) in prev.iter_mut().zip(w) {
                        *p += d * wi;
                    }
                }
                // ReLU derivative on the previous layer's pre-activation
                for (p, ai) in prev.iter_mut().zip(a) {
                    if *ai <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        loss
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.layers.len());
        let mut k = 0;
        for l in &self.layers {
            off.push(k);
            k += l.n_params();
        }
        off
    }

    /// Weighted mean loss `sum_i w_i l_i / n` over the given rows.
    pub fn loss(&self, table: &FeatureTable, rows: &[usize], class_w: (f64, f64)) -> f64 {
        let n = rows.len() as f64;
        rows.iter()
            .map(|&i| {
                let y = table.labels[i];
                weight(y, class_w) * bce_logit(self.logit(table.row(i)), y)
            })
            .sum::<f64>()
            / n
    }

    /// Analytic gradient of [`Ffnn::loss`] over `rows`.
    pub fn gradient(&self, table: &FeatureTable, rows: &[usize], class_w: (f64, f64)) -> Vec<f64> {
        let mut grad = vec![0.0; self.n_params()];
        let offsets = self.offsets();
        let n = rows.len() as f64;
        for &i in rows {
            let y = table.labels[i];
            self.backprop(table.row(i), y, weight(y, class_w) / n, &mut grad, &offsets);
        }
        grad
    }
}

fn weight(y: bool, class_w: (f64, f64)) -> f64 {
    if y {
        class_w.1
    } else {
        class_w.0
    }
}

impl Scorer for Ffnn {
    fn columns(&self) -> &[String] {
        &self.columns
    }

    fn score_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.logit(row))
    }
}

impl ModelKind for Ffnn {
    const KIND: &'static str = "ffnn";
    fn model_columns(&self) -> &[String] {
        &self.columns
    }
}

/// Train on standardized features. Batches are drawn from a seeded shuffle
/// each epoch; any non-finite batch loss aborts training.
pub fn train_ffnn(table: &FeatureTable, config: &FfnnConfig) -> Result<Ffnn> {
    config.validate()?;
    let class_w = class_weights(&table.labels, config.class_weighted)?;
    let mut net = Ffnn::new(table.columns.clone(), config);
    let offsets = net.offsets();
    let mut velocity = vec![0.0; net.n_params()];
    let mut params = net.params();
    let mut order: Vec<usize> = (0..table.n_rows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut grad = vec![0.0; params.len()];
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, rows) in order.chunks(config.batch_size).enumerate() {
            grad.fill(0.0);
            let scale = 1.0 / rows.len() as f64;
            let mut loss = 0.0;
            for &i in rows {
                let y = table.labels[i];
                let w = weight(y, class_w);
                loss += w * net.backprop(table.row(i), y, w * scale, &mut grad, &offsets);
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch, loss: loss * scale });
            }
            epoch_loss += loss;
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * g;
                *p += *v;
            }
            net.set_params(&params);
        }
        let mean = epoch_loss / table.n_rows() as f64;
        log::debug!("ffnn epoch {epoch}: loss {mean:.6}");
        net.loss_history.push(mean);
    }
    Ok(net)
}
