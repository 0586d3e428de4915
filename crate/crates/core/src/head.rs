//! Pixel classifier head: `Linear -> BatchNorm -> ReLU -> Linear -> softmax`.
//!
//! Gradients are written out by hand. All arithmetic runs row by row in a
//! fixed order, so a pixel's prediction is bitwise the same whether it is
//! evaluated alone or inside a batch.

#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Domain};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_HIDDEN: usize = 128;

const CHECKPOINT_MAGIC: &[u8; 8] = b"PXALHEAD";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// hidden x dim
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub norm_gain: Array1<f64>,
    pub norm_bias: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    /// classes x hidden
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradients of the trainable parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub norm_gain: Array1<f64>,
    pub norm_bias: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

pub const GROUP_NAMES: [&str; 6] = ["w1", "b1", "norm_gain", "norm_bias", "w2", "b2"];

impl HeadGrads {
    fn zeros_like(p: &HeadParams) -> Self {
        HeadGrads {
            w1: Array2::zeros(p.w1.raw_dim()),
            b1: Array1::zeros(p.b1.len()),
            norm_gain: Array1::zeros(p.hidden()),
            norm_bias: Array1::zeros(p.hidden()),
            w2: Array2::zeros(p.w2.raw_dim()),
            b2: Array1::zeros(p.b2.len()),
        }
    }

    /// Groups in [`GROUP_NAMES`] order.
    pub fn groups(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.norm_gain.as_slice().unwrap(),
            self.norm_bias.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ]
    }

    fn groups_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.norm_gain.as_slice_mut().unwrap(),
            self.norm_bias.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Mean of `-ln max(p[label], 1e-12)` over the batch.
pub fn cross_entropy(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if probs.nrows() != labels.len() {
        return Err(Error::Contract(format!(
            "{} prediction rows but {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Contract("cross-entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= probs.ncols() {
            return Err(Error::Label(format!(
                "label {y} outside {} classes",
                probs.ncols()
            )));
        }
        total -= probs[[i, y]].max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

struct BatchCache {
    /// Normalized pre-activations, n x hidden.
    xhat: Vec<Vec<f64>>,
    /// Post-ReLU activations (after any dropout), n x hidden.
    act: Vec<Vec<f64>>,
    /// Dropout multipliers (0 or 1/(1-p)), empty when dropout is off.
    drop: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
    batch_stats: bool,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl HeadParams {
    /// Uniform `+-1/sqrt(fan_in)` weights and biases, unit gain, zero shift,
    /// running statistics at (0, 1).
    pub fn init(dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = seed::rng(Domain::HeadInit, &[seed]);
        let a1 = 1.0 / (dim as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let mut u = |a: f64| rng.random_range(-a..=a);
        let w1 = Array2::from_shape_fn((hidden, dim), |_| u(a1));
        let b1 = Array1::from_shape_fn(hidden, |_| u(a1));
        let w2 = Array2::from_shape_fn((classes, hidden), |_| u(a2));
        let b2 = Array1::from_shape_fn(classes, |_| u(a2));
        HeadParams {
            w1,
            b1,
            norm_gain: Array1::ones(hidden),
            norm_bias: Array1::zeros(hidden),
            running_mean: Array1::zeros(hidden),
            running_var: Array1::ones(hidden),
            w2,
            b2,
        }
    }

    pub fn zeros(dim: usize, hidden: usize, classes: usize) -> Self {
        HeadParams {
            w1: Array2::zeros((hidden, dim)),
            b1: Array1::zeros(hidden),
            norm_gain: Array1::zeros(hidden),
            norm_bias: Array1::zeros(hidden),
            running_mean: Array1::zeros(hidden),
            running_var: Array1::ones(hidden),
            w2: Array2::zeros((classes, hidden)),
            b2: Array1::zeros(classes),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn classes(&self) -> usize {
        self.w2.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d, c) = (self.hidden(), self.dim(), self.classes());
        let ok_shapes = self.b1.len() == h
            && self.norm_gain.len() == h
            && self.norm_bias.len() == h
            && self.running_mean.len() == h
            && self.running_var.len() == h
            && self.w2.ncols() == h
            && self.b2.len() == c
            && d > 0
            && c >= 2;
        if !ok_shapes {
            return Err(Error::Contract("inconsistent head parameter shapes".into()));
        }
        if self.running_var.iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err(Error::Contract("running variance must be positive".into()));
        }
        let all = self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.norm_gain)
            .chain(&self.norm_bias)
            .chain(&self.running_mean)
            .chain(&self.running_var)
            .chain(&self.w2)
            .chain(&self.b2);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite head parameter".into()));
        }
        Ok(())
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::Contract(format!(
                "feature dimension {d} does not match head input {}",
                self.dim()
            )));
        }
        Ok(())
    }

    fn pre_activation(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(self.w1.row(j).to_slice().unwrap(), x) + self.b1[j];
        }
    }

    fn logits_from(&self, act: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot(self.w2.row(k).to_slice().unwrap(), act) + self.b2[k];
        }
    }

    /// Inference-mode class probabilities for one feature vector, with
    /// optional dropout on the hidden activation.
    fn infer_row(&self, x: &[f64], dropout: Option<(f64, &mut seed::StreamRng)>) -> Vec<f64> {
        let h = self.hidden();
        let mut act = vec![0.0; h];
        self.pre_activation(x, &mut act);
        for j in 0..h {
            let xhat = (act[j] - self.running_mean[j]) / (self.running_var[j] + BN_EPS).sqrt();
            act[j] = (self.norm_gain[j] * xhat + self.norm_bias[j]).max(0.0);
        }
        if let Some((rate, rng)) = dropout {
            let keep = 1.0 / (1.0 - rate);
            for a in act.iter_mut() {
                *a *= if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                };
            }
        }
        let mut out = vec![0.0; self.classes()];
        self.logits_from(&act, &mut out);
        softmax_in_place(&mut out);
        out
    }

    /// Inference-mode prediction for one pixel.
    pub fn predict_one(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        self.infer_row(x, None)
    }

    /// Inference-mode prediction with a dropout mask drawn from `seed`.
    pub fn predict_dropout(&self, x: &[f64], rate: f64, seed: u64) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        if rate == 0.0 {
            return self.infer_row(x, None);
        }
        let mut rng = seed::rng_from(seed);
        self.infer_row(x, Some((rate, &mut rng)))
    }

    /// Inference-mode predictions for a batch.
    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(features.ncols())?;
        let c = self.classes();
        let mut out = Array2::zeros((features.nrows(), c));
        for (i, row) in features.rows().into_iter().enumerate() {
            let x = row.to_vec();
            let p = self.infer_row(&x, None);
            out.row_mut(i).assign(&Array1::from(p));
        }
        Ok(out)
    }

    /// Forward pass over a batch.
    ///
    /// `Train` normalizes with batch statistics and updates the running
    /// statistics; a single-row batch uses the running statistics instead.
    /// Dropout (when `dropout_rate > 0`) hits the hidden activation only, with
    /// row `i`'s mask drawn from `(seed, i)`.
    pub fn forward(
        &mut self,
        features: ArrayView2<'_, f64>,
        mode: Mode,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Array2<f64>> {
        self.check_dim(features.ncols())?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        let rows: Vec<Vec<f64>> = features.rows().into_iter().map(|r| r.to_vec()).collect();
        match mode {
            Mode::Infer => {
                let mut out = Array2::zeros((rows.len(), self.classes()));
                for (i, x) in rows.iter().enumerate() {
                    let p = if dropout_rate > 0.0 {
                        self.predict_dropout(
                            x,
                            dropout_rate,
                            seed::derive(Domain::Dropout, &[seed, i as u64]),
                        )
                    } else {
                        self.infer_row(x, None)
                    };
                    out.row_mut(i).assign(&Array1::from(p));
                }
                Ok(out)
            }
            Mode::Train => {
                let cache = self.forward_batch(&rows, dropout_rate, seed);
                self.update_running(&cache, rows.len());
                let mut out = Array2::zeros((rows.len(), self.classes()));
                for (i, p) in cache.probs.iter().enumerate() {
                    out.row_mut(i).assign(&Array1::from(p.clone()));
                }
                Ok(out)
            }
        }
    }

    fn forward_batch(&self, rows: &[Vec<f64>], dropout_rate: f64, seed: u64) -> BatchCache {
        let n = rows.len();
        let h = self.hidden();
        let mut pre = vec![vec![0.0; h]; n];
        for (x, p) in rows.iter().zip(pre.iter_mut()) {
            self.pre_activation(x, p);
        }
        let batch_stats = n >= 2;
        let (mean, var) = if batch_stats {
            let mut mean = vec![0.0; h];
            let mut var = vec![0.0; h];
            for j in 0..h {
                let mut s = 0.0;
                for p in &pre {
                    s += p[j];
                }
                mean[j] = s / n as f64;
                let mut v = 0.0;
                for p in &pre {
                    let d = p[j] - mean[j];
                    v += d * d;
                }
                var[j] = v / n as f64;
            }
            (mean, var)
        } else {
            (self.running_mean.to_vec(), self.running_var.to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let mut xhat = vec![vec![0.0; h]; n];
        let mut act = vec![vec![0.0; h]; n];
        let mut drop = Vec::new();
        for i in 0..n {
            for j in 0..h {
                xhat[i][j] = (pre[i][j] - mean[j]) * inv_std[j];
                act[i][j] = (self.norm_gain[j] * xhat[i][j] + self.norm_bias[j]).max(0.0);
            }
        }
        if dropout_rate > 0.0 {
            let keep = 1.0 / (1.0 - dropout_rate);
            for (i, a) in act.iter_mut().enumerate() {
                let mut rng = seed::rng(Domain::Dropout, &[seed, i as u64]);
                let mask: Vec<f64> = (0..h)
                    .map(|_| {
                        if rng.random::<f64>() < dropout_rate {
                            0.0
                        } else {
                            keep
                        }
                    })
                    .collect();
                for (v, m) in a.iter_mut().zip(&mask) {
                    *v *= m;
                }
                drop.push(mask);
            }
        }
        let probs = act
            .iter()
            .map(|a| {
                let mut out = vec![0.0; self.classes()];
                self.logits_from(a, &mut out);
                softmax_in_place(&mut out);
                out
            })
            .collect();
        BatchCache {
            xhat,
            act,
            drop,
            probs,
            inv_std,
            batch_stats,
            mean,
            var,
        }
    }

    fn update_running(&mut self, cache: &BatchCache, n: usize) {
        if !cache.batch_stats {
            return;
        }
        let unbias = n as f64 / (n as f64 - 1.0);
        for j in 0..self.hidden() {
            self.running_mean[j] =
                (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * cache.mean[j];
            self.running_var[j] =
                (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * cache.var[j] * unbias;
        }
    }

    fn backward(&self, rows: &[Vec<f64>], labels: &[usize], cache: &BatchCache) -> HeadGrads {
        let n = rows.len();
        let (h, c) = (self.hidden(), self.classes());
        let mut g = HeadGrads::zeros_like(self);
        let scale = 1.0 / n as f64;
        let mut dxhat = vec![vec![0.0; h]; n];
        for i in 0..n {
            let mut dlogit = cache.probs[i].clone();
            dlogit[labels[i]] -= 1.0;
            for v in dlogit.iter_mut() {
                *v *= scale;
            }
            for k in 0..c {
                g.b2[k] += dlogit[k];
                for j in 0..h {
                    g.w2[[k, j]] += dlogit[k] * cache.act[i][j];
                }
            }
            for j in 0..h {
                if cache.act[i][j] <= 0.0 && cache.drop.is_empty() {
                    continue;
                }
                let bn_out = self.norm_gain[j] * cache.xhat[i][j] + self.norm_bias[j];
                if bn_out <= 0.0 {
                    continue;
                }
                let mut da = 0.0;
                for k in 0..c {
                    da += self.w2[[k, j]] * dlogit[k];
                }
                if !cache.drop.is_empty() {
                    da *= cache.drop[i][j];
                }
                g.norm_gain[j] += da * cache.xhat[i][j];
                g.norm_bias[j] += da;
                dxhat[i][j] = da * self.norm_gain[j];
            }
        }
        let mut dpre = vec![vec![0.0; h]; n];
        for j in 0..h {
            if cache.batch_stats {
                let mut sum = 0.0;
                let mut sum_x = 0.0;
                for i in 0..n {
                    sum += dxhat[i][j];
                    sum_x += dxhat[i][j] * cache.xhat[i][j];
                }
                for i in 0..n {
                    dpre[i][j] = cache.inv_std[j]
                        * scale
                        * (n as f64 * dxhat[i][j] - sum - cache.xhat[i][j] * sum_x);
                }
            } else {
                for i in 0..n {
                    dpre[i][j] = dxhat[i][j] * cache.inv_std[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..h {
                let d = dpre[i][j];
                if d == 0.0 {
                    continue;
                }
                g.b1[j] += d;
                let row = g.w1.row_mut(j).into_slice().unwrap();
                for (w, x) in row.iter_mut().zip(&rows[i]) {
                    *w += d * x;
                }
            }
        }
        g
    }

    /// Train-mode mean cross-entropy (without weight decay) and its gradient.
    /// Does not touch the running statistics.
    pub fn loss_and_grad(
        &self,
        features: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<(f64, HeadGrads)> {
        let rows = self.checked_rows(features, labels)?;
        let cache = self.forward_batch(&rows, 0.0, 0);
        let loss = batch_loss(&cache.probs, labels);
        Ok((loss, self.backward(&rows, labels, &cache)))
    }

    /// Train-mode mean cross-entropy without updating running statistics.
    pub fn train_loss(&self, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        let rows = self.checked_rows(features, labels)?;
        Ok(batch_loss(&self.forward_batch(&rows, 0.0, 0).probs, labels))
    }

    fn checked_rows(
        &self,
        features: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        self.check_dim(features.ncols())?;
        if features.nrows() != labels.len() || labels.is_empty() {
            return Err(Error::Contract(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.classes()) {
            return Err(Error::Label(format!(
                "label {y} outside {} classes",
                self.classes()
            )));
        }
        Ok(features.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Trainable groups in [`GROUP_NAMES`] order.
    pub fn trainable_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.norm_gain.as_slice_mut().unwrap(),
            self.norm_bias.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }

    /// Binary checkpoint: magic, version, `(D, H, C)` as u64, then every
    /// parameter group in declaration order as little-endian f64.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [self.dim(), self.hidden(), self.classes()] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        let groups = [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.norm_gain.as_slice().unwrap(),
            self.norm_bias.as_slice().unwrap(),
            self.running_mean.as_slice().unwrap(),
            self.running_var.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ];
        for g in groups {
            for v in g {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a head checkpoint".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut b8 = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            input.read_exact(&mut b8)?;
            *d = u64::from_le_bytes(b8) as usize;
        }
        let [d, h, c] = dims;
        let mut p = HeadParams::zeros(d, h, c);
        let mut read_into = |dst: &mut [f64]| -> Result<()> {
            for v in dst.iter_mut() {
                input.read_exact(&mut b8)?;
                *v = f64::from_le_bytes(b8);
            }
            Ok(())
        };
        read_into(p.w1.as_slice_mut().unwrap())?;
        read_into(p.b1.as_slice_mut().unwrap())?;
        read_into(p.norm_gain.as_slice_mut().unwrap())?;
        read_into(p.norm_bias.as_slice_mut().unwrap())?;
        read_into(p.running_mean.as_slice_mut().unwrap())?;
        read_into(p.running_var.as_slice_mut().unwrap())?;
        read_into(p.w2.as_slice_mut().unwrap())?;
        read_into(p.b2.as_slice_mut().unwrap())?;
        p.validate()
            .map_err(|e| Error::Format(format!("invalid checkpoint: {e}")))?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

fn batch_loss(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        total -= p[y].max(PROB_FLOOR).ln();
    }
    total / labels.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Cosine annealing half-period, in epochs.
    pub cosine_period: usize,
    pub min_learning_rate: f64,
    /// Iterations without loss improvement before early stopping may trigger.
    pub patience: usize,
    /// Early stopping also requires training accuracy above this.
    pub early_stop_accuracy: f64,
    pub max_iterations: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            batch_size: 5,
            cosine_period: 5,
            min_learning_rate: 1e-6,
            patience: 50,
            early_stop_accuracy: 0.95,
            max_iterations: 5000,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.min_learning_rate];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "learning rates must be positive, weight decay >= 0".into(),
            ));
        }
        if self.batch_size == 0 || self.cosine_period == 0 || self.patience == 0 || self.hidden == 0
        {
            return Err(Error::Config(
                "batch size, cosine period, patience and hidden width must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Cosine-annealed learning rate at `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let t = epoch as f64 / self.cosine_period as f64;
        self.min_learning_rate
            + 0.5 * (self.learning_rate - self.min_learning_rate) * (1.0 + (PI * t).cos())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the lowest full-set loss seen, the initialization included.
    pub params: HeadParams,
    pub loss: f64,
    pub initial_loss: f64,
    pub accuracy: f64,
    pub iterations: usize,
    pub best_iteration: usize,
}

struct Adam {
    m: HeadGrads,
    v: HeadGrads,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &HeadParams) -> Self {
        Adam {
            m: HeadGrads::zeros_like(p),
            v: HeadGrads::zeros_like(p),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut HeadParams, grads: &HeadGrads, lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let gs = grads.groups();
        let ms = self.m.groups_mut();
        let vs = self.v.groups_mut();
        let ps = params.trainable_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.len() {
                let gi = g[i] + weight_decay * p[i];
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * gi;
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Inference-mode loss and accuracy over a labeled set.
pub fn evaluate_fit(params: &HeadParams, rows: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &y) in rows.iter().zip(labels) {
        let p = params.infer_row(x, None);
        loss -= p[y].max(PROB_FLOOR).ln();
        if argmax(&p) == y {
            correct += 1;
        }
    }
    let n = labels.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Trains a freshly initialized head on `(features, labels)`.
///
/// One iteration is one mini-batch step; epochs reshuffle with a seeded
/// permutation and a trailing single-row batch is folded into the previous
/// one. After every step the full labeled set is scored in inference mode.
/// Training stops once the loss has not improved for `patience` iterations
/// while accuracy exceeds `early_stop_accuracy`, or at `max_iterations`.
pub fn train_head(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if labels.is_empty() {
        return Err(Error::Contract(
            "cannot train on an empty labeled set".into(),
        ));
    }
    if features.nrows() != labels.len() {
        return Err(Error::Contract(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if n_classes < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Label(format!(
            "label {y} outside {n_classes} classes"
        )));
    }
    let rows: Vec<Vec<f64>> = features.rows().into_iter().map(|r| r.to_vec()).collect();
    let n = rows.len();
    let mut params = HeadParams::init(features.ncols(), config.hidden, n_classes, config.seed);
    let mut adam = Adam::new(&params);

    let (initial_loss, initial_acc) = evaluate_fit(&params, &rows, labels);
    let mut best = (initial_loss, initial_acc, params.clone(), 0usize);
    let mut since_improve = 0usize;
    let mut iterations = 0usize;
    let mut epoch = 0usize;
    let mut batches: Vec<Vec<usize>> = Vec::new();

    'outer: while iterations < config.max_iterations {
        if batches.is_empty() {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seed::rng(
                Domain::Batches,
                &[config.seed, epoch as u64],
            ));
            batches = order
                .chunks(config.batch_size)
                .map(<[usize]>::to_vec)
                .collect();
            if batches.len() > 1 && batches.last().unwrap().len() == 1 {
                let last = batches.pop().unwrap();
                batches.last_mut().unwrap().extend(last);
            }
            batches.reverse();
        }
        let lr = config.learning_rate_at(epoch);
        while let Some(batch) = batches.pop() {
            let x: Vec<Vec<f64>> = batch.iter().map(|&i| rows[i].clone()).collect();
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let cache = params.forward_batch(&x, 0.0, 0);
            let grads = params.backward(&x, &y, &cache);
            params.update_running(&cache, x.len());
            adam.step(&mut params, &grads, lr, config.weight_decay);
            iterations += 1;

            let (loss, acc) = evaluate_fit(&params, &rows, labels);
            if loss < best.0 {
                best = (loss, acc, params.clone(), iterations);
                since_improve = 0;
            } else {
                since_improve += 1;
            }
            if since_improve >= config.patience && acc > config.early_stop_accuracy {
                break 'outer;
            }
            if iterations >= config.max_iterations {
                break 'outer;
            }
        }
        epoch += 1;
    }

    let (loss, accuracy, params, best_iteration) = best;
    Ok(TrainOutcome {
        params,
        loss,
        initial_loss,
        accuracy,
        iterations,
        best_iteration,
    })
}
