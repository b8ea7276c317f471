//! Training with Adam and two-phase early stopping, plus the class-trial
//! facing decoder API.
//!
//! Phase 1 trains on the training split and tracks the best validation
//! accuracy; after `patience` epochs without improvement the best parameters
//! are restored. Phase 2 continues on train+validation until the validation
//! loss falls to or below the training loss recorded at the phase-1 best
//! epoch, or the epoch budget is exhausted. Inputs are standardized per
//! channel with training-set statistics owned by the model.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ecog_core::dataset::ClassTrial;

use crate::adam::Adam;
use crate::layers::{fd, ff, Float};
use crate::net::{ConvNet, ConvNetConfig, ConvNetError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Phase-1 early-stopping patience, epochs.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 32,
            max_epochs: 500,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainPhase {
    One,
    Two,
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: TrainPhase,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Per-channel standardization fitted on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(trials: &[ClassTrial]) -> Self {
        let n_ch = trials[0].samples.nrows();
        let mut mean = vec![0.0; n_ch];
        let mut count = 0usize;
        for t in trials {
            for ch in 0..n_ch {
                mean[ch] += t.samples.row(ch).sum();
            }
            count += t.samples.ncols();
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; n_ch];
        for t in trials {
            for ch in 0..n_ch {
                for &v in t.samples.row(ch) {
                    var[ch] += (v - mean[ch]) * (v - mean[ch]);
                }
            }
        }
        let std = var
            .into_iter()
            .map(|v| (v / count as f64).sqrt().max(1e-12))
            .collect();
        Standardization { mean, std }
    }

    pub fn apply<F: Float>(&self, trials: &[ClassTrial]) -> Array3<F> {
        let n = trials.len();
        let (c, t) = trials[0].samples.dim();
        let mut out = Array3::zeros((n, c, t));
        for (i, trial) in trials.iter().enumerate() {
            for ch in 0..c {
                let m = self.mean[ch];
                let s = self.std[ch];
                for (ti, &v) in trial.samples.row(ch).iter().enumerate() {
                    out[[i, ch, ti]] = ff((v - m) / s);
                }
            }
        }
        out
    }
}

fn labels_zero_based(trials: &[ClassTrial], n_classes: usize) -> Result<Vec<usize>, ConvNetError> {
    trials
        .iter()
        .map(|t| {
            if t.label == 0 || t.label as usize > n_classes {
                Err(ConvNetError::LabelOutOfRange {
                    label: t.label,
                    n_classes,
                })
            } else {
                Ok(t.label as usize - 1)
            }
        })
        .collect()
}

fn batch_of<F: Float>(x: &Array3<F>, idx: &[usize]) -> Array3<F> {
    let (_, c, t) = x.dim();
    let mut out = Array3::zeros((idx.len(), c, t));
    for (row, &i) in idx.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), row)
            .assign(&x.index_axis(ndarray::Axis(0), i));
    }
    out
}

/// Mean loss and accuracy of the network on a labeled set (eval mode),
/// processed in batches to bound memory.
pub fn evaluate<F: Float>(
    net: &ConvNet<F>,
    x: &Array3<F>,
    labels: &[usize],
    batch_size: usize,
) -> Result<(f64, f64), ConvNetError> {
    let n = x.dim().0;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let probs = net.forward_eval(&batch_of(x, &idx))?;
        for (row, &y) in labels[start..end].iter().enumerate() {
            let p = fd(probs[[row, y]]).max(1e-300);
            loss_sum -= p.ln();
            let pred = crate::train::argmax_row(&probs, row);
            if pred == y {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

pub(crate) fn argmax_row<F: Float>(probs: &Array2<F>, row: usize) -> usize {
    let mut best = 0;
    for j in 1..probs.ncols() {
        if probs[[row, j]] > probs[[row, best]] {
            best = j;
        }
    }
    best
}

fn train_one_epoch<F: Float>(
    net: &mut ConvNet<F>,
    opt: &mut Adam<F>,
    x: &Array3<F>,
    labels: &[usize],
    order: &mut Vec<usize>,
    batch_size: usize,
    shuffle_rng: &mut ChaCha8Rng,
    dropout_rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<f64, ConvNetError> {
    order.shuffle(shuffle_rng);
    let mut loss_sum = 0.0;
    let mut n_batches = 0usize;
    for chunk in order.chunks(batch_size) {
        let xb = batch_of(x, chunk);
        let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let logits = net.forward_train(&xb, dropout_rng)?;
        let (loss, _) = net.backward(&logits, &yb)?;
        if !loss.is_finite() {
            return Err(ConvNetError::NonFiniteLoss { epoch });
        }
        opt.step(net.params());
        loss_sum += loss;
        n_batches += 1;
    }
    Ok(loss_sum / n_batches.max(1) as f64)
}

/// Two-phase training on standardized arrays with 0-based labels.
pub fn train_network<F: Float>(
    net: &mut ConvNet<F>,
    x_train: &Array3<F>,
    y_train: &[usize],
    x_val: &Array3<F>,
    y_val: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>, ConvNetError> {
    if y_train.is_empty() {
        return Err(ConvNetError::EmptyTrainingSet);
    }
    if y_val.is_empty() {
        return Err(ConvNetError::EmptyValidationSet);
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(0);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let mut log = Vec::new();
    let mut opt = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut order: Vec<usize> = (0..y_train.len()).collect();

    // Phase 1: train on the training split, track best validation accuracy.
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_train_loss = f64::INFINITY;
    let mut best_snapshot = net.snapshot();
    for epoch in 1..=cfg.max_epochs {
        let train_loss = train_one_epoch(
            net,
            &mut opt,
            x_train,
            y_train,
            &mut order,
            cfg.batch_size,
            &mut shuffle_rng,
            &mut dropout_rng,
            epoch,
        )?;
        let (val_loss, val_acc) = evaluate(net, x_val, y_val, cfg.batch_size)?;
        log.push(EpochRecord {
            epoch,
            phase: TrainPhase::One,
            train_loss,
            val_loss,
            val_acc,
        });
        if val_acc > best_acc {
            best_acc = val_acc;
            best_epoch = epoch;
            best_train_loss = train_loss;
            best_snapshot = net.snapshot();
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    net.restore(&best_snapshot);

    // Phase 2: continue on train+validation until the validation loss
    // reaches the phase-1 best training loss.
    let n_all = y_train.len() + y_val.len();
    let (_, c, t) = x_train.dim();
    let mut x_all = Array3::zeros((n_all, c, t));
    for i in 0..y_train.len() {
        x_all
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&x_train.index_axis(ndarray::Axis(0), i));
    }
    for i in 0..y_val.len() {
        x_all
            .index_axis_mut(ndarray::Axis(0), y_train.len() + i)
            .assign(&x_val.index_axis(ndarray::Axis(0), i));
    }
    let mut y_all = y_train.to_vec();
    y_all.extend_from_slice(y_val);

    let mut opt = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut order: Vec<usize> = (0..n_all).collect();
    let (val_loss0, _) = evaluate(net, x_val, y_val, cfg.batch_size)?;
    if val_loss0 > best_train_loss {
        for epoch in 1..=cfg.max_epochs {
            let train_loss = train_one_epoch(
                net,
                &mut opt,
                &x_all,
                &y_all,
                &mut order,
                cfg.batch_size,
                &mut shuffle_rng,
                &mut dropout_rng,
                epoch,
            )?;
            let (val_loss, val_acc) = evaluate(net, x_val, y_val, cfg.batch_size)?;
            log.push(EpochRecord {
                epoch,
                phase: TrainPhase::Two,
                train_loss,
                val_loss,
                val_acc,
            });
            if val_loss <= best_train_loss {
                break;
            }
        }
    }
    Ok(log)
}

/// Decoder-facing fitted model: network weights, architecture, training log
/// and input standardization.
pub struct ConvNetModel {
    pub net_cfg: ConvNetConfig,
    pub n_classes: u8,
    pub standardization: Standardization,
    pub log: Vec<EpochRecord>,
    net: ConvNet<f32>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    net_cfg: ConvNetConfig,
    n_classes: u8,
    standardization: Standardization,
    log: Vec<EpochRecord>,
    arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl ConvNetModel {
    /// Predicted 1-based labels and class probabilities; ties break to the
    /// lowest class id.
    pub fn predict(
        &self,
        trials: &[ClassTrial],
    ) -> Result<(Vec<u8>, Vec<Vec<f64>>), ConvNetError> {
        let x: Array3<f32> = self.standardization.apply(trials);
        let n = trials.len();
        let mut labels = Vec::with_capacity(n);
        let mut probabilities = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + 32).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let probs = self.net.forward_eval(&batch_of(&x, &idx))?;
            for row in 0..probs.nrows() {
                let p: Vec<f64> = (0..probs.ncols()).map(|j| probs[[row, j]] as f64).collect();
                let mut best = 0;
                for (j, &v) in p.iter().enumerate().skip(1) {
                    if v > p[best] {
                        best = j;
                    }
                }
                labels.push(best as u8 + 1);
                probabilities.push(p);
            }
            start = end;
        }
        Ok((labels, probabilities))
    }

    /// Serialize to a self-describing JSON checkpoint.
    pub fn to_json(&self) -> String {
        let chk = Checkpoint {
            net_cfg: self.net_cfg.clone(),
            n_classes: self.n_classes,
            standardization: self.standardization.clone(),
            log: self.log.clone(),
            arrays: self.net.state_arrays(),
        };
        serde_json::to_string(&chk).expect("checkpoint serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ConvNetError> {
        let chk: Checkpoint = serde_json::from_str(json)
            .map_err(|e| ConvNetError::MalformedCheckpoint(e.to_string()))?;
        let mut net = ConvNet::<f32>::new(chk.net_cfg.clone(), 0)?;
        net.load_state_arrays(&chk.arrays)?;
        Ok(ConvNetModel {
            net_cfg: chk.net_cfg,
            n_classes: chk.n_classes,
            standardization: chk.standardization,
            log: chk.log,
            net,
        })
    }

    /// Training log as CSV (epoch, phase, train_loss, val_loss, val_acc).
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,phase,train_loss,val_loss,val_acc\n");
        for r in &self.log {
            let phase = match r.phase {
                TrainPhase::One => 1,
                TrainPhase::Two => 2,
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, phase, r.train_loss, r.val_loss, r.val_acc
            ));
        }
        out
    }
}

/// Fit the convolutional decoder on cleaned class-trials.
pub fn fit_convnet(
    train: &[ClassTrial],
    validation: &[ClassTrial],
    n_classes: u8,
    net_cfg: Option<ConvNetConfig>,
    train_cfg: &TrainConfig,
) -> Result<ConvNetModel, ConvNetError> {
    if train.is_empty() {
        return Err(ConvNetError::EmptyTrainingSet);
    }
    if validation.is_empty() {
        return Err(ConvNetError::EmptyValidationSet);
    }
    let (c, t) = train[0].samples.dim();
    let net_cfg = net_cfg.unwrap_or_else(|| ConvNetConfig::standard(c, t, n_classes as usize));
    let standardization = Standardization::fit(train);
    let x_train: Array3<f32> = standardization.apply(train);
    let x_val: Array3<f32> = standardization.apply(validation);
    let y_train = labels_zero_based(train, net_cfg.n_classes)?;
    let y_val = labels_zero_based(validation, net_cfg.n_classes)?;
    let mut net = ConvNet::<f32>::new(net_cfg.clone(), train_cfg.seed)?;
    let log = train_network(&mut net, &x_train, &y_train, &x_val, &y_val, train_cfg)?;
    Ok(ConvNetModel {
        net_cfg,
        n_classes,
        standardization,
        log,
        net,
    })
}
