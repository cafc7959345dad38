//! Mini-batch Adam training keyed to a monitored validation metric.
//!
//! The same metric drives plateau learning-rate halving, early stopping and
//! best-checkpoint selection.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::SentimentLabel;
use crate::metrics::{self, ConfusionMatrix, Metric, MetricsReport};
use crate::nets::save_checkpoint;
use crate::nets::Tensor;
use crate::nets::{cross_entropy, Mode, ModelGraph};
use crate::{Error, Result};

/// Validation metric to maximize.
pub type MonitorCriterion = Metric;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Batch size used for evaluation passes; it has no effect on results.
const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            factor: 0.5,
            patience: 5,
            min_delta: 1e-4,
            min_lr: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Improvement threshold for early stopping.
    pub early_stop_min_delta: f64,
    pub seed: u64,
    pub monitor: MonitorCriterion,
    pub scheduler: SchedulerConfig,
    pub scheduler_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            early_stop_patience: 10,
            early_stop_min_delta: 1e-4,
            seed: 0,
            monitor: Metric::Ua,
            scheduler: SchedulerConfig::default(),
            scheduler_enabled: true,
        }
    }
}

impl TrainConfig {
    /// Defaults for the text model: identical except the scheduler is off.
    pub fn text_default() -> Self {
        TrainConfig {
            scheduler_enabled: false,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scheduler;
        if !(s.factor > 0.0 && s.factor < 1.0) {
            return Err(Error::invalid(format!(
                "scheduler factor {} must lie in (0, 1)",
                s.factor
            )));
        }
        if !(self.initial_lr > 0.0) || !(s.min_lr >= 0.0) || s.min_lr > self.initial_lr {
            return Err(Error::invalid(
                "learning rates must satisfy 0 <= min_lr <= initial_lr, initial_lr > 0",
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 || s.patience == 0 {
            return Err(Error::invalid(
                "batch_size, max_epochs and patience values must be positive",
            ));
        }
        if self.early_stop_patience < s.patience {
            return Err(Error::invalid(format!(
                "early_stop_patience {} is below scheduler patience {}",
                self.early_stop_patience, s.patience
            )));
        }
        if !(s.min_delta >= 0.0) || !(self.early_stop_min_delta >= 0.0) {
            return Err(Error::invalid("min_delta must be non-negative"));
        }
        Ok(())
    }
}

/// Adam moment estimates for every trainable tensor, in graph order.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

/// One bias-corrected Adam update of a flat parameter vector. `step` is the
/// 1-based count of updates including this one.
pub fn adam_update(values: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64) {
    let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..values.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        values[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
}

/// Applies one Adam step to every trainable parameter of `graph`.
pub fn adam_step(graph: &mut ModelGraph, state: &mut AdamState, lr: f64) {
    let mut params: Vec<_> = graph.params_mut().into_iter().filter(|p| p.trainable).collect();
    if state.first.len() != params.len() {
        state.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        state.second = state.first.clone();
        state.step = 0;
    }
    state.step += 1;
    for (i, p) in params.iter_mut().enumerate() {
        let p = &mut **p;
        adam_update(
            &mut p.value,
            &p.grad,
            &mut state.first[i],
            &mut state.second[i],
            state.step,
            lr,
        );
    }
}

/// Reduce-on-plateau learning-rate schedule (maximization).
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    config: SchedulerConfig,
    lr: f64,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(config: SchedulerConfig, initial_lr: f64) -> Self {
        PlateauScheduler {
            config,
            lr: initial_lr,
            best: f64::NEG_INFINITY,
            wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn wait(&self) -> usize {
        self.wait
    }

    /// Observes one epoch's value; returns `true` if the learning rate dropped.
    pub fn step(&mut self, value: f64) -> bool {
        if value > self.best + self.config.min_delta {
            self.best = value;
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        if self.wait > self.config.patience {
            self.wait = 0;
            let next = (self.lr * self.config.factor).max(self.config.min_lr);
            let dropped = next < self.lr;
            self.lr = next;
            return dropped;
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    epoch: usize,
    wait: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopper {
            patience,
            min_delta,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            epoch: 0,
            wait: 0,
        }
    }

    /// 1-based epoch of the last counted improvement.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn step(&mut self, value: f64) -> StopDecision {
        self.epoch += 1;
        if value > self.best + self.min_delta {
            self.best = value;
            self.best_epoch = self.epoch;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// Samples of one shape with class indices, stored at single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    data: Vec<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>) -> Self {
        Dataset {
            sample_shape,
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, sample: impl IntoIterator<Item = f64>, label: SentimentLabel) -> Result<()> {
        let before = self.data.len();
        self.data.extend(sample.into_iter().map(|v| v as f32));
        let width: usize = self.sample_shape.iter().product();
        if self.data.len() - before != width {
            self.data.truncate(before);
            return Err(Error::invalid(format!(
                "sample does not have shape {:?}",
                self.sample_shape
            )));
        }
        self.labels.push(label.index());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        self.labels.iter().for_each(|&l| c[l] += 1);
        c
    }

    /// Stacks the given sample indices into a batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let width: usize = self.sample_shape.iter().product();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend(self.data[i * width..(i + 1) * width].iter().map(|&v| v as f64));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::new(shape, data).expect("batch shape")
    }
}

/// Eval-mode logits and penultimate activations for every sample, in order.
pub fn evaluate_dataset(graph: &ModelGraph, data: &Dataset) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<Result<(Vec<usize>, Vec<Vec<f64>>)>> = indices
        .par_chunks(EVAL_BATCH)
        .map(|chunk| {
            let out = graph.evaluate(&data.batch(chunk))?;
            let rows = (0..chunk.len()).map(|i| out.penultimate.sample(i).to_vec()).collect();
            Ok((out.logits.argmax_rows(), rows))
        })
        .collect();
    let mut preds = Vec::with_capacity(data.len());
    let mut feats = Vec::with_capacity(data.len());
    for c in chunks {
        let (p, f) = c?;
        preds.extend(p);
        feats.extend(f);
    }
    Ok((preds, feats))
}

pub fn evaluate_report(graph: &ModelGraph, data: &Dataset) -> Result<MetricsReport> {
    let (preds, _) = evaluate_dataset(graph, data)?;
    let cm = ConfusionMatrix::from_pairs(data.labels().iter().copied().zip(preds))?;
    metrics::report(&cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: MetricsReport,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Number of epochs completed.
    pub epoch: usize,
    /// Learning rate after the last scheduler step.
    pub lr: f64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_value: f64,
    pub stopped_early: bool,
    pub checkpoint: ModelGraph,
}

fn check_sets(graph: &ModelGraph, train: &Dataset, validation: &Dataset) -> Result<()> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::invalid("train and validation sets must be non-empty"));
    }
    for set in [train, validation] {
        if set.sample_shape() != graph.input_shape() {
            return Err(Error::invalid(format!(
                "dataset sample shape {:?} does not match graph input {:?}",
                set.sample_shape(),
                graph.input_shape()
            )));
        }
    }
    let counts = validation.class_counts();
    if let Some(missing) = SentimentLabel::ALL.into_iter().find(|l| counts[l.index()] == 0) {
        return Err(Error::invalid(format!("validation set has no {missing} samples")));
    }
    Ok(())
}

/// Trains `graph` in place and returns the history plus the best checkpoint.
/// Deterministic given the graph, data and `config.seed`.
pub fn train(graph: &mut ModelGraph, train: &Dataset, validation: &Dataset, config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    check_sets(graph, train, validation)?;
    graph.round_to_f32();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::default();
    let mut scheduler = PlateauScheduler::new(config.scheduler.clone(), config.initial_lr);
    let mut stopper = EarlyStopper::new(config.early_stop_patience, config.early_stop_min_delta);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ModelGraph)> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let lr = scheduler.lr();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.batch(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
            graph.zero_grads();
            let out = graph.forward(&batch, Mode::Train, &mut rng)?;
            let (loss, grad) = cross_entropy(&out.logits, &labels)?;
            graph.backward(&grad);
            adam_step(graph, &mut adam, lr);
            graph.round_to_f32();
            loss_sum += loss * chunk.len() as f64;
        }
        graph.clear_caches();
        let report = evaluate_report(graph, validation)?;
        let value = report.get(config.monitor);
        let train_loss = loss_sum / train.len() as f64;
        log::debug!(
            "epoch {epoch}: loss {train_loss:.4} {} {value:.4} lr {lr:e}",
            config.monitor.short_name()
        );
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation: report,
            lr,
        });
        if best.as_ref().map_or(true, |(_, b, _)| value > *b) {
            best = Some((epoch, value, graph.snapshot()));
        }
        if config.scheduler_enabled {
            scheduler.step(value);
        }
        if stopper.step(value) == StopDecision::Stop {
            stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    let (best_epoch, best_value, checkpoint) = best.expect("at least one epoch");
    Ok(TrainRun {
        epoch: history.len(),
        lr: scheduler.lr(),
        history,
        best_epoch,
        best_value,
        stopped_early,
        checkpoint,
    })
}

/// Writes `history.csv` with one row per epoch.
pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::format(path, "history", e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record([
        "epoch",
        "train_loss",
        "WA",
        "UA",
        "neg_recall",
        "pos_recall",
        "neu_recall",
        "lr",
    ])
    .map_err(to_err)?;
    for r in history {
        let v = &r.validation;
        let row = [r.train_loss, v.wa, v.ua, v.neg_recall, v.pos_recall, v.neu_recall, r.lr];
        let mut fields = vec![r.epoch.to_string()];
        fields.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&fields).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads back the learning-rate column and monitored values of a history file.
pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<(usize, f64, [f64; 5], f64)>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, "history", e.to_string()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, format!("row {}", i + 1), e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, format!("row {}", i + 1), format!("bad column {j}")))
        };
        out.push((
            num(0)? as usize,
            num(1)?,
            [num(2)?, num(3)?, num(4)?, num(5)?, num(6)?],
            num(7)?,
        ));
    }
    Ok(out)
}

/// Writes a self-describing run directory: `config.json`, `history.csv` and
/// `best.ckpt`.
pub fn write_run_dir(dir: impl AsRef<Path>, config: &serde_json::Value, run: &TrainRun) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = dir.join("config.json");
    let text = serde_json::to_string_pretty(config).expect("json value serializes");
    std::fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    write_history(dir.join("history.csv"), &run.history)?;
    save_checkpoint(&run.checkpoint, dir.join("best.ckpt"))
}
