//! Epoch loop: seeded shuffling, per-epoch cosine learning rate, AdamW,
//! validation NMSE, early stopping and best-on-validation selection.

use std::time::Instant;

use indexmap::IndexMap;
use neft_tensor::{DType, Element, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelDataset;
use crate::error::{NeftError, Result};
use crate::metrics::{MetricAccumulator, Metrics};
use crate::models::{ForwardMode, ForwardPass, Model};
use crate::optimizer::{AdamW, AdamWConfig};
use crate::schedule::{cosine_lr, EarlyStopConfig, EarlyStopping};

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_DISTILL_LR: f64 = 3e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// `None` disables early stopping.
    pub early_stop: Option<EarlyStopConfig>,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub optimizer: AdamWConfig,
    pub precision: DType,
    /// Adds elapsed seconds to the report (makes reports run-dependent).
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr_max: DEFAULT_LR,
            lr_min: 0.0,
            batch_size: 200,
            seed: 0,
            early_stop: Some(EarlyStopConfig::default()),
            max_steps: None,
            optimizer: AdamWConfig::default(),
            precision: DType::F32,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(NeftError::Config("epochs must be at least 1".into()));
        }
        if !(self.lr_max > self.lr_min && self.lr_min >= 0.0 && self.lr_max.is_finite()) {
            return Err(NeftError::Config(format!("need lr_max > lr_min >= 0, got {} and {}", self.lr_max, self.lr_min)));
        }
        if self.batch_size == 0 {
            return Err(NeftError::Config("batch_size must be at least 1".into()));
        }
        if let Some(es) = self.early_stop {
            EarlyStopping::new(es)?;
        }
        if self.max_steps == Some(0) {
            return Err(NeftError::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Training objective evaluated after the model's forward pass.
pub trait Objective<T: Element> {
    /// Returns the scalar loss and named components for logging; the first
    /// component must be the total.
    fn loss(&mut self, tape: &mut Tape<T>, batch: &Tensor<T>, input: Var, pass: &ForwardPass) -> Result<(Var, Vec<(&'static str, Var)>)>;
}

/// Plain MSE reconstruction.
pub struct Reconstruction;

impl<T: Element> Objective<T> for Reconstruction {
    fn loss(&mut self, tape: &mut Tape<T>, _: &Tensor<T>, input: Var, pass: &ForwardPass) -> Result<(Var, Vec<(&'static str, Var)>)> {
        let rec = tape.mse(pass.reconstruction, input)?;
        Ok((rec, vec![("total", rec), ("rec", rec)]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Per-step means of each loss component.
    pub losses: IndexMap<String, f64>,
    pub val: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    pub best_epoch: Option<usize>,
    pub best_val: Option<Metrics>,
    pub stopped_early_at: Option<usize>,
    /// Set when training aborted on a non-finite loss or gradient.
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome<T: Element> {
    /// Best-on-validation parameters (the initial ones if no epoch finished).
    pub model: Model<T>,
    pub report: TrainReport,
}

impl<T: Element> TrainOutcome<T> {
    pub fn diverged(&self) -> bool {
        self.report.failure.is_some()
    }
}

fn check_data<T: Element>(model: &Model<T>, data: &ChannelDataset, what: &str) -> Result<()> {
    if data.input_shape() != model.config().input_shape {
        return Err(NeftError::Dimension(format!(
            "{what} samples are {:?} but the model expects {:?}",
            data.input_shape(),
            model.config().input_shape
        )));
    }
    if data.is_empty() {
        return Err(NeftError::Domain(format!("{what} set is empty")));
    }
    Ok(())
}

pub fn train<T: Element>(model: Model<T>, train_set: &ChannelDataset, val_set: &ChannelDataset, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(model, train_set, val_set, cfg, &mut Reconstruction)
}

pub fn train_with<T: Element, O: Objective<T>>(
    mut model: Model<T>,
    train_set: &ChannelDataset,
    val_set: &ChannelDataset,
    cfg: &TrainConfig,
    objective: &mut O,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_data(&model, train_set, "training")?;
    check_data(&model, val_set, "validation")?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut opt = AdamW::<T>::new(cfg.optimizer);
    let mut stopper = cfg.early_stop.map(EarlyStopping::new).transpose()?;
    let mut report = TrainReport {
        epochs: Vec::new(),
        steps: 0,
        best_epoch: None,
        best_val: None,
        stopped_early_at: None,
        failure: None,
        wall_time_s: None,
    };
    let mut best_model = model.clone();

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)?;
        order.shuffle(&mut rng);
        let mut sums: IndexMap<String, f64> = IndexMap::new();
        let mut steps = 0;
        let mut capped = false;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                capped = true;
                break;
            }
            let batch = train_set.batch::<T>(chunk);
            match train_step(&mut model, &mut opt, &batch, lr, objective) {
                Ok(parts) => {
                    for (name, v) in parts {
                        *sums.entry(name.to_string()).or_insert(0.0) += v;
                    }
                }
                Err(e @ (NeftError::NonFiniteGradient { .. } | NeftError::Diverged { .. })) => {
                    let detail = match e {
                        NeftError::Diverged { detail, .. } => detail,
                        other => other.to_string(),
                    };
                    let err = NeftError::Diverged { epoch, step: report.steps + 1, detail };
                    report.failure = Some(err.to_string());
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            steps += 1;
            report.steps += 1;
        }
        if steps == 0 {
            break;
        }
        let val = evaluate(&model, val_set, cfg.batch_size)?;
        let losses = sums.into_iter().map(|(k, v)| (k, v / steps as f64)).collect();
        report.epochs.push(EpochRecord { epoch, lr, steps, losses, val });
        if report.best_val.is_none_or(|b| val.nmse_db < b.nmse_db) {
            report.best_val = Some(val);
            report.best_epoch = Some(epoch);
            best_model = model.clone();
        }
        if let Some(s) = stopper.as_mut() {
            if s.observe(epoch, val.nmse_db) {
                report.stopped_early_at = Some(epoch);
                break;
            }
        }
        if capped || cfg.max_steps.is_some_and(|m| report.steps >= m) {
            break;
        }
    }
    if cfg.record_wall_time {
        report.wall_time_s = Some(started.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome { model: best_model, report })
}

/// One optimizer step; returns the loss components.
fn train_step<T: Element, O: Objective<T>>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    batch: &Tensor<T>,
    lr: f64,
    objective: &mut O,
) -> Result<Vec<(&'static str, f64)>> {
    let mut tape = Tape::new();
    let x = tape.constant(batch);
    let pass = model.forward(&mut tape, x, ForwardMode::TRAIN)?;
    let (loss, parts) = objective.loss(&mut tape, batch, x, &pass)?;
    let values: Vec<(&'static str, f64)> = parts.iter().map(|&(n, v)| Ok((n, tape.scalar(v)?.as_f64()))).collect::<Result<_>>()?;
    if let Some((name, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(NeftError::Diverged { epoch: 0, step: 0, detail: format!("loss component `{name}` is {v}") });
    }
    tape.backward(loss)?;
    let grads: IndexMap<String, Vec<T>> = pass
        .params
        .iter()
        .map(|(name, &v)| (name.clone(), tape.grad(v).map_or_else(|| vec![T::zero(); tape.value(v).len()], <[T]>::to_vec)))
        .collect();
    opt.step(model.params_mut(), &grads, lr)?;
    model.update_running_stats(&tape, &pass)?;
    Ok(values)
}

/// Space in which reconstruction quality is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricDomain {
    /// The `[0, 1]` two-channel network representation.
    #[default]
    Normalized,
    /// Real and imaginary parts mapped back through the dataset normalization.
    Denormalized,
}

pub fn evaluate<T: Element>(model: &Model<T>, data: &ChannelDataset, batch_size: usize) -> Result<Metrics> {
    evaluate_in(model, data, batch_size, MetricDomain::Normalized)
}

pub fn evaluate_in<T: Element>(model: &Model<T>, data: &ChannelDataset, batch_size: usize, domain: MetricDomain) -> Result<Metrics> {
    check_data(model, data, "evaluation")?;
    evaluate_with(data, batch_size, domain, |x: &Tensor<T>| Ok(model.infer(x)?.reconstruction))
}

/// Runs `reconstruct` over the dataset in batches and aggregates the metrics.
pub fn evaluate_with<T: Element, F>(data: &ChannelDataset, batch_size: usize, domain: MetricDomain, mut reconstruct: F) -> Result<Metrics>
where
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    if batch_size == 0 {
        return Err(NeftError::Config("batch_size must be at least 1".into()));
    }
    let n = data.sample_len();
    let plane = n / 2;
    let norm = data.norm;
    let map = |v: &[T]| -> Vec<f64> {
        match domain {
            MetricDomain::Normalized => v.iter().map(|x| x.as_f64()).collect(),
            MetricDomain::Denormalized => v
                .chunks_exact(n)
                .flat_map(|s| {
                    let (re, im) = s.split_at(plane);
                    let re = re.iter().map(move |x| norm.min_real + x.as_f64() * (norm.max_real - norm.min_real));
                    let im = im.iter().map(move |x| norm.min_imag + x.as_f64() * (norm.max_imag - norm.min_imag));
                    re.chain(im)
                })
                .collect(),
        }
    };
    let mut acc = MetricAccumulator::new();
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let x = data.batch::<T>(chunk);
        let y = reconstruct(&x)?;
        if y.shape() != x.shape() {
            return Err(NeftError::Dimension(format!("reconstruction shape {:?} differs from input {:?}", y.shape(), x.shape())));
        }
        acc.push(&map(x.data()), &map(y.data()), n)?;
    }
    acc.finish()
}
