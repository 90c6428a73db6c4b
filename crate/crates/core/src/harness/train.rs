use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::report::{GridCell, GridReport};
use super::TrainConfig;
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{bucketed_accuracy_at, BucketSample, ConfusionCounts, BUCKET_THRESHOLDS_UM};
use crate::model::{Model, ModelConfig};
use crate::nn::{Activation, Mode};
use crate::optim::{adam_step, AdamState};
use crate::wavegen::{read_dataset, Dataset, WaveSample, STEPS};

const EVAL_BATCH: usize = 8;

/// Which samples a reported metric was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub samples: usize,
    pub counts: ConfusionCounts,
    pub dsc: f64,
    pub accuracy: f64,
    /// Detection accuracy for cracks wider than 0..4 µm; `None` for empty buckets.
    pub buckets: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub activation: String,
    pub loss: String,
    pub split: Split,
    pub evaluation: Evaluation,
    pub final_train_loss: f64,
    pub loss_curve: Vec<f64>,
    pub wall_time_secs: f64,
    pub param_count: usize,
    pub train_indices: Vec<usize>,
    pub eval_indices: Vec<usize>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub result: ExperimentResult,
}

/// Reads `path` decimated to the model's temporal length.
pub fn load_dataset_for(model: &ModelConfig, path: &Path) -> Result<Dataset> {
    let t = model.temporal_len;
    if t == 0 || !STEPS.is_multiple_of(t) {
        return Err(Error::invalid(format!("temporal_len {t} must divide the {STEPS} recorded steps")));
    }
    read_dataset(path, STEPS / t)
}

/// Seeded shuffle, then the first `round(n·fraction)` indices (at least one)
/// train and the rest are held out. Both halves come back sorted.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64 * fraction).round() as usize).clamp(1.min(n), n);
    let mut train = idx[..k].to_vec();
    let mut held = idx[k..].to_vec();
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

fn check_dims(model: &Model, data: &Dataset) -> Result<()> {
    let c = model.config();
    if data.steps != c.temporal_len {
        return Err(Error::shape(
            "evaluate",
            format!("dataset has {} steps, model expects {}", data.steps, c.temporal_len),
        ));
    }
    if let Some(s) = data.samples.first() {
        if s.mask.len() != c.output_len {
            return Err(Error::shape(
                "evaluate",
                format!("mask of {} pixels, model emits {}", s.mask.len(), c.output_len),
            ));
        }
    }
    Ok(())
}

/// Metrics of given per-sample probabilities against their samples.
pub fn evaluate_predictions(predictions: &[Vec<f64>], samples: &[&WaveSample], threshold: f64) -> Result<Evaluation> {
    if predictions.len() != samples.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} predictions for {} samples", predictions.len(), samples.len()),
        ));
    }
    let mut counts = ConfusionCounts::default();
    let mut bucket = Vec::with_capacity(samples.len());
    for (p, s) in predictions.iter().zip(samples) {
        counts += ConfusionCounts::from_predictions_at(p, &s.mask, threshold)?;
        bucket.push(BucketSample {
            prediction: p,
            mask: &s.mask,
            min_width_um: s.min_width_um(),
        });
    }
    Ok(Evaluation {
        samples: samples.len(),
        counts,
        dsc: counts.dsc(),
        accuracy: counts.accuracy(),
        buckets: bucketed_accuracy_at(&bucket, &BUCKET_THRESHOLDS_UM, threshold)?,
    })
}

/// Eval-mode metrics of `model` over the listed samples.
pub fn evaluate(model: &Model, data: &Dataset, indices: &[usize], threshold: f64) -> Result<Evaluation> {
    check_dims(model, data)?;
    if let Some(&i) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::invalid(format!("sample {i} out of range for {} samples", data.len())));
    }
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let out = model.predict(&data.batch_input(chunk)?)?;
        preds.extend(out.data().chunks(model.config().output_len).map(<[f64]>::to_vec));
    }
    let samples: Vec<&WaveSample> = indices.iter().map(|&i| &data.samples[i]).collect();
    evaluate_predictions(&preds, &samples, threshold)
}

/// Loads the configured dataset and trains on it.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let path = cfg.data.as_deref().ok_or_else(|| Error::invalid("no dataset path configured"))?;
    let data = load_dataset_for(&cfg.model, path)?;
    train_on(cfg, &data)
}

/// Adam on the training split, checkpointing every `eval_every` epochs and
/// at the end, then evaluation on the held-out split (or on the training
/// split when nothing is held out).
pub fn train_on(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut model = Model::new(cfg.model.clone())?;
    check_dims(&model, data)?;
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let (train_idx, eval_idx) = split_indices(data.len(), cfg.train_fraction, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = AdamState::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let g = Graph::new();
            let x = data.batch_input(batch)?;
            let xv = g.constant(x.shape().to_vec(), x.data().to_vec())?;
            let f = model.forward(&g, xv, Mode::Train)?;
            let loss = cfg.loss.loss(f.output, &data.batch_target(batch))?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    config: cfg.summary(),
                });
            }
            total += value * batch.len() as f64;
            let grads = g.backward(loss)?;
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate_grads(&grads, &f.params)?;
            adam_step(params.tensors_mut(), &mut adam)?;
            model.apply_bn_updates(&f.bn_updates)?;
        }
        curve.push(total / order.len() as f64);
        if let Some(path) = &cfg.checkpoint {
            let last = epoch + 1 == cfg.epochs;
            if last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
                model.save(path)?;
            }
        }
    }
    let (split, on) = if eval_idx.is_empty() {
        (Split::Train, &train_idx)
    } else {
        (Split::Validation, &eval_idx)
    };
    let evaluation = evaluate(&model, data, on, cfg.threshold)?;
    let result = ExperimentResult {
        activation: cfg.model.activation.label().to_string(),
        loss: cfg.loss.kind.label().to_string(),
        split,
        evaluation,
        final_train_loss: *curve.last().expect("epochs ≥ 1"),
        loss_curve: curve,
        wall_time_secs: start.elapsed().as_secs_f64(),
        param_count: model.param_count(),
        train_indices: train_idx,
        eval_indices: eval_idx,
    };
    Ok(TrainOutcome { model, result })
}

/// Trains every activation × loss pair from `base` on `data`. A failing cell
/// is recorded and the others still run. Cells are independent replicas, so
/// the result does not depend on scheduling.
pub fn grid(base: &TrainConfig, data: &Dataset) -> GridReport {
    let pairs: Vec<(Activation, LossKind)> = Activation::ALL
        .iter()
        .flat_map(|&a| GRID_LOSSES.iter().map(move |&l| (a, l)))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(a, l)| {
            let mut cfg = base.clone();
            cfg.model.activation = a;
            cfg.loss.kind = l;
            cfg.checkpoint = None;
            GridCell {
                activation: a.label().to_string(),
                loss: l.label().to_string(),
                outcome: train_on(&cfg, data).map(|o| o.result).map_err(|e| e.to_string()),
            }
        })
        .collect();
    GridReport { cells }
}

/// Row order within each activation block.
const GRID_LOSSES: [LossKind; 4] = [
    LossKind::Focal,
    LossKind::Dice,
    LossKind::WeightedDice,
    LossKind::CombinedWeightedDice,
];
