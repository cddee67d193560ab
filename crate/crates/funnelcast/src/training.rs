//! Dataset splitting, the optimization loop, and the evaluation protocol
//! (MSE plus renormalized threshold accuracies at two bands).

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{build_labels, AttributionModel, NUM_CLASSES};
use crate::features::{EncodedJourney, NormMethod};
use crate::ingest::Journey;
use crate::model::{backward, forward, mse_loss, ModelConfig, ModelParams};

/// Threshold band: prediction counts within [lo*k, hi*k] of the actual count.
pub const WIDE_BAND: (f64, f64) = (0.5, 2.0);
pub const TIGHT_BAND: (f64, f64) = (0.8, 1.25);

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("split leaves one side empty (n={n}, fraction={fraction})")]
    DegenerateSplit { n: usize, fraction: f64 },
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Attribution(#[from] crate::attribution::AttributionError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub attribution: AttributionModel,
    pub normalization: NormMethod,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            attribution: AttributionModel::Linear,
            normalization: NormMethod::MinMax,
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 16,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Evaluation-set metrics mirroring the loss/accuracy report grid.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mse: f64,
    pub acc_wide: f64,
    pub acc_tight: f64,
    pub per_class_acc_wide: [f64; NUM_CLASSES],
    pub per_class_acc_tight: [f64; NUM_CLASSES],
    pub n_journeys: usize,
}

/// Partition journeys at user granularity. Validation size is
/// floor(n * val_fraction); deterministic given the seed.
pub fn split_by_user(
    journeys: Vec<Journey>,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<Journey>, Vec<Journey>), TrainError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(TrainError::InvalidConfig("val_fraction must be in (0,1)".into()));
    }
    let n = journeys.len();
    let val_size = (n as f64 * val_fraction).floor() as usize;
    if val_size == 0 || val_size == n {
        return Err(TrainError::DegenerateSplit { n, fraction: val_fraction });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let val_set: std::collections::HashSet<usize> = idx[..val_size].iter().copied().collect();
    let mut train = Vec::with_capacity(n - val_size);
    let mut val = Vec::with_capacity(val_size);
    for (i, j) in journeys.into_iter().enumerate() {
        if val_set.contains(&i) {
            val.push(j);
        } else {
            train.push(j);
        }
    }
    Ok((train, val))
}

pub fn labels_for<F: crate::scalar::Scalar>(
    journey: &EncodedJourney<F>,
    attribution: AttributionModel,
) -> Result<Array2<F>, TrainError> {
    Ok(build_labels::<F>(&journey.class_ids, attribution)?.t)
}

fn corpus_mse(
    params: &ModelParams<f64>,
    journeys: &[EncodedJourney<f64>],
    labels: &[Array2<f64>],
) -> Result<f64, TrainError> {
    let mut sq = 0.0;
    let mut cells = 0usize;
    for (j, t) in journeys.iter().zip(labels) {
        let (preds, _) = forward(params, j)?;
        let c = preds.len();
        sq += mse_loss(&preds, t)? * c as f64;
        cells += c;
    }
    Ok(sq / cells as f64)
}

/// Train with a first-order adaptive-moment optimizer (decay 0.9/0.999,
/// epsilon 1e-8) over mini-batches of journeys. Returns the parameters from
/// the best-validation-loss epoch and the per-epoch (train, val) MSE history.
pub fn train(
    train_set: &[EncodedJourney<f64>],
    val_set: &[EncodedJourney<f64>],
    config: &TrainConfig,
    model_config: ModelConfig,
) -> Result<(ModelParams<f64>, Vec<(f64, f64)>), TrainError> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::InvalidConfig("empty train or val set".into()));
    }

    let train_labels: Vec<Array2<f64>> = train_set
        .iter()
        .map(|j| labels_for(j, config.attribution))
        .collect::<Result<_, _>>()?;
    let val_labels: Vec<Array2<f64>> = val_set
        .iter()
        .map(|j| labels_for(j, config.attribution))
        .collect::<Result<_, _>>()?;

    let mut params = crate::model::init_params::<f64>(model_config, config.seed);
    let n_params = params.to_flat().len();
    let mut flat = params.to_flat();
    let mut m = vec![0.0f64; n_params];
    let mut v = vec![0.0f64; n_params];
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut step = 0usize;

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1 + epoch as u64));
        order.shuffle(&mut rng);

        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let total_cells: usize =
                batch.iter().map(|&i| train_set[i].n_sessions() * NUM_CLASSES).sum();
            let mut grad = vec![0.0f64; n_params];
            for &i in batch {
                let (preds, trace) = forward(&params, &train_set[i])?;
                let loss = mse_loss(&preds, &train_labels[i])?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx });
                }
                let g = backward(&params, &trace, &train_labels[i])?;
                // journey gradients are of the per-journey mean; reweight so
                // the batch gradient matches the batch-cell mean
                let w = (preds.len() as f64) / total_cells as f64;
                for (acc, gi) in grad.iter_mut().zip(g.to_flat()) {
                    *acc += w * gi;
                }
            }

            if let Some(clip) = config.clip_norm {
                let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    let scale = clip / norm;
                    for g in &mut grad {
                        *g *= scale;
                    }
                }
            }

            step += 1;
            let bc1 = 1.0 - beta1.powi(step as i32);
            let bc2 = 1.0 - beta2.powi(step as i32);
            for i in 0..n_params {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                flat[i] -= config.learning_rate * mhat / (vhat.sqrt() + eps);
            }
            params = ModelParams::from_flat(model_config, &flat);
        }

        let train_mse = corpus_mse(&params, train_set, &train_labels)?;
        let val_mse = corpus_mse(&params, val_set, &val_labels)?;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: 0 });
        }
        history.push((train_mse, val_mse));
        if best.as_ref().map_or(true, |(b, _)| val_mse < *b) {
            best = Some((val_mse, flat.clone()));
        }
    }

    let (_, best_flat) = best.expect("at least one epoch ran");
    Ok((ModelParams::from_flat(model_config, &best_flat), history))
}

/// Per-class correctness of predicted event counts at a journey's last
/// session. Predicted count is pred * n_sessions; an actual count k > 0 is
/// correct within [lo*k, hi*k]; k = 0 requires a near-zero prediction
/// (predicted count below lo).
pub fn threshold_accuracy(
    pred_last: &[f64; NUM_CLASSES],
    counts_last: &[u64; NUM_CLASSES],
    n_sessions: usize,
    band: (f64, f64),
) -> [bool; NUM_CLASSES] {
    let (lo, hi) = band;
    let mut out = [false; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let predicted = pred_last[c] * n_sessions as f64;
        let k = counts_last[c] as f64;
        out[c] = if counts_last[c] > 0 {
            lo * k <= predicted && predicted <= hi * k
        } else {
            predicted < lo
        };
    }
    out
}

/// Time-decay variant: the band applies multiplicatively to the time-decay
/// label value itself; a zero label falls back to the near-zero count rule.
fn time_decay_band_check(
    pred: f64,
    t_true: f64,
    n_sessions: usize,
    band: (f64, f64),
) -> bool {
    let (lo, hi) = band;
    if t_true > 0.0 {
        lo * t_true <= pred && pred <= hi * t_true
    } else {
        pred * (n_sessions as f64) < lo
    }
}

/// MSE over every session plus last-session threshold accuracies at both
/// bands, averaged per class over journeys.
pub fn evaluate(
    params: &ModelParams<f64>,
    val_set: &[EncodedJourney<f64>],
    attribution: AttributionModel,
) -> Result<EvalReport, TrainError> {
    if val_set.is_empty() {
        return Err(TrainError::InvalidConfig("empty evaluation set".into()));
    }
    let mut sq = 0.0;
    let mut cells = 0usize;
    let mut correct_wide = [0usize; NUM_CLASSES];
    let mut correct_tight = [0usize; NUM_CLASSES];

    for j in val_set {
        let labels = labels_for(j, attribution)?;
        let (preds, _) = forward(params, j)?;
        sq += mse_loss(&preds, &labels)? * preds.len() as f64;
        cells += preds.len();

        let n = j.n_sessions();
        let mut pred_last = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            pred_last[c] = preds[(n - 1, c)];
        }
        match attribution {
            AttributionModel::Linear => {
                let mut counts = [0u64; NUM_CLASSES];
                for &cid in &j.class_ids {
                    counts[cid] += 1;
                }
                let wide = threshold_accuracy(&pred_last, &counts, n, WIDE_BAND);
                let tight = threshold_accuracy(&pred_last, &counts, n, TIGHT_BAND);
                for c in 0..NUM_CLASSES {
                    correct_wide[c] += usize::from(wide[c]);
                    correct_tight[c] += usize::from(tight[c]);
                }
            }
            AttributionModel::TimeDecay => {
                for c in 0..NUM_CLASSES {
                    let t_true = labels[(n - 1, c)];
                    if time_decay_band_check(pred_last[c], t_true, n, WIDE_BAND) {
                        correct_wide[c] += 1;
                    }
                    if time_decay_band_check(pred_last[c], t_true, n, TIGHT_BAND) {
                        correct_tight[c] += 1;
                    }
                }
            }
        }
    }

    let nj = val_set.len() as f64;
    let per_class = |counts: &[usize; NUM_CLASSES]| {
        let mut out = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            out[c] = counts[c] as f64 / nj;
        }
        out
    };
    let per_class_acc_wide = per_class(&correct_wide);
    let per_class_acc_tight = per_class(&correct_tight);
    Ok(EvalReport {
        mse: sq / cells as f64,
        acc_wide: per_class_acc_wide.iter().sum::<f64>() / NUM_CLASSES as f64,
        acc_tight: per_class_acc_tight.iter().sum::<f64>() / NUM_CLASSES as f64,
        per_class_acc_wide,
        per_class_acc_tight,
        n_journeys: val_set.len(),
    })
}

/// Constant predictor baseline: per-class mean of the training labels.
/// Returns that constant row and its MSE on the given set.
pub fn prevalence_baseline(
    train_set: &[EncodedJourney<f64>],
    eval_set: &[EncodedJourney<f64>],
    attribution: AttributionModel,
) -> Result<([f64; NUM_CLASSES], f64), TrainError> {
    let mut mean = [0.0; NUM_CLASSES];
    let mut rows = 0usize;
    for j in train_set {
        let labels = labels_for(j, attribution)?;
        for r in 0..labels.nrows() {
            for c in 0..NUM_CLASSES {
                mean[c] += labels[(r, c)];
            }
        }
        rows += labels.nrows();
    }
    for v in &mut mean {
        *v /= rows as f64;
    }
    let mut sq = 0.0;
    let mut cells = 0usize;
    for j in eval_set {
        let labels = labels_for(j, attribution)?;
        for r in 0..labels.nrows() {
            for c in 0..NUM_CLASSES {
                let d = mean[c] - labels[(r, c)];
                sq += d * d;
            }
        }
        cells += labels.nrows() * NUM_CLASSES;
    }
    Ok((mean, sq / cells as f64))
}
