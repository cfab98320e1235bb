use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fgl_loss_and_grad, FglConfig, PairedDataset, TrainConfig};
use crate::error::{FglError, Result};
use crate::mackey_glass::WindowedDataset;
use crate::metrics;
use crate::neural::loss::{cross_entropy_index, softmax_into};
use crate::neural::rnn::{draw_mask, ForecastModel, ModelConfig, Parameters};
use crate::neural::{AdamConfig, AdamState};
use crate::parallel::{map_chunks, CHUNK_ROWS};
use crate::quantizer::{quantize_index, BinSpec, Readout};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation checkpoint.
    pub model: ForecastModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Training split plus validation split for one student horizon.
#[derive(Debug, Clone, Copy)]
pub struct StudentData<'a> {
    pub train: &'a PairedDataset,
    pub val: &'a PairedDataset,
    pub bins: &'a BinSpec,
}

pub(crate) fn as_matrix(flat: &[f64], width: usize) -> Result<ArrayView2<'_, f64>> {
    ArrayView2::from_shape((flat.len() / width.max(1), width), flat).map_err(|e| FglError::config(e.to_string()))
}

pub(crate) fn labels_for(targets: &[f64], bins: &BinSpec) -> Result<Vec<usize>> {
    targets
        .iter()
        .map(|&x| {
            if x.is_finite() {
                Ok(quantize_index(x, bins))
            } else {
                Err(FglError::domain(format!("non-finite target {x}")))
            }
        })
        .collect()
}

/// Mean cross-entropy of `model` in inference mode.
pub(crate) fn mean_cross_entropy(model: &ForecastModel, inputs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let logits = model.predict_logits(inputs)?;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(z, &y)| cross_entropy_index(z.as_slice().unwrap(), y))
        .sum();
    Ok(total / labels.len() as f64)
}

/// Shared mini-batch loop with early stopping on validation cross-entropy.
///
/// With `teacher_logits` present every sample's loss is the blended
/// distillation loss; without it the loss is plain cross-entropy. The RNG
/// drives initialization, shuffling and dropout, in that order.
#[allow(clippy::too_many_arguments)]
pub fn train_supervised(
    inputs: ArrayView2<f64>,
    labels: &[usize],
    teacher_logits: Option<ArrayView2<f64>>,
    alpha: f64,
    temperature: f64,
    val_inputs: ArrayView2<f64>,
    val_labels: &[usize],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let n = labels.len();
    if n == 0 || val_labels.is_empty() {
        return Err(FglError::EmptyDataset(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if inputs.nrows() != n || val_inputs.nrows() != val_labels.len() {
        return Err(FglError::config("inputs and labels differ in length"));
    }
    if let Some(t) = &teacher_logits {
        if t.dim() != (n, model_cfg.bins) {
            return Err(FglError::config(format!(
                "teacher logits are {:?}, expected ({n}, {})",
                t.dim(),
                model_cfg.bins
            )));
        }
    }
    if labels.iter().chain(val_labels).any(|&y| y >= model_cfg.bins) {
        return Err(FglError::config("label outside bin range"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ForecastModel::new(*model_cfg, &mut rng)?;
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(cfg.lr));
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch {
                inputs,
                labels,
                teacher_logits: teacher_logits.as_ref().map(|t| t.view()),
                alpha,
                temperature,
            };
            let loss = batch_step(&mut model, &mut adam, &batch, idx, &mut rng).map_err(|e| match e {
                FglError::Numeric { .. } | FglError::NonFiniteLoss { .. } => {
                    FglError::NonFiniteLoss { epoch, batch: b }
                }
                other => other,
            })?;
            epoch_loss += loss;
        }

        let val_loss = mean_cross_entropy(&model, val_inputs, val_labels)?;
        if !val_loss.is_finite() {
            return Err(FglError::NonFiniteLoss { epoch, batch: 0 });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / n as f64,
            val_loss,
        });
        if val_loss < best_val - cfg.min_delta {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        best_val_loss: best_val,
    })
}

/// Samples and loss settings for [`batch_step`].
pub(crate) struct Batch<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
    pub teacher_logits: Option<ArrayView2<'a, f64>>,
    pub alpha: f64,
    pub temperature: f64,
}

/// One optimizer update on the rows `idx`; returns the summed loss.
pub(crate) fn batch_step<R: rand::Rng>(
    model: &mut ForecastModel,
    adam: &mut AdamState,
    data: &Batch<'_>,
    idx: &[usize],
    rng: &mut R,
) -> Result<f64> {
    let cfg = model.config;
    let rows = idx.len();
    let lookback = data.inputs.ncols();
    let batch = Array2::from_shape_fn((rows, lookback), |(i, j)| data.inputs[[idx[i], j]]);
    let mask = (cfg.dropout > 0.0).then(|| draw_mask(rows, cfg.hidden, cfg.dropout, rng));
    let scale = 1.0 / rows as f64;
    let model_ref = &*model;
    let parts = map_chunks(rows, CHUNK_ROWS, |r| -> Result<(f64, Parameters)> {
        let chunk_mask = mask.as_ref().map(|m| m.slice(s![r.clone(), ..]).to_owned());
        let trace = model_ref.forward_batch(batch.slice(s![r.clone(), ..]), chunk_mask)?;
        let mut dlogits = Array2::zeros(trace.logits.dim());
        let mut loss = 0.0;
        for (k, i) in r.enumerate() {
            let z = trace.logits.row(k);
            let t = data.teacher_logits.as_ref().map(|t| t.row(idx[i]));
            let mut g = dlogits.row_mut(k);
            loss += fgl_loss_and_grad(
                z.as_slice().unwrap(),
                t.as_ref().map(|t| t.as_slice().unwrap()),
                data.labels[idx[i]],
                data.alpha,
                data.temperature,
                g.as_slice_mut().unwrap(),
            );
            g.mapv_inplace(|v| v * scale);
        }
        let grads = model_ref.backward(&trace, dlogits.view())?;
        Ok((loss, grads))
    });
    let mut total = Parameters::zeros(&cfg);
    let mut batch_loss = 0.0;
    for part in parts {
        let (loss, grads) = part?;
        batch_loss += loss;
        total.add_assign(&grads);
    }
    if !batch_loss.is_finite() || !total.is_finite() {
        return Err(FglError::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    adam.step(&mut model.params, &total)?;
    Ok(batch_loss)
}

/// Continues training `model` on `inputs`/`labels` with the task loss only,
/// without validation or early stopping. Fresh optimizer state.
pub fn fine_tune(
    model: &ForecastModel,
    inputs: ArrayView2<f64>,
    labels: &[usize],
    epochs: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ForecastModel> {
    if labels.is_empty() || inputs.nrows() != labels.len() {
        return Err(FglError::config(
            "fine-tuning needs matching, non-empty inputs and labels",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tuned = model.clone();
    let mut adam = AdamState::new(&tuned.params, AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let data = Batch {
        inputs,
        labels,
        teacher_logits: None,
        alpha: 1.0,
        temperature: 1.0,
    };
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            batch_step(&mut tuned, &mut adam, &data, idx, &mut rng).map_err(|e| match e {
                FglError::Numeric { .. } | FglError::NonFiniteLoss { .. } => {
                    FglError::NonFiniteLoss { epoch, batch: b }
                }
                other => other,
            })?;
        }
    }
    Ok(tuned)
}

/// Trains a next-step forecaster on quantized targets.
pub fn train_teacher(
    train: &WindowedDataset,
    val: &WindowedDataset,
    bins: &BinSpec,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.horizon != 1 || val.horizon != 1 {
        return Err(FglError::config("teacher data must have horizon 1"));
    }
    if model_cfg.bins != bins.bins {
        return Err(FglError::config("model and bin spec disagree on bin count"));
    }
    if train.is_empty() {
        return Err(FglError::EmptyDataset("teacher training set".into()));
    }
    let labels = labels_for(&train.targets, bins)?;
    let val_labels = labels_for(&val.targets, bins)?;
    train_supervised(
        as_matrix(&train.inputs, train.lookback)?,
        &labels,
        None,
        1.0,
        1.0,
        as_matrix(&val.inputs, val.lookback)?,
        &val_labels,
        model_cfg,
        cfg,
    )
}

/// Trains a horizon-`n` student. Without a teacher this is the baseline
/// (`alpha` must then be 1).
pub fn train_student(
    data: StudentData<'_>,
    teacher: Option<&ForecastModel>,
    fgl: &FglConfig,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    fgl.validate()?;
    if model_cfg.bins != data.bins.bins {
        return Err(FglError::config("model and bin spec disagree on bin count"));
    }
    if data.train.student_horizon != fgl.student_horizon {
        return Err(FglError::config("paired data built for a different horizon"));
    }
    if data.train.is_empty() {
        return Err(FglError::EmptyDataset("student training set".into()));
    }
    let student_inputs = as_matrix(&data.train.student_inputs, data.train.lookback)?;
    let teacher_logits = match teacher {
        Some(t) => {
            if t.config.bins != model_cfg.bins {
                return Err(FglError::config(format!(
                    "teacher emits {} bins, student {}",
                    t.config.bins, model_cfg.bins
                )));
            }
            // The teacher is frozen and runs without dropout, so its logits
            // are a fixed function of the teacher windows.
            Some(t.predict_logits(as_matrix(&data.train.teacher_inputs, data.train.lookback)?)?)
        }
        None if fgl.alpha < 1.0 => {
            return Err(FglError::config("alpha < 1 requires a teacher"));
        }
        None => None,
    };
    let labels = labels_for(&data.train.targets, data.bins)?;
    let val_labels = labels_for(&data.val.targets, data.bins)?;
    train_supervised(
        student_inputs,
        &labels,
        teacher_logits.as_ref().map(|t| t.view()),
        fgl.alpha,
        fgl.temperature,
        as_matrix(&data.val.student_inputs, data.val.lookback)?,
        &val_labels,
        model_cfg,
        cfg,
    )
}

/// Inference-mode class probabilities, one row per window.
pub fn predict_probs(model: &ForecastModel, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut probs = model.predict_logits(inputs)?;
    let mut buf = vec![0.0; model.config.bins];
    for mut row in probs.rows_mut() {
        softmax_into(row.as_slice().unwrap(), 1.0, &mut buf);
        row.as_slice_mut().unwrap().copy_from_slice(&buf);
    }
    Ok(probs)
}

/// Test MSE of the point forecasts produced by `readout`.
pub fn evaluate_mse(
    model: &ForecastModel,
    inputs: ArrayView2<f64>,
    targets: &[f64],
    bins: &BinSpec,
    readout: Readout,
) -> Result<f64> {
    let probs = predict_probs(model, inputs)?;
    let preds: Vec<f64> = probs
        .rows()
        .into_iter()
        .map(|p| readout.apply(p.as_slice().unwrap(), bins))
        .collect();
    metrics::mse(&preds, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fgl::build_paired_dataset;
    use crate::mackey_glass::{generate, make_windows, split, MgParams, SplitSpec};
    use crate::neural::checkpoint::fingerprint;
    use crate::quantizer::fit_bins;

    fn tiny_model(bins: usize) -> ModelConfig {
        ModelConfig {
            hidden: 8,
            layers: 2,
            bins,
            dropout: 0.2,
        }
    }

    fn quick(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 4,
            batch_size: 32,
            lr: 3e-3,
            patience: 5,
            min_delta: 1e-4,
            seed,
        }
    }

    fn series() -> crate::mackey_glass::Splits {
        let t = generate(&MgParams {
            length: 1200,
            ..MgParams::default()
        })
        .unwrap();
        split(&t.values, &SplitSpec::default()).unwrap()
    }

    #[test]
    fn teacher_training_improves_on_initialization() {
        let s = series();
        let bins = fit_bins(&s.train, 10).unwrap();
        let tr = make_windows(&s.train, 8, 1).unwrap();
        let va = make_windows(&s.val, 8, 1).unwrap();
        let cfg = quick(3);
        let out = train_teacher(&tr, &va, &bins, &tiny_model(10), &cfg).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = ForecastModel::new(tiny_model(10), &mut rng).unwrap();
        let val_labels = labels_for(&va.targets, &bins).unwrap();
        let vi = as_matrix(&va.inputs, 8).unwrap();
        let before = mean_cross_entropy(&init, vi, &val_labels).unwrap();
        let after = mean_cross_entropy(&out.model, vi, &val_labels).unwrap();
        assert!(after <= before, "{after} > {before}");
        assert_eq!(after, out.best_val_loss);

        let again = train_teacher(&tr, &va, &bins, &tiny_model(10), &cfg).unwrap();
        assert_eq!(fingerprint(&again.model.params), fingerprint(&out.model.params));
    }

    #[test]
    fn alpha_one_matches_baseline_and_teacher_stays_frozen() {
        let s = series();
        let bins = fit_bins(&s.train, 10).unwrap();
        let teacher = train_teacher(
            &make_windows(&s.train, 8, 1).unwrap(),
            &make_windows(&s.val, 8, 1).unwrap(),
            &bins,
            &tiny_model(10),
            &quick(1),
        )
        .unwrap()
        .model;
        let before = fingerprint(&teacher.params);
        let tr = build_paired_dataset(&s.train, 8, 4).unwrap();
        let va = build_paired_dataset(&s.val, 8, 4).unwrap();
        let data = StudentData {
            train: &tr,
            val: &va,
            bins: &bins,
        };
        let cfg = quick(9);
        let one = FglConfig::new(1.0, 4.0, 4).unwrap();
        let guided = train_student(data, Some(&teacher), &one, &tiny_model(10), &cfg).unwrap();
        let base = train_student(data, None, &one, &tiny_model(10), &cfg).unwrap();
        assert_eq!(fingerprint(&guided.model.params), fingerprint(&base.model.params));
        for (a, b) in guided.history.iter().zip(&base.history) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.val_loss.to_bits(), b.val_loss.to_bits());
        }

        let half = FglConfig::new(0.5, 4.0, 4).unwrap();
        let distilled = train_student(data, Some(&teacher), &half, &tiny_model(10), &cfg).unwrap();
        assert_ne!(fingerprint(&distilled.model.params), fingerprint(&base.model.params));
        assert_eq!(fingerprint(&teacher.params), before);
    }

    #[test]
    fn student_rejects_bad_configuration() {
        let s = series();
        let bins = fit_bins(&s.train, 10).unwrap();
        let tr = build_paired_dataset(&s.train, 8, 4).unwrap();
        let va = build_paired_dataset(&s.val, 8, 4).unwrap();
        let data = StudentData {
            train: &tr,
            val: &va,
            bins: &bins,
        };
        let half = FglConfig::new(0.5, 4.0, 4).unwrap();
        assert!(train_student(data, None, &half, &tiny_model(10), &quick(0)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let wrong = ForecastModel::new(tiny_model(12), &mut rng).unwrap();
        assert!(matches!(
            train_student(data, Some(&wrong), &half, &tiny_model(10), &quick(0)),
            Err(FglError::Config(_))
        ));
        let other_h = FglConfig::new(0.5, 4.0, 5).unwrap();
        assert!(train_student(data, Some(&wrong), &other_h, &tiny_model(10), &quick(0)).is_err());
    }

    #[test]
    fn early_stopping_respects_patience() {
        let s = series();
        let bins = fit_bins(&s.train, 10).unwrap();
        let tr = make_windows(&s.train, 8, 1).unwrap();
        let va = make_windows(&s.val, 8, 1).unwrap();
        // a vanishing learning rate cannot improve validation loss by min_delta
        let cfg = TrainConfig {
            epochs: 50,
            lr: 1e-12,
            patience: 3,
            min_delta: 1e-2,
            ..quick(0)
        };
        let out = train_teacher(&tr, &va, &bins, &tiny_model(10), &cfg).unwrap();
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.history.len(), 4);
    }
}
