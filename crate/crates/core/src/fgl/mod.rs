//! The future-guided distillation loss and the teacher/student protocol.
//!
//! The teacher is trained on next-step targets and then frozen. For a student
//! sample whose window ends at `t` and whose target sits at `t + n`, the
//! teacher sees the window ending at `t + n - 1`, i.e. it predicts the same
//! value one step ahead. The student loss blends cross-entropy on the hard bin
//! label with the temperature-scaled KL divergence to the teacher:
//!
//! ```text
//! alpha * CE(z_s, y) + (1 - alpha) * tau^2 * KL(softmax(z_t / tau) || softmax(z_s / tau))
//! ```

mod train;

use serde::{Deserialize, Serialize};

use crate::error::{FglError, Result};
use crate::neural::loss::{cross_entropy_index, kl_slices, softmax_into};
use crate::quantizer::ClassLabel;

pub use train::{
    evaluate_mse, fine_tune, predict_probs, train_student, train_supervised, train_teacher, EpochRecord, StudentData,
    TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FglConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub teacher_horizon: usize,
    pub student_horizon: usize,
}

impl FglConfig {
    pub fn new(alpha: f64, temperature: f64, student_horizon: usize) -> Result<Self> {
        let cfg = Self {
            alpha,
            temperature,
            teacher_horizon: 1,
            student_horizon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(FglError::config(format!("alpha {} not in [0, 1]", self.alpha)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(FglError::config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.teacher_horizon != 1 {
            return Err(FglError::config("only a next-step teacher is supported"));
        }
        if self.student_horizon <= self.teacher_horizon {
            return Err(FglError::config(format!(
                "student horizon {} must exceed teacher horizon {}",
                self.student_horizon, self.teacher_horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            lr: 1e-4,
            patience: 5,
            min_delta: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(FglError::config("epochs, batch size and patience must be positive"));
        }
        if !(self.lr > 0.0) || !(self.min_delta >= 0.0) {
            return Err(FglError::config(
                "learning rate must be positive and min_delta non-negative",
            ));
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to the student logits.
pub fn fgl_loss_and_grad(
    student_logits: &[f64],
    teacher_logits: Option<&[f64]>,
    label: usize,
    alpha: f64,
    temperature: f64,
    grad: &mut [f64],
) -> f64 {
    let bins = student_logits.len();
    softmax_into(student_logits, 1.0, grad);
    grad[label] -= 1.0;
    let ce = cross_entropy_index(student_logits, label);
    let Some(teacher_logits) = teacher_logits else {
        return ce;
    };
    let mut ps = vec![0.0; bins];
    let mut pt = vec![0.0; bins];
    softmax_into(student_logits, temperature, &mut ps);
    softmax_into(teacher_logits, temperature, &mut pt);
    let kl = kl_slices(&pt, &ps);
    let kd_weight = (1.0 - alpha) * temperature;
    for j in 0..bins {
        grad[j] = alpha * grad[j] + kd_weight * (ps[j] - pt[j]);
    }
    alpha * ce + (1.0 - alpha) * temperature * temperature * kl
}

pub fn fgl_loss(student_logits: &[f64], teacher_logits: &[f64], label: ClassLabel, cfg: &FglConfig) -> Result<f64> {
    if student_logits.len() != teacher_logits.len() {
        return Err(FglError::config(format!(
            "student has {} logits, teacher {}",
            student_logits.len(),
            teacher_logits.len()
        )));
    }
    if label.index() >= student_logits.len() {
        return Err(FglError::domain("label outside logit range"));
    }
    if student_logits.iter().chain(teacher_logits).any(|z| !z.is_finite()) {
        return Err(FglError::Numeric {
            tensor: "logits".into(),
        });
    }
    let mut grad = vec![0.0; student_logits.len()];
    Ok(fgl_loss_and_grad(
        student_logits,
        Some(teacher_logits),
        label.index(),
        cfg.alpha,
        cfg.temperature,
        &mut grad,
    ))
}

/// Student and teacher windows sharing one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedSample<'a> {
    pub student_window: &'a [f64],
    pub teacher_window: &'a [f64],
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub lookback: usize,
    pub student_horizon: usize,
    /// Row-major student windows.
    pub student_inputs: Vec<f64>,
    /// Row-major teacher windows (student windows shifted by `horizon - 1`).
    pub teacher_inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sample(&self, i: usize) -> PairedSample<'_> {
        let l = self.lookback;
        PairedSample {
            student_window: &self.student_inputs[i * l..(i + 1) * l],
            teacher_window: &self.teacher_inputs[i * l..(i + 1) * l],
            target: self.targets[i],
        }
    }
}

pub fn build_paired_dataset(split: &[f64], lookback: usize, student_horizon: usize) -> Result<PairedDataset> {
    if lookback == 0 || student_horizon < 2 {
        return Err(FglError::config(
            "lookback must be positive and student horizon at least 2",
        ));
    }
    if split.len() < lookback + student_horizon {
        return Err(FglError::config(format!(
            "split of length {} too short for lookback {lookback} and horizon {student_horizon}",
            split.len()
        )));
    }
    let count = split.len() - lookback - student_horizon + 1;
    let shift = student_horizon - 1;
    let mut student_inputs = Vec::with_capacity(count * lookback);
    let mut teacher_inputs = Vec::with_capacity(count * lookback);
    let mut targets = Vec::with_capacity(count);
    for i in 0..count {
        student_inputs.extend_from_slice(&split[i..i + lookback]);
        teacher_inputs.extend_from_slice(&split[i + shift..i + shift + lookback]);
        targets.push(split[i + lookback - 1 + student_horizon]);
    }
    Ok(PairedDataset {
        lookback,
        student_horizon,
        student_inputs,
        teacher_inputs,
        targets,
    })
}
