use crate::error::{FglError, Result};
use crate::quantizer::{ClassLabel, ProbVector};

/// Student probabilities are floored here before the KL ratio.
pub const PROB_FLOOR: f64 = 1e-12;

/// Temperature-scaled softmax.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(FglError::domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(FglError::domain("softmax of an empty vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(FglError::Numeric {
            tensor: "logits".into(),
        });
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, temperature, &mut out);
    Ok(ProbVector::from_normalized(out))
}

pub(crate) fn softmax_into(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, z) in out.iter_mut().zip(logits) {
        *o = ((z - max) / temperature).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Negative log-likelihood of `label` under `softmax(logits)`.
pub fn cross_entropy(logits: &[f64], label: ClassLabel) -> f64 {
    log_sum_exp(logits) - logits[label.index()]
}

pub(crate) fn cross_entropy_index(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

/// `KL(p_teacher || p_student)`, with `0 ln 0 = 0`.
pub fn kl_div(p_teacher: &ProbVector, p_student: &ProbVector) -> Result<f64> {
    if p_teacher.len() != p_student.len() {
        return Err(FglError::config(format!(
            "distribution sizes differ: {} vs {}",
            p_teacher.len(),
            p_student.len()
        )));
    }
    Ok(kl_slices(p_teacher.as_slice(), p_student.as_slice()))
}

pub(crate) fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pt, _)| **pt > 0.0)
        .map(|(pt, qs)| pt * (pt / qs.max(PROB_FLOOR)).ln())
        .sum()
}
