//! Mackey–Glass trajectories and the windowing used to turn them into
//! supervised samples.
//!
//! The delay equation is integrated with explicit Euler steps; the delay is
//! stored as an index offset, so `tau_delay` counts steps of size `dt`.
//! History before `t = 0` is held constant at `p0`.

use serde::{Deserialize, Serialize};

use crate::error::{FglError, Result};

/// Values whose magnitude exceeds this are treated as divergence.
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgParams {
    pub tau_delay: usize,
    pub beta0: f64,
    pub theta: f64,
    pub n_exp: f64,
    pub gamma: f64,
    pub dt: f64,
    pub p0: f64,
    pub length: usize,
}

impl Default for MgParams {
    fn default() -> Self {
        Self {
            tau_delay: 17,
            beta0: 0.2,
            theta: 1.0,
            n_exp: 10.0,
            gamma: 0.1,
            dt: 1.0,
            p0: 0.9,
            length: 10_000,
        }
    }
}

impl MgParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau_delay < 1 {
            return Err(FglError::config("tau_delay must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(FglError::config("dt must be positive"));
        }
        if self.length == 0 {
            return Err(FglError::config("length must be at least 1"));
        }
        if !(self.beta0 > 0.0 && self.gamma > 0.0 && self.theta > 0.0) {
            return Err(FglError::config("beta0, gamma and theta must be positive"));
        }
        if !self.n_exp.is_finite() || !self.p0.is_finite() {
            return Err(FglError::config("n_exp and p0 must be finite"));
        }
        Ok(())
    }
}

/// Right-hand side of the delay equation.
pub fn mg_derivative(p_delayed: f64, p_now: f64, params: &MgParams) -> Result<f64> {
    if !p_delayed.is_finite() || !p_now.is_finite() {
        return Err(FglError::domain(format!(
            "non-finite state (delayed {p_delayed}, current {p_now})"
        )));
    }
    let theta_n = params.theta.powf(params.n_exp);
    let growth = params.beta0 * theta_n * p_delayed / (theta_n + p_delayed.powf(params.n_exp));
    Ok(growth - params.gamma * p_now)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub values: Vec<f64>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Integrates the delay equation from a constant history.
pub fn generate(params: &MgParams) -> Result<Trajectory> {
    params.validate()?;
    let mut values = Vec::with_capacity(params.length);
    values.push(params.p0);
    for k in 0..params.length - 1 {
        let delayed = if k >= params.tau_delay {
            values[k - params.tau_delay]
        } else {
            params.p0
        };
        let now = values[k];
        let next = now + params.dt * mg_derivative(delayed, now, params)?;
        if !next.is_finite() || next.abs() > DIVERGENCE_LIMIT {
            return Err(FglError::Integration {
                step: k + 1,
                value: next,
            });
        }
        values.push(next);
    }
    Ok(Trajectory { values, dt: params.dt })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(*f > 0.0)) {
            return Err(FglError::config("split fractions must be positive"));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(FglError::config("split fractions must sum to 1"));
        }
        Ok(())
    }
}

/// Chronological train/validation/test segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
    pub test: Vec<f64>,
}

/// Cuts a series into contiguous segments of `floor(frac * len)` points;
/// the rounding remainder goes to the test segment.
pub fn split(values: &[f64], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let len = values.len();
    let n_train = (spec.train_frac * len as f64).floor() as usize;
    let n_val = (spec.val_frac * len as f64).floor() as usize;
    let n_test = len.saturating_sub(n_train + n_val);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(FglError::config(format!(
            "split of {len} points leaves an empty segment ({n_train}/{n_val}/{n_test})"
        )));
    }
    Ok(Splits {
        train: values[..n_train].to_vec(),
        val: values[n_train..n_train + n_val].to_vec(),
        test: values[n_train + n_val..].to_vec(),
    })
}

/// Fixed-length input windows with the value `horizon` steps past each
/// window's last element as target.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub lookback: usize,
    pub horizon: usize,
    /// Row-major, `lookback` values per sample.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.lookback..(i + 1) * self.lookback]
    }
}

pub fn make_windows(series: &[f64], lookback: usize, horizon: usize) -> Result<WindowedDataset> {
    if lookback == 0 || horizon == 0 {
        return Err(FglError::config("lookback and horizon must be positive"));
    }
    if series.len() < lookback + horizon {
        return Err(FglError::config(format!(
            "series of length {} is too short for lookback {lookback} and horizon {horizon}",
            series.len()
        )));
    }
    let count = series.len() - lookback - horizon + 1;
    let mut inputs = Vec::with_capacity(count * lookback);
    let mut targets = Vec::with_capacity(count);
    for i in 0..count {
        inputs.extend_from_slice(&series[i..i + lookback]);
        targets.push(series[i + lookback - 1 + horizon]);
    }
    Ok(WindowedDataset {
        lookback,
        horizon,
        inputs,
        targets,
    })
}
