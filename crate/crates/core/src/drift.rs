//! Page–Hinkley change detection on the online forecast-error stream, with
//! short retraining on the most recent samples whenever it fires.
//!
//! For each error `e_t` the detector accumulates `u_t = e_t - mean - delta`
//! into `S` and tracks the running minimum `S_min`; an alarm is raised when
//! `S - S_min > lambda`. The first error after construction or an empty
//! reset only seeds the mean.

use std::collections::VecDeque;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{FglError, Result};
use crate::fgl::{fine_tune, TrainConfig};
use crate::metrics;
use crate::neural::ForecastModel;
use crate::parallel::CHUNK_ROWS;
use crate::quantizer::{quantize_index, BinSpec, Readout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhParams {
    pub delta: f64,
    pub lambda: f64,
    /// Errors kept for re-estimating the mean after a retrain.
    pub window_len: usize,
    pub retrain_epochs: usize,
    /// Number of most recent stream samples used for retraining.
    pub retrain_window: usize,
    /// Track the mean over the last `window_len` errors at every step
    /// instead of the cumulative mean.
    #[serde(default)]
    pub continuous_window: bool,
}

impl PhParams {
    pub fn new(delta: f64, lambda: f64) -> Self {
        Self {
            delta,
            lambda,
            window_len: 3,
            retrain_epochs: 3,
            retrain_window: 128,
            continuous_window: false,
        }
    }

    /// Thresholds tuned per bin count: 25 bins and 50 bins. Other bin counts
    /// fall back to the 25-bin values.
    pub fn for_bins(bins: usize) -> Self {
        match bins {
            50 => Self::new(5.78, 7.84),
            _ => Self::new(0.130, 0.647),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(FglError::config("lambda must be positive"));
        }
        if !(self.delta >= 0.0) {
            return Err(FglError::config("delta must be non-negative"));
        }
        if self.window_len == 0 || self.retrain_window == 0 {
            return Err(FglError::config("window lengths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhState {
    sum: f64,
    count: usize,
    pub s: f64,
    pub s_min: f64,
    recent: VecDeque<f64>,
    window_len: usize,
    continuous: bool,
}

impl PhState {
    pub fn new(params: &PhParams) -> Self {
        Self {
            sum: 0.0,
            count: 0,
            s: 0.0,
            s_min: 0.0,
            recent: VecDeque::with_capacity(params.window_len),
            window_len: params.window_len,
            continuous: params.continuous_window,
        }
    }

    /// Current reference mean, if any error has been seen.
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn recent(&self) -> impl Iterator<Item = f64> + '_ {
        self.recent.iter().copied()
    }

    fn remember(&mut self, e: f64) {
        if self.recent.len() == self.window_len {
            self.recent.pop_front();
        }
        self.recent.push_back(e);
    }
}

/// Feeds one error; returns whether the detector alarms.
pub fn ph_update(state: &mut PhState, e: f64, params: &PhParams) -> Result<bool> {
    if !e.is_finite() || e < 0.0 {
        return Err(FglError::domain(format!(
            "error stream value {e} must be finite and non-negative"
        )));
    }
    let alarm = if state.count == 0 {
        false
    } else {
        // e - mean, written so that a constant shift of the stream cancels
        let n = state.count as f64;
        let u = (n * e - state.sum) / n - params.delta;
        state.s += u;
        state.s_min = state.s_min.min(state.s);
        state.s - state.s_min > params.lambda
    };
    state.remember(e);
    if state.continuous {
        state.sum = state.recent.iter().sum();
        state.count = state.recent.len();
    } else {
        state.sum += e;
        state.count += 1;
    }
    Ok(alarm)
}

/// Clears the cumulative deviation and re-estimates the mean from the most
/// recent `window_len` entries of `recent_errors`. An empty buffer leaves the
/// mean to be seeded by the next observation.
pub fn ph_reset(state: &mut PhState, recent_errors: &[f64]) {
    let keep = &recent_errors[recent_errors.len().saturating_sub(state.window_len)..];
    state.s = 0.0;
    state.s_min = 0.0;
    state.recent = keep.iter().copied().collect();
    state.sum = keep.iter().sum();
    state.count = keep.len();
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmAction {
    Retrain,
    /// Retraining diverged; the pre-retrain model was kept.
    Rollback,
}

impl AlarmAction {
    pub fn as_str(self) -> &'static str {
        match self {
            AlarmAction::Retrain => "retrain",
            AlarmAction::Rollback => "rollback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlarmRecord {
    pub stream_index: usize,
    pub s: f64,
    pub s_min: f64,
    pub action: AlarmAction,
}

/// A chronological test stream of windows and real targets.
#[derive(Debug, Clone, Copy)]
pub struct Stream<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub targets: &'a [f64],
    pub bins: &'a BinSpec,
    pub readout: Readout,
}

#[derive(Debug, Clone)]
pub struct DriftOutcome {
    /// MSE of the unadapted model over the stream.
    pub mse_before: f64,
    /// MSE of the online forecasts, each made before the sample's label is
    /// used for adaptation.
    pub mse_after: f64,
    pub alarms: Vec<AlarmRecord>,
    pub predictions: Vec<f64>,
}

impl DriftOutcome {
    pub fn percent_change(&self) -> f64 {
        100.0 * (self.mse_after - self.mse_before) / self.mse_before
    }
}

/// Point forecasts for rows `start..start + CHUNK_ROWS`, cached until the
/// model changes.
struct ForecastCache {
    start: usize,
    values: Vec<f64>,
}

fn forecasts(model: &ForecastModel, stream: &Stream<'_>, rows: std::ops::Range<usize>) -> Result<Vec<f64>> {
    let probs = crate::fgl::predict_probs(model, stream.inputs.slice(s![rows, ..]))?;
    Ok(probs
        .rows()
        .into_iter()
        .map(|p| stream.readout.apply(p.as_slice().unwrap(), stream.bins))
        .collect())
}

fn squared_bin_error(pred: f64, target: f64, bins: &BinSpec) -> f64 {
    let d = (pred - target) / bins.width();
    d * d
}

/// Walks the stream in order, feeding squared forecast errors (in units of
/// squared bin widths) to the detector and retraining on the most recent
/// samples at every alarm.
pub fn drift_run(
    model: &ForecastModel,
    stream: &Stream<'_>,
    ph: &PhParams,
    train_cfg: &TrainConfig,
) -> Result<DriftOutcome> {
    ph.validate()?;
    let n = stream.targets.len();
    if n == 0 || stream.inputs.nrows() != n {
        return Err(FglError::config(
            "stream inputs and targets must be non-empty and aligned",
        ));
    }
    let baseline = forecasts(model, stream, 0..n)?;
    let mse_before = metrics::mse(&baseline, stream.targets)?;

    let labels: Vec<usize> = stream.targets.iter().map(|&x| quantize_index(x, stream.bins)).collect();
    let mut current = model.clone();
    let mut state = PhState::new(ph);
    let mut cache: Option<ForecastCache> = None;
    let mut predictions = Vec::with_capacity(n);
    let mut alarms = Vec::new();

    for i in 0..n {
        let pred = match &cache {
            Some(c) if i < c.start + c.values.len() => c.values[i - c.start],
            _ => {
                let end = (i + CHUNK_ROWS).min(n);
                let values = forecasts(&current, stream, i..end)?;
                let p = values[0];
                cache = Some(ForecastCache { start: i, values });
                p
            }
        };
        predictions.push(pred);
        let e = squared_bin_error(pred, stream.targets[i], stream.bins);
        if !ph_update(&mut state, e, ph)? {
            continue;
        }

        let (s_at, s_min_at) = (state.s, state.s_min);
        let lo = (i + 1).saturating_sub(ph.retrain_window);
        let window: Array2<f64> = stream.inputs.slice(s![lo..=i, ..]).to_owned();
        let seed = train_cfg.seed ^ ((i as u64 + 1) << 20);
        let action = match fine_tune(
            &current,
            window.view(),
            &labels[lo..=i],
            ph.retrain_epochs,
            train_cfg,
            seed,
        ) {
            Ok(tuned) => {
                current = tuned;
                AlarmAction::Retrain
            }
            Err(FglError::NonFiniteLoss { .. }) | Err(FglError::Numeric { .. }) => AlarmAction::Rollback,
            Err(other) => return Err(other),
        };
        alarms.push(AlarmRecord {
            stream_index: i,
            s: s_at,
            s_min: s_min_at,
            action,
        });
        let recent_lo = (i + 1).saturating_sub(ph.window_len);
        let recent_preds = forecasts(&current, stream, recent_lo..i + 1)?;
        let recent: Vec<f64> = recent_preds
            .iter()
            .zip(&stream.targets[recent_lo..=i])
            .map(|(p, t)| squared_bin_error(*p, *t, stream.bins))
            .collect();
        ph_reset(&mut state, &recent);
        cache = None;
    }

    let mse_after = metrics::mse(&predictions, stream.targets)?;
    Ok(DriftOutcome {
        mse_before,
        mse_after,
        alarms,
        predictions,
    })
}
