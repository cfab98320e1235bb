//! Stacked Elman RNN over scalar sequences with a two-layer fully connected
//! head, and its exact backward pass.
//!
//! Each lookback window is read as a sequence of scalars. The last layer's
//! final hidden state goes through dropout, `FC1`, ReLU and `FC2` to give one
//! logit per bin. Everything operates on row batches: row `i` of every
//! matrix belongs to sample `i`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FglError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub bins: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 2,
            bins: 25,
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(FglError::config("hidden size and layer count must be positive"));
        }
        if self.bins < 2 {
            return Err(FglError::config("need at least 2 output bins"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(FglError::config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnLayer {
    /// `hidden x input`
    pub w_ih: Array2<f64>,
    /// `hidden x hidden`
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

/// All trainable tensors. Gradients and optimizer moments share the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub rnn: Vec<RnnLayer>,
    /// `hidden x hidden`
    pub fc1_w: Array2<f64>,
    pub fc1_b: Array1<f64>,
    /// `bins x hidden`
    pub fc2_w: Array2<f64>,
    pub fc2_b: Array1<f64>,
}

pub type GradientSet = Parameters;

/// Borrowed view of one named parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl Parameters {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        let rnn = (0..cfg.layers)
            .map(|l| RnnLayer {
                w_ih: Array2::zeros((h, if l == 0 { 1 } else { h })),
                w_hh: Array2::zeros((h, h)),
                bias: Array1::zeros(h),
            })
            .collect();
        Self {
            rnn,
            fc1_w: Array2::zeros((h, h)),
            fc1_b: Array1::zeros(h),
            fc2_w: Array2::zeros((cfg.bins, h)),
            fc2_b: Array1::zeros(cfg.bins),
        }
    }

    /// Uniform in `±1/sqrt(fan_in)` per tensor.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        let h = cfg.hidden as f64;
        let mut fill = |data: &mut [f64], fan_in: f64| {
            let bound = 1.0 / fan_in.sqrt();
            for v in data {
                *v = rng.gen_range(-bound..bound);
            }
        };
        for layer in &mut p.rnn {
            let fan_in = layer.w_ih.ncols() as f64;
            fill(layer.w_ih.as_slice_mut().unwrap(), fan_in);
            fill(layer.w_hh.as_slice_mut().unwrap(), h);
            fill(layer.bias.as_slice_mut().unwrap(), h);
        }
        fill(p.fc1_w.as_slice_mut().unwrap(), h);
        fill(p.fc1_b.as_slice_mut().unwrap(), h);
        fill(p.fc2_w.as_slice_mut().unwrap(), h);
        fill(p.fc2_b.as_slice_mut().unwrap(), h);
        p
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::with_capacity(3 * self.rnn.len() + 4);
        for (l, layer) in self.rnn.iter().enumerate() {
            out.push(TensorRef {
                name: format!("rnn{l}.w_ih"),
                shape: layer.w_ih.shape().to_vec(),
                data: layer.w_ih.as_slice().unwrap(),
            });
            out.push(TensorRef {
                name: format!("rnn{l}.w_hh"),
                shape: layer.w_hh.shape().to_vec(),
                data: layer.w_hh.as_slice().unwrap(),
            });
            out.push(TensorRef {
                name: format!("rnn{l}.bias"),
                shape: layer.bias.shape().to_vec(),
                data: layer.bias.as_slice().unwrap(),
            });
        }
        for (name, shape, data) in [
            ("fc1.w", self.fc1_w.shape(), self.fc1_w.as_slice().unwrap()),
            ("fc1.b", self.fc1_b.shape(), self.fc1_b.as_slice().unwrap()),
            ("fc2.w", self.fc2_w.shape(), self.fc2_w.as_slice().unwrap()),
            ("fc2.b", self.fc2_b.shape(), self.fc2_b.as_slice().unwrap()),
        ] {
            out.push(TensorRef {
                name: name.to_string(),
                shape: shape.to_vec(),
                data,
            });
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.rnn.len() + 4);
        for layer in &mut self.rnn {
            out.push(layer.w_ih.as_slice_mut().unwrap());
            out.push(layer.w_hh.as_slice_mut().unwrap());
            out.push(layer.bias.as_slice_mut().unwrap());
        }
        out.push(self.fc1_w.as_slice_mut().unwrap());
        out.push(self.fc1_b.as_slice_mut().unwrap());
        out.push(self.fc2_w.as_slice_mut().unwrap());
        out.push(self.fc2_b.as_slice_mut().unwrap());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Flattened copy of every parameter, in [`tensors`](Self::tensors) order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            for x in t {
                *x *= k;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn same_shapes(&self, other: &Parameters) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape == y.shape)
    }
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `rows x lookback`
    pub inputs: Array2<f64>,
    /// `hidden[layer][t]`, `t = 0..=lookback`; entry 0 is the zero initial state.
    pub hidden: Vec<Vec<Array2<f64>>>,
    /// Scaled keep mask (`0` or `1/(1-rate)`), present only in training mode.
    pub mask: Option<Array2<f64>>,
    pub dropped: Array2<f64>,
    pub fc1_pre: Array2<f64>,
    pub fc1_act: Array2<f64>,
    pub logits: Array2<f64>,
}

impl ForwardTrace {
    pub fn rows(&self) -> usize {
        self.logits.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub config: ModelConfig,
    pub params: Parameters,
}

fn check_finite(a: &Array2<f64>, tensor: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FglError::Numeric {
            tensor: tensor.to_string(),
        })
    }
}

/// Draws a dropout mask for `rows` samples, already scaled by `1/(1-rate)`.
pub fn draw_mask<R: Rng + ?Sized>(rows: usize, hidden: usize, rate: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_fn((rows, hidden), |_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

impl ForecastModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: Parameters::init(&config, rng),
            config,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: Parameters::zeros(&config),
            config,
        })
    }

    /// Forward pass for one window. A dropout mask is drawn from `rng` only
    /// when `training` is set and the dropout rate is positive.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        window: &[f64],
        training: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        let inputs = ArrayView2::from_shape((1, window.len()), window).map_err(|e| FglError::config(e.to_string()))?;
        let mask =
            (training && self.config.dropout > 0.0).then(|| draw_mask(1, self.config.hidden, self.config.dropout, rng));
        let trace = self.forward_batch(inputs, mask)?;
        Ok((trace.logits.row(0).to_vec(), trace))
    }

    /// Batched forward pass; `mask` (if any) must be `rows x hidden`.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>, mask: Option<Array2<f64>>) -> Result<ForwardTrace> {
        let (rows, steps) = inputs.dim();
        let h = self.config.hidden;
        if steps == 0 {
            return Err(FglError::config("empty input window"));
        }
        if self.params.rnn.len() != self.config.layers || self.params.fc2_b.len() != self.config.bins {
            return Err(FglError::config("parameters do not match model configuration"));
        }
        if let Some(m) = &mask {
            if m.dim() != (rows, h) {
                return Err(FglError::config(format!(
                    "dropout mask is {:?}, expected ({rows}, {h})",
                    m.dim()
                )));
            }
        }

        let mut hidden: Vec<Vec<Array2<f64>>> = Vec::with_capacity(self.config.layers);
        for (l, layer) in self.params.rnn.iter().enumerate() {
            let mut states = Vec::with_capacity(steps + 1);
            states.push(Array2::<f64>::zeros((rows, h)));
            for t in 0..steps {
                let mut a = Array2::from_shape_fn((rows, h), |(_, j)| layer.bias[j]);
                if l == 0 {
                    let x = inputs.slice(s![.., t..t + 1]);
                    general_mat_mul(1.0, &x, &layer.w_ih.t(), 1.0, &mut a);
                } else {
                    general_mat_mul(1.0, &hidden[l - 1][t + 1], &layer.w_ih.t(), 1.0, &mut a);
                }
                general_mat_mul(1.0, &states[t], &layer.w_hh.t(), 1.0, &mut a);
                a.mapv_inplace(f64::tanh);
                states.push(a);
            }
            check_finite(&states[steps], &format!("rnn{l}.hidden"))?;
            hidden.push(states);
        }

        let top = &hidden[self.config.layers - 1][steps];
        let dropped = match &mask {
            Some(m) => top * m,
            None => top.clone(),
        };
        let mut fc1_pre = Array2::from_shape_fn((rows, h), |(_, j)| self.params.fc1_b[j]);
        general_mat_mul(1.0, &dropped, &self.params.fc1_w.t(), 1.0, &mut fc1_pre);
        let fc1_act = fc1_pre.mapv(|v| v.max(0.0));
        let mut logits = Array2::from_shape_fn((rows, self.config.bins), |(_, j)| self.params.fc2_b[j]);
        general_mat_mul(1.0, &fc1_act, &self.params.fc2_w.t(), 1.0, &mut logits);
        check_finite(&fc1_pre, "fc1")?;
        check_finite(&logits, "logits")?;

        Ok(ForwardTrace {
            inputs: inputs.to_owned(),
            hidden,
            mask,
            dropped,
            fc1_pre,
            fc1_act,
            logits,
        })
    }

    /// Gradients of `sum_i <dlogits[i], logits[i]>` with respect to every
    /// parameter, i.e. the per-row gradients summed over the batch.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: ArrayView2<f64>) -> Result<GradientSet> {
        let rows = trace.rows();
        let h = self.config.hidden;
        let steps = trace.inputs.ncols();
        if dlogits.dim() != (rows, self.config.bins)
            || trace.hidden.len() != self.config.layers
            || trace.fc1_pre.ncols() != h
        {
            return Err(FglError::config("trace does not match model or loss gradient"));
        }
        let p = &self.params;
        let mut g = Parameters::zeros(&self.config);

        general_mat_mul(1.0, &dlogits.t(), &trace.fc1_act, 0.0, &mut g.fc2_w);
        g.fc2_b = dlogits.sum_axis(Axis(0));
        let mut d_pre = dlogits.dot(&p.fc2_w);
        d_pre.zip_mut_with(&trace.fc1_pre, |d, z| {
            if *z <= 0.0 {
                *d = 0.0;
            }
        });
        general_mat_mul(1.0, &d_pre.t(), &trace.dropped, 0.0, &mut g.fc1_w);
        g.fc1_b = d_pre.sum_axis(Axis(0));
        let mut d_top = d_pre.dot(&p.fc1_w);
        if let Some(m) = &trace.mask {
            d_top *= m;
        }

        // Gradient flowing into each layer's hidden state from above, per step.
        let mut from_above: Vec<Option<Array2<f64>>> = vec![None; steps];
        from_above[steps - 1] = Some(d_top);
        for l in (0..self.config.layers).rev() {
            let layer = &p.rnn[l];
            let states = &trace.hidden[l];
            let mut below: Vec<Option<Array2<f64>>> = vec![None; steps];
            let mut dh_next: Option<Array2<f64>> = None;
            let gl = &mut g.rnn[l];
            for t in (0..steps).rev() {
                let mut da = match (dh_next.take(), from_above[t].take()) {
                    (Some(a), Some(b)) => a + b,
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => continue,
                };
                da.zip_mut_with(&states[t + 1], |d, hv| *d *= 1.0 - hv * hv);
                if l == 0 {
                    let x = trace.inputs.slice(s![.., t..t + 1]);
                    general_mat_mul(1.0, &da.t(), &x, 1.0, &mut gl.w_ih);
                } else {
                    general_mat_mul(1.0, &da.t(), &trace.hidden[l - 1][t + 1], 1.0, &mut gl.w_ih);
                    below[t] = Some(da.dot(&layer.w_ih));
                }
                general_mat_mul(1.0, &da.t(), &states[t], 1.0, &mut gl.w_hh);
                gl.bias += &da.sum_axis(Axis(0));
                if t > 0 {
                    dh_next = Some(da.dot(&layer.w_hh));
                }
            }
            from_above = below;
        }
        Ok(g)
    }

    /// Inference-mode logits for many windows (`rows x lookback`).
    pub fn predict_logits(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let rows = inputs.nrows();
        let parts = crate::parallel::map_chunks(rows, crate::parallel::CHUNK_ROWS, |r| {
            self.forward_batch(inputs.slice(s![r, ..]), None).map(|t| t.logits)
        });
        let mut out = Array2::zeros((rows, self.config.bins));
        let mut start = 0;
        for part in parts {
            let part = part?;
            let n = part.nrows();
            out.slice_mut(s![start..start + n, ..]).assign(&part);
            start += n;
        }
        Ok(out)
    }
}
