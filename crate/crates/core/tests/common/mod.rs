//! Finite-difference oracles shared by the gradient tests and the
//! acceptance suite.
#![allow(dead_code)]

use fgl_core::fgl::fgl_loss_and_grad;
use fgl_core::neural::rnn::draw_mask;
use fgl_core::neural::{ForecastModel, ModelConfig};
use fgl_core::pcoding::{free_energy, grad_phi, learn_parameters, Generative, PcModel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so that components that are
/// zero up to rounding do not dominate.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

struct Problem {
    model: ForecastModel,
    inputs: Array2<f64>,
    mask: Array2<f64>,
    labels: Vec<usize>,
    teacher: Array2<f64>,
    alpha: f64,
    temperature: f64,
}

impl Problem {
    fn loss(&self, model: &ForecastModel) -> f64 {
        let trace = model
            .forward_batch(self.inputs.view(), Some(self.mask.clone()))
            .unwrap();
        let mut g = vec![0.0; model.config.bins];
        (0..self.labels.len())
            .map(|i| {
                fgl_loss_and_grad(
                    trace.logits.row(i).as_slice().unwrap(),
                    Some(self.teacher.row(i).as_slice().unwrap()),
                    self.labels[i],
                    self.alpha,
                    self.temperature,
                    &mut g,
                )
            })
            .sum()
    }
}

/// Max relative error of `backward` against central differences of the
/// distillation loss on a random reduced model (H=8, B=5, L=4, two layers,
/// fixed dropout mask).
pub fn backward_max_rel_err(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        hidden: 8,
        layers: 2,
        bins: 5,
        dropout: 0.2,
    };
    let rows = 3;
    let p = Problem {
        model: ForecastModel::new(cfg, &mut rng).unwrap(),
        inputs: Array2::from_shape_fn((rows, 4), |_| rng.gen_range(-1.0..1.5)),
        mask: draw_mask(rows, cfg.hidden, cfg.dropout, &mut rng),
        labels: (0..rows).map(|_| rng.gen_range(0..cfg.bins)).collect(),
        teacher: Array2::from_shape_fn((rows, cfg.bins), |_| rng.gen_range(-2.0..2.0)),
        alpha: rng.gen_range(0.0..1.0),
        temperature: rng.gen_range(0.5..4.0),
    };
    let trace = p.model.forward_batch(p.inputs.view(), Some(p.mask.clone())).unwrap();
    let mut dlogits = Array2::zeros((rows, cfg.bins));
    for i in 0..rows {
        let mut g = vec![0.0; cfg.bins];
        fgl_loss_and_grad(
            trace.logits.row(i).as_slice().unwrap(),
            Some(p.teacher.row(i).as_slice().unwrap()),
            p.labels[i],
            p.alpha,
            p.temperature,
            &mut g,
        );
        dlogits.row_mut(i).assign(&ndarray::Array1::from(g));
    }
    let grads = p.model.backward(&trace, dlogits.view()).unwrap();
    let analytic = grads.to_flat();

    let mut worst: f64 = 0.0;
    let mut offset = 0;
    let n_tensors = p.model.params.tensors().len();
    for t in 0..n_tensors {
        let len = p.model.params.tensors()[t].data.len();
        for k in 0..len {
            let f = |v: f64| {
                let mut m = p.model.clone();
                m.params.tensors_mut()[t][k] = v;
                p.loss(&m)
            };
            let x = p.model.params.tensors()[t].data[k];
            let numeric = central_diff(f, x, FD_STEP);
            worst = worst.max(rel_err(analytic[offset + k], numeric, 1e-6));
        }
        offset += len;
    }
    worst
}

/// Max relative error of the distillation-loss gradient with respect to the
/// student logits.
pub fn fgl_grad_max_rel_err(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bins = rng.gen_range(2..12);
    let z: Vec<f64> = (0..bins).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let t: Vec<f64> = (0..bins).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let label = rng.gen_range(0..bins);
    let alpha = rng.gen_range(0.0..=1.0);
    let tau = rng.gen_range(0.5..8.0);
    let mut grad = vec![0.0; bins];
    fgl_loss_and_grad(&z, Some(&t), label, alpha, tau, &mut grad);
    let mut scratch = vec![0.0; bins];
    (0..bins)
        .map(|j| {
            let numeric = central_diff(
                |v| {
                    let mut zz = z.clone();
                    zz[j] = v;
                    fgl_loss_and_grad(&zz, Some(&t), label, alpha, tau, &mut scratch)
                },
                z[j],
                FD_STEP,
            );
            rel_err(grad[j], numeric, 1e-6)
        })
        .fold(0.0, f64::max)
}

pub fn random_pc_model(rng: &mut impl Rng) -> PcModel {
    let g = if rng.gen_bool(0.5) {
        Generative::Identity
    } else {
        Generative::Gain(rng.gen_range(-2.0..2.0))
    };
    PcModel::new(
        rng.gen_range(-3.0..3.0),
        rng.gen_range(0.2..4.0),
        rng.gen_range(0.2..4.0),
        rng.gen_range(-3.0..3.0),
        g,
    )
    .unwrap()
}

/// Max relative error of `grad_phi` and `learn_parameters` against central
/// differences of the free energy. Relative errors use a floor of 1e-4: the
/// differences are exact to about 1e-11 for these smooth scalar functions.
pub fn pcoding_max_rel_err(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = random_pc_model(&mut rng);
    let u = rng.gen_range(-3.0..3.0);
    let h = FD_STEP;
    let d_phi = central_diff(|v| free_energy(&PcModel { phi: v, ..m }, u), m.phi, h);
    let d_vp = central_diff(|v| free_energy(&PcModel { v_p: v, ..m }, u), m.v_p, h);
    let d_sp = central_diff(|v| free_energy(&PcModel { sigma_p: v, ..m }, u), m.sigma_p, h);
    let d_su = central_diff(|v| free_energy(&PcModel { sigma_u: v, ..m }, u), m.sigma_u, h);
    let lp = learn_parameters(&m, u);
    [
        rel_err(grad_phi(&m, u), d_phi, 1e-4),
        rel_err(lp.d_vp, d_vp, 1e-4),
        rel_err(lp.d_sigma_p, d_sp, 1e-4),
        rel_err(lp.d_sigma_u, d_su, 1e-4),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}
