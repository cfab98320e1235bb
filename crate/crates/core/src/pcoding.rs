//! A single Gaussian predictive-coding node: free energy, gradient ascent on
//! the cause estimate `phi`, prediction-error unit dynamics and the
//! mean/variance learning rules.
//!
//! The free energy is
//!
//! ```text
//! F = 1/2 ( -ln Σp - (Φ - vp)²/Σp - ln Σu - (u - g(Φ))²/Σu )
//! ```
//!
//! with the additive constant fixed to zero.
//!
//! Sign conventions differ between operations and are stated on each:
//! [`grad_phi`] writes the prior error as `(vp - Φ)/Σp`, while the error
//! units and [`learn_parameters`] use `εp = (Φ - vp)/Σp`. With the latter
//! convention the gradient-faithful update is `Φ̇ = εu g'(Φ) - εp`.

use serde::{Deserialize, Serialize};

use crate::error::{FglError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "gain", rename_all = "lowercase")]
pub enum Generative {
    Identity,
    /// `g(Φ) = a·Φ`.
    Gain(f64),
}

impl Generative {
    pub fn eval(self, phi: f64) -> f64 {
        match self {
            Generative::Identity => phi,
            Generative::Gain(a) => a * phi,
        }
    }

    pub fn derivative(self, _phi: f64) -> f64 {
        match self {
            Generative::Identity => 1.0,
            Generative::Gain(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcModel {
    pub v_p: f64,
    pub sigma_p: f64,
    pub sigma_u: f64,
    pub phi: f64,
    pub eps_p: f64,
    pub eps_u: f64,
    pub g: Generative,
}

impl PcModel {
    /// A node with zeroed error units.
    pub fn new(v_p: f64, sigma_p: f64, sigma_u: f64, phi: f64, g: Generative) -> Result<Self> {
        let m = Self {
            v_p,
            sigma_p,
            sigma_u,
            phi,
            eps_p: 0.0,
            eps_u: 0.0,
            g,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_p > 0.0 && self.sigma_u > 0.0) {
            return Err(FglError::domain("variances must be positive"));
        }
        let gain_finite = match self.g {
            Generative::Identity => true,
            Generative::Gain(a) => a.is_finite(),
        };
        let fields = [self.v_p, self.sigma_p, self.sigma_u, self.phi, self.eps_p, self.eps_u];
        if !gain_finite || fields.iter().any(|v| !v.is_finite()) {
            return Err(FglError::domain("predictive-coding fields must be finite"));
        }
        Ok(())
    }

    /// Prior error in the `(Φ - vp)/Σp` convention.
    pub fn prior_error(&self) -> f64 {
        (self.phi - self.v_p) / self.sigma_p
    }

    /// Sensory error `(u - g(Φ))/Σu`.
    pub fn sensory_error(&self, u: f64) -> f64 {
        (u - self.g.eval(self.phi)) / self.sigma_u
    }

    /// Maximiser of `F` over `Φ` for a linear generative function.
    pub fn optimum(&self, u: f64) -> f64 {
        let a = self.g.derivative(0.0);
        (self.sigma_u * self.v_p + a * self.sigma_p * u) / (self.sigma_u + a * a * self.sigma_p)
    }
}

pub fn free_energy(model: &PcModel, u: f64) -> f64 {
    let dp = model.phi - model.v_p;
    let du = u - model.g.eval(model.phi);
    0.5 * (-model.sigma_p.ln() - dp * dp / model.sigma_p - model.sigma_u.ln() - du * du / model.sigma_u)
}

/// `dF/dΦ = (u - g(Φ))/Σu · g'(Φ) + (vp - Φ)/Σp`.
pub fn grad_phi(model: &PcModel, u: f64) -> f64 {
    model.sensory_error(u) * model.g.derivative(model.phi) + (model.v_p - model.phi) / model.sigma_p
}

/// One row of a relaxation trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxStep {
    pub iteration: usize,
    pub phi: f64,
    pub eps_p: f64,
    pub eps_u: f64,
    pub free_energy: f64,
}

fn with_closed_form_errors(mut m: PcModel, u: f64) -> PcModel {
    m.eps_p = m.prior_error();
    m.eps_u = m.sensory_error(u);
    m
}

fn snapshot(m: &PcModel, u: f64, iteration: usize) -> RelaxStep {
    RelaxStep {
        iteration,
        phi: m.phi,
        eps_p: m.eps_p,
        eps_u: m.eps_u,
        free_energy: free_energy(m, u),
    }
}

/// Gradient ascent on `F` over `Φ`, recording the state after every update
/// (row 0 is the initial state). Error units follow their closed forms.
pub fn relax_trace(model: &PcModel, u: f64, step: f64, iters: usize) -> Result<(PcModel, Vec<RelaxStep>)> {
    model.validate()?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(FglError::StepSize(format!("step {step} must be positive")));
    }
    let mut m = with_closed_form_errors(*model, u);
    let mut trace = vec![snapshot(&m, u, 0)];
    for it in 1..=iters {
        let g = grad_phi(&m, u);
        if g.abs() < 1e-10 {
            break;
        }
        m.phi += step * g;
        if !(m.phi.abs() <= 1e9) {
            return Err(FglError::StepSize(format!(
                "phi diverged to {} after {it} iterations with step {step}",
                m.phi
            )));
        }
        m = with_closed_form_errors(m, u);
        trace.push(snapshot(&m, u, it));
    }
    Ok((m, trace))
}

pub fn relax_phi(model: &PcModel, u: f64, step: f64, iters: usize) -> Result<PcModel> {
    relax_trace(model, u, step, iters).map(|(m, _)| m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorDynamics {
    pub model: PcModel,
    /// Set when the explicit Euler step exceeds the stability bound
    /// `2 / max(Σp, Σu)`; the integration still runs.
    pub unstable: bool,
}

/// Explicit Euler integration of the error units with `Φ` held fixed:
/// `ε̇p = Φ - vp - Σp εp`, `ε̇u = u - g(Φ) - Σu εu`.
pub fn error_dynamics(model: &PcModel, u: f64, step: f64, iters: usize) -> Result<ErrorDynamics> {
    model.validate()?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(FglError::StepSize(format!("step {step} must be positive")));
    }
    let unstable = step >= 2.0 / model.sigma_p.max(model.sigma_u);
    let drive_p = model.phi - model.v_p;
    let drive_u = u - model.g.eval(model.phi);
    let mut m = *model;
    for _ in 0..iters {
        m.eps_p += step * (drive_p - m.sigma_p * m.eps_p);
        m.eps_u += step * (drive_u - m.sigma_u * m.eps_u);
    }
    Ok(ErrorDynamics { model: m, unstable })
}

/// Fixed point of [`error_dynamics`].
pub fn settle_errors(model: &PcModel, u: f64) -> PcModel {
    with_closed_form_errors(*model, u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamGradients {
    pub d_vp: f64,
    pub d_sigma_p: f64,
    pub d_sigma_u: f64,
}

/// Gradients of `F` with respect to `(vp, Σp, Σu)` from the converged errors
/// `εp = (Φ - vp)/Σp`, `εu = (u - g(Φ))/Σu`.
pub fn learn_parameters(model: &PcModel, u: f64) -> ParamGradients {
    let ep = model.prior_error();
    let eu = model.sensory_error(u);
    ParamGradients {
        d_vp: ep,
        d_sigma_p: 0.5 * (ep * ep - 1.0 / model.sigma_p),
        d_sigma_u: 0.5 * (eu * eu - 1.0 / model.sigma_u),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(phi: f64) -> PcModel {
        PcModel::new(1.0, 1.0, 1.0, phi, Generative::Identity).unwrap()
    }

    #[test]
    fn free_energy_examples() {
        let m = PcModel::new(0.3, 1.0, 1.0, 0.3, Generative::Identity).unwrap();
        assert_eq!(free_energy(&m, 0.3), 0.0);
        assert!((free_energy(&unit(1.5), 2.0) + 0.25).abs() < 1e-15);
        assert!(free_energy(&unit(1.4), 2.0) < -0.25);
        assert!(free_energy(&unit(1.6), 2.0) < -0.25);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(grad_phi(&unit(1.5), 2.0), 0.0);
        let m = PcModel::new(1.0, 1e300, 2.0, 0.5, Generative::Identity).unwrap();
        assert!((grad_phi(&m, 2.0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn relax_examples() {
        let m = relax_phi(&unit(0.0), 2.0, 0.1, 10_000).unwrap();
        assert!((m.phi - 1.5).abs() < 1e-6);
        assert_eq!(relax_phi(&unit(1.5), 2.0, 0.1, 100).unwrap().phi, 1.5);
        let far = relax_phi(&unit(-40.0), 2.0, 0.1, 10_000).unwrap();
        assert!((far.phi - m.phi).abs() < 1e-9);
        assert!(matches!(
            relax_phi(&unit(0.0), 2.0, 5.0, 10_000),
            Err(FglError::StepSize(_))
        ));
        assert!(relax_phi(&unit(0.0), 2.0, 0.0, 10).is_err());
    }

    #[test]
    fn error_dynamics_examples() {
        let out = error_dynamics(&unit(1.5), 2.0, 0.1, 1000).unwrap();
        assert!(!out.unstable);
        assert!((out.model.eps_p - 0.5).abs() < 1e-12);
        assert!((out.model.eps_u - 0.5).abs() < 1e-12);

        let rest = PcModel {
            eps_p: 0.7,
            eps_u: -0.3,
            ..unit(1.0)
        };
        let out = error_dynamics(&rest, 1.0, 0.1, 1000).unwrap();
        assert!(out.model.eps_p.abs() < 1e-12 && out.model.eps_u.abs() < 1e-12);
        assert!(error_dynamics(&rest, 1.0, 2.0, 1).unwrap().unstable);
    }

    #[test]
    fn error_decay_halves_in_ln2_over_sigma() {
        // continuous-time half-life; a small step approximates it
        let sigma = 2.0;
        let m = PcModel::new(0.0, sigma, sigma, 1.0, Generative::Identity).unwrap();
        let fixed = 1.0 / sigma;
        let step = 1e-5;
        let steps = ((2f64.ln() / sigma) / step).round() as usize;
        let out = error_dynamics(&m, 1.0, step, steps).unwrap();
        let ratio = (out.model.eps_p - fixed) / (0.0 - fixed);
        assert!((ratio - 0.5).abs() < 1e-4, "{ratio}");
    }

    #[test]
    fn learning_rule_examples() {
        let g = learn_parameters(&unit(1.5), 2.0);
        assert_eq!(g.d_vp, 0.5);
        assert_eq!(g.d_sigma_p, -0.375);
        let matched = PcModel::new(0.0, 4.0, 1.0, 2.0, Generative::Identity).unwrap();
        assert_eq!(learn_parameters(&matched, 2.0).d_sigma_p, 0.0);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(PcModel::new(0.0, 0.0, 1.0, 0.0, Generative::Identity).is_err());
        assert!(PcModel::new(0.0, 1.0, -1.0, 0.0, Generative::Identity).is_err());
        assert!(PcModel::new(f64::NAN, 1.0, 1.0, 0.0, Generative::Identity).is_err());
        assert!(PcModel::new(0.0, 1.0, 1.0, 0.0, Generative::Gain(f64::INFINITY)).is_err());
    }

    #[test]
    fn gain_optimum_is_stationary() {
        let m = PcModel::new(0.4, 0.7, 1.9, 0.0, Generative::Gain(-1.3)).unwrap();
        let opt = PcModel {
            phi: m.optimum(0.8),
            ..m
        };
        assert!(grad_phi(&opt, 0.8).abs() < 1e-14);
        let relaxed = relax_phi(&m, 0.8, 0.1, 100_000).unwrap();
        assert!((relaxed.phi - opt.phi).abs() < 1e-9);
    }
}
