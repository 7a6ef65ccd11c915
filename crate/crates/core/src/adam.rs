//! Adam with one learning rate per parameter group.

use crate::error::{Error, Result};
use crate::gaussian::{constrain_finite, GaussianGrad, GaussianSet, PARAMS_PER_GAUSSIAN};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Learning rates for the four parameter groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub mu: f64,
    pub color: f64,
    pub scale: f64,
    pub theta: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { mu: 2e-4, color: 2e-3, scale: 1e-3, theta: 1e-3 }
    }
}

impl LearningRates {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mu: self.mu * factor,
            color: self.color * factor,
            scale: self.scale * factor,
            theta: self.theta * factor,
        }
    }

    /// Rate per slot in `(μu, μv, θ, s₁, s₂, r, g, b)` order.
    fn per_param(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        [self.mu, self.mu, self.theta, self.scale, self.scale, self.color, self.color, self.color]
    }

    pub fn all_positive(&self) -> bool {
        [self.mu, self.color, self.scale, self.theta].iter().all(|r| r.is_finite() && *r > 0.0)
    }
}

/// Moment estimates and step counts, one entry per Gaussian. Gaussians added
/// mid-training start from zero moments and their own step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    v: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    steps: Vec<u64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        let mut s = Self::default();
        s.grow(n);
        s
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Extends the state with fresh entries up to `n` Gaussians.
    pub fn grow(&mut self, n: usize) {
        self.m.resize(n, [0.0; PARAMS_PER_GAUSSIAN]);
        self.v.resize(n, [0.0; PARAMS_PER_GAUSSIAN]);
        self.steps.resize(n, 0);
    }

    pub fn first_moment(&self, i: usize) -> &[f64; PARAMS_PER_GAUSSIAN] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64; PARAMS_PER_GAUSSIAN] {
        &self.v[i]
    }
}

/// One bias-corrected Adam update of a scalar. Returns the new parameter.
#[inline]
pub fn adam_update(param: f64, grad: f64, m: &mut f64, v: &mut f64, lr: f64, t: u64) -> f64 {
    *m = BETA1 * *m + (1.0 - BETA1) * grad;
    *v = BETA2 * *v + (1.0 - BETA2) * grad * grad;
    let m_hat = *m / (1.0 - BETA1.powi(t as i32));
    let v_hat = *v / (1.0 - BETA2.powi(t as i32));
    param - lr * m_hat / (v_hat.sqrt() + EPSILON)
}

const PARAM_NAMES: [&str; PARAMS_PER_GAUSSIAN] = ["mu", "mu", "theta", "scale", "scale", "color", "color", "color"];

/// Applies one Adam step to every Gaussian and projects the result back into
/// the valid parameter ranges.
pub fn adam_step(
    set: &mut GaussianSet,
    grads: &[GaussianGrad],
    state: &mut AdamState,
    lr: &LearningRates,
) -> Result<()> {
    if grads.len() != set.len() || state.len() != set.len() {
        return Err(Error::InvalidParameter(format!(
            "shape mismatch: {} gaussians, {} gradients, {} optimizer entries",
            set.len(),
            grads.len(),
            state.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(p) = g.to_params().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i, param: PARAM_NAMES[p] });
        }
    }
    let rates = lr.per_param();
    for (i, gaussian) in set.iter_mut().enumerate() {
        state.steps[i] += 1;
        let t = state.steps[i];
        let mut params = gaussian.to_params();
        let grad = grads[i].to_params();
        for p in 0..PARAMS_PER_GAUSSIAN {
            params[p] = adam_update(params[p], grad[p], &mut state.m[i][p], &mut state.v[i][p], rates[p], t);
        }
        let updated = crate::gaussian::Gaussian2D::from_params(&params);
        updated.check_finite(i)?;
        *gaussian = constrain_finite(&updated);
    }
    Ok(())
}
