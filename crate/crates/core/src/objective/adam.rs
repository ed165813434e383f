use serde::{Deserialize, Serialize};

use crate::net::{Gradients, ModelParameters, Tensor};

use super::ObjectiveError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Rescale gradients whose global norm exceeds this; 0 disables.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, clip_norm: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParameters) -> AdamState {
        AdamState {
            m: params.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
            v: params.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
            t: 0,
        }
    }
}

/// One Adam step. A non-finite gradient aborts the step before anything is
/// modified.
pub fn optimize_step(
    params: &mut ModelParameters,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), ObjectiveError> {
    for (name, g) in params.names.iter().zip(&grads.grads) {
        if g.data.iter().any(|x| !x.is_finite()) {
            return Err(ObjectiveError::NaN(name.clone()));
        }
    }
    let scale = if cfg.clip_norm > 0.0 {
        let n = grads.norm();
        if n > cfg.clip_norm {
            cfg.clip_norm / n
        } else {
            1.0
        }
    } else {
        1.0
    };
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (((p, g), m), v) in params.tensors.iter_mut().zip(&grads.grads).zip(&mut state.m).zip(&mut state.v) {
        for k in 0..p.data.len() {
            let gk = g.data[k] * scale;
            m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * gk;
            v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * gk * gk;
            let step = (m.data[k] / bc1) / ((v.data[k] / bc2).sqrt() + cfg.eps);
            p.data[k] -= cfg.lr * (step + cfg.weight_decay * p.data[k]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use crate::rng;

    fn params() -> ModelParameters {
        let cfg = ModelConfig { embed_dim: 2, hidden_dim: 2, latent_dim: 2, n_layers: 1, ..ModelConfig::desk(4) };
        ModelParameters::init(cfg, &mut rng::seeded(0)).unwrap()
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut p = params();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let g = Gradients::zeros_like(&p.tensors);
        optimize_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    /// Reference update written out directly from the moment recursions.
    fn reference(w0: f64, grads: &[f64], cfg: &AdamConfig) -> f64 {
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for (t, &g) in grads.iter().enumerate() {
            let t = t as i32 + 1;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            w -= cfg.lr * (mh / (vh.sqrt() + cfg.eps) + cfg.weight_decay * w);
        }
        w
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        for g in [3.0, -0.02, 1e4] {
            let mut p = params();
            let w0 = p.tensors[0].data[0];
            let mut grads = Gradients::zeros_like(&p.tensors);
            grads.grads[0].data[0] = g;
            let mut s = AdamState::new(&p);
            optimize_step(&mut p, &grads, &mut s, &cfg).unwrap();
            let moved = p.tensors[0].data[0] - w0;
            // Bias correction makes the first step ±lr regardless of β.
            assert!((moved + cfg.lr * g.signum()).abs() < 1e-8 * cfg.lr.max(1.0) + cfg.lr * cfg.eps / g.abs());
            assert!((p.tensors[0].data[0] - reference(w0, &[g], &cfg)).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_reference_over_steps_with_decay() {
        let cfg = AdamConfig { weight_decay: 0.01, beta1: 0.8, ..Default::default() };
        let seq = [0.5, -1.0, 2.0, 0.1, 0.0, -0.3];
        let mut p = params();
        let w0 = p.tensors[1].data[0];
        let mut s = AdamState::new(&p);
        for &g in &seq {
            let mut grads = Gradients::zeros_like(&p.tensors);
            grads.grads[1].data[0] = g;
            optimize_step(&mut p, &grads, &mut s, &cfg).unwrap();
        }
        assert!((p.tensors[1].data[0] - reference(w0, &seq, &cfg)).abs() < 1e-14);
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let mut p = params();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let mut grads = Gradients::zeros_like(&p.tensors);
        grads.grads[0].data[0] = 1.0;
        grads.grads[2].data[0] = f64::NAN;
        let err = optimize_step(&mut p, &grads, &mut s, &AdamConfig::default()).unwrap_err();
        assert_eq!(err, ObjectiveError::NaN(p.names[2].clone()));
        assert_eq!(p, before);
        assert_eq!(s.t, 0);
    }
}
