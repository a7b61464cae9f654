use std::collections::BTreeMap;

use super::params::{Gradients, Moments, Params};
use super::{NnError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateRule {
    Sgd,
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub rule: UpdateRule,
    pub learning_rate: f32,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub max_grad_norm: Option<f32>,
}

impl OptimConfig {
    pub fn sgd(learning_rate: f32) -> Self {
        Self { rule: UpdateRule::Sgd, learning_rate, max_grad_norm: None }
    }

    pub fn adam(learning_rate: f32) -> Self {
        Self { rule: UpdateRule::adam(), learning_rate, max_grad_norm: None }
    }
}

/// Applies one update in place and increments the step counter.
pub fn opt_step(params: &mut Params, grads: &Gradients, config: &OptimConfig) -> Result<(), NnError> {
    if !(config.learning_rate > 0.0) || !config.learning_rate.is_finite() {
        return Err(NnError::config(None, format!("learning rate {} must be positive", config.learning_rate)));
    }
    if grads.0.len() != params.weights.len()
        || grads.0.iter().any(|(k, g)| params.weights.get(k).map(Tensor::shape) != Some(g.shape()))
    {
        return Err(NnError::Usage("gradients are not keyed like the parameters".into()));
    }
    let clip = match config.max_grad_norm {
        Some(max) if max > 0.0 => {
            let norm = grads.global_norm() as f32;
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        _ => 1.0,
    };
    let lr = config.learning_rate;
    match config.rule {
        UpdateRule::Sgd => {
            for (name, w) in params.weights.iter_mut() {
                let g = grads.0[name].data();
                for (wv, gv) in w.data_mut().iter_mut().zip(g) {
                    *wv -= lr * (clip * gv);
                }
            }
        }
        UpdateRule::Adam { beta1, beta2, eps } => {
            let moments = params.moments.get_or_insert_with(|| {
                let zeros = |p: &BTreeMap<String, Tensor>| {
                    p.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec()))).collect()
                };
                Moments { first: zeros(&params.weights), second: zeros(&params.weights) }
            });
            let t = (params.step + 1) as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (name, w) in params.weights.iter_mut() {
                let g = grads.0[name].data();
                let m = moments.first.get_mut(name).unwrap().data_mut();
                let v = moments.second.get_mut(name).unwrap().data_mut();
                for (((wv, gv), mv), vv) in w.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    let gv = clip * gv;
                    *mv = beta1 * *mv + (1.0 - beta1) * gv;
                    *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                    *wv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                }
            }
        }
    }
    params.step += 1;
    Ok(())
}
