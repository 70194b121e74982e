use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::graph::Gradients;
use super::model::Parameters;
use super::tensor::{Real, Tensor};

/// Momentum buffers keyed by parameter name, created lazily.
pub type Velocity<T> = BTreeMap<String, Tensor<T>>;

/// `v <- momentum * v + (g + l2 * p)`, then `p <- p - lr * v`, for every
/// parameter that has a gradient. Parameters without one are untouched.
pub fn sgd_momentum_step<T: Real>(
    params: &mut Parameters<T>,
    grads: &Gradients<T>,
    velocity: &mut Velocity<T>,
    lr: f64,
    momentum: f64,
    l2: f64,
) {
    let (lr, momentum, l2) = (T::of(lr), T::of(momentum), T::of(l2));
    for (name, g) in grads.iter() {
        let Some(p) = params.get_mut(name) else { continue };
        let v = velocity.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = momentum * *vv + (gv + l2 * *pv);
            *pv -= lr * *vv;
        }
    }
}

/// Linear warmup from 0 to `base_lr` over `warmup` epochs, then cosine decay
/// to 0 at `total`. `epoch` may be fractional.
pub fn lr_schedule(epoch: f64, total: f64, base_lr: f64, warmup: f64) -> f64 {
    if epoch < warmup {
        return base_lr * (epoch / warmup).max(0.0);
    }
    if epoch >= total || total <= warmup {
        return if epoch >= total { 0.0 } else { base_lr };
    }
    base_lr * 0.5 * (1.0 + (PI * (epoch - warmup) / (total - warmup)).cos())
}
