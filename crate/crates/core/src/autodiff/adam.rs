use serde::{Deserialize, Serialize};

use crate::error::{BeamError, Result};
use crate::scalar::Real;

/// Bias-corrected Adam moments for a list of flat parameter blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T = f64> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Moments shaped after `sizes`, with learning rate `lr` and the
    /// customary `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(sizes: &[usize], lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }
}

/// One Adam update. Nothing is modified when any gradient entry is
/// non-finite; the error carries `batch` so the caller can abort cleanly.
pub fn adam_step<T: Real>(
    params: &mut [Vec<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    batch: usize,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(BeamError::Shape {
            op: "adam_step",
            lhs: (params.len(), 0),
            rhs: (grads.len(), state.m.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(BeamError::Shape {
                op: "adam_step block",
                lhs: (p.len(), i),
                rhs: (g.len(), state.m[i].len()),
            });
        }
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(BeamError::TrainingAbort { batch });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= state.lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}
