//! Central finite-difference check of tape gradients.

use crate::error::Result;
use crate::scalar::Real;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Per-input comparison between the analytic and numeric gradient.
#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub index: usize,
    /// `max_i |a_i - n_i| / max(max_i |n_i|, max_i |a_i|, floor)`.
    pub rel_error: f64,
    pub max_abs_grad: f64,
    /// Entries judged one-sided because a kink lies within the step.
    pub kinks: usize,
}

/// Relative gap between forward and backward slopes that marks a kink.
const KINK_GAP: f64 = 1e-2;

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `h`, for every input block.
///
/// The error of a block is its infinity-norm discrepancy relative to the
/// block's largest gradient entry, so blocks whose gradient is uniformly
/// tiny are compared against `floor` instead.
///
/// When the forward and backward slopes of an entry disagree by more than
/// a smooth function allows, the step straddles a kink (a relu-type
/// switch); that entry is then checked against the closer second-order one-sided
/// difference.
pub fn check_gradients<T, F>(inputs: &[Tensor<T>], h: T, floor: f64, f: F) -> Result<Vec<BlockCheck>>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let centre = tape.value(loss).data[0].as_f64();

    let eval = |perturbed: &[Tensor<T>]| -> Result<f64> {
        let mut t = Tape::new();
        let v: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &v)?;
        Ok(t.value(l).data[0].as_f64())
    };

    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for (b, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let mut max_diff = 0.0_f64;
        let mut max_num = 0.0_f64;
        let mut kinks = 0;
        for i in 0..inputs[b].len() {
            let orig = work[b].data[i];
            work[b].data[i] = orig + h;
            let up = eval(&work)?;
            work[b].data[i] = orig - h;
            let down = eval(&work)?;
            work[b].data[i] = orig;
            let step = h.as_f64();
            let a = analytic.data[i].as_f64();
            let numeric = (up - down) / (2.0 * step);
            let (fwd, bwd) = ((up - centre) / step, (centre - down) / step);
            let mut diff = (numeric - a).abs();
            if (fwd - bwd).abs() > KINK_GAP * fwd.abs().max(bwd.abs()).max(1.0) {
                work[b].data[i] = orig + h + h;
                let far_up = eval(&work)?;
                work[b].data[i] = orig - h - h;
                let far_down = eval(&work)?;
                work[b].data[i] = orig;
                let right = (4.0 * up - 3.0 * centre - far_up) / (2.0 * step);
                let left = (3.0 * centre - 4.0 * down + far_down) / (2.0 * step);
                let one_sided = (right - a).abs().min((left - a).abs());
                if one_sided < diff {
                    diff = one_sided;
                    kinks += 1;
                }
            }
            max_num = max_num.max(numeric.abs());
            max_diff = max_diff.max(diff);
        }
        let max_an = analytic.max_abs().as_f64();
        out.push(BlockCheck {
            index: b,
            rel_error: max_diff / max_num.max(max_an).max(floor),
            max_abs_grad: max_an,
            kinks,
        });
    }
    Ok(out)
}
