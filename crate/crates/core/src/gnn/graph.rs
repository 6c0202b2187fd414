//! Builds the network and the penalized energy-efficiency loss on a tape.

use std::collections::HashMap;

use crate::autodiff::{CVar, Tape, Tensor, Var};
use crate::error::{BeamError, Result};
use crate::model::Scheme;
use crate::scalar::Real;

use super::arch::{head_width, AlphaSign, CgalSpec, Topology};
use super::batch::Batch;
use super::params::{bn_layers, BnStats, GnnParams};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Which statistics batch normalization uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Statistics of the current batch; reported back for running averages.
    Batch,
    /// Stored running statistics.
    Running,
}

/// Parameter blocks registered on a tape, addressable by name.
pub struct Bound {
    pub vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    /// Registers all blocks; as leaves when `trainable`, as constants otherwise.
    pub fn new<T: Real>(tape: &mut Tape<T>, params: &GnnParams<T>, trainable: bool) -> Self {
        let mut vars = Vec::with_capacity(params.blocks.len());
        let mut index = HashMap::with_capacity(params.blocks.len());
        for (i, b) in params.blocks.iter().enumerate() {
            let t = b.tensor();
            vars.push(if trainable { tape.param(t) } else { tape.constant(t) });
            index.insert(b.name.clone(), i);
        }
        Self { vars, index }
    }

    /// Uses already registered variables, one per block in order.
    pub fn from_vars<T: Real>(params: &GnnParams<T>, vars: Vec<Var>) -> Self {
        let index = params.blocks.iter().enumerate().map(|(i, b)| (b.name.clone(), i)).collect();
        Self { vars, index }
    }

    fn get(&self, name: &str) -> Var {
        self.vars[*self.index.get(name).unwrap_or_else(|| panic!("missing block {name}"))]
    }

    fn cget(&self, prefix: &str) -> CVar {
        CVar {
            re: self.get(&format!("{prefix}.re")),
            im: self.get(&format!("{prefix}.im")),
        }
    }
}

/// Head outputs of one scheme branch, one row per user.
#[derive(Clone, Copy, Debug)]
pub struct BranchVars {
    pub scheme: Scheme,
    pub raw_power: Var,
    pub raw_alpha: Option<Var>,
    pub power: Var,
    pub alpha: Option<Var>,
}

pub struct NetGraph<T> {
    pub branches: Vec<BranchVars>,
    /// Batch statistics per normalized layer, filled in [`BnMode::Batch`].
    pub bn_batch: Vec<Option<BnStats<T>>>,
    /// Attention weights per attention layer and head, `rows x K`.
    pub attention: Vec<Vec<Var>>,
}

fn pair_indices(rows: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut ii = Vec::with_capacity(rows * k);
    let mut jj = Vec::with_capacity(rows * k);
    for r in 0..rows {
        let base = r - r % k;
        for j in 0..k {
            ii.push(r);
            jj.push(base + j);
        }
    }
    (ii, jj)
}

/// One attention layer over `rows = N * K` node rows grouped by sample.
pub(crate) fn cgal_layer<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    l: usize,
    spec: &CgalSpec,
    x: CVar,
    k: usize,
    crelu: bool,
    residual: bool,
) -> Result<(CVar, Vec<Var>)> {
    let (rows, width) = tape.shape(x.re);
    if width != spec.in_dim {
        return Err(BeamError::Shape {
            op: "attention layer input",
            lhs: (rows, width),
            rhs: (rows, spec.in_dim),
        });
    }
    let (ii, jj) = pair_indices(rows, k);
    let mut heads = Vec::with_capacity(spec.heads);
    let mut gammas = Vec::with_capacity(spec.heads);
    for d in 0..spec.heads {
        let p = format!("cgal{l}.h{d}");
        let s = tape.c_matmul(x, bound.cget(&format!("{p}.ws")))?;
        let n = tape.c_matmul(x, bound.cget(&format!("{p}.wn")))?;
        let m = tape.c_matmul(x, bound.cget(&format!("{p}.wm")))?;
        let si = tape.c_gather_rows(s, ii.clone())?;
        let nj = tape.c_gather_rows(n, jj.clone())?;
        let e = tape.c_add(si, nj)?;
        let e = tape.c_leaky_relu(e);
        let score = tape.c_matmul(e, bound.cget(&format!("{p}.a")))?;
        let score = tape.c_modulus(score)?;
        let score = tape.reshape(score, rows, k)?;
        let gamma = tape.softmax_rows(score);
        gammas.push(gamma);
        let g = tape.reshape(gamma, rows * k, 1)?;
        let mj = tape.c_gather_rows(m, jj.clone())?;
        let msg = tape.c_row_scale(mj, g)?;
        heads.push(tape.c_group_sum(msg, k)?);
    }
    let mut out = tape.c_concat_cols(&heads)?;
    if crelu {
        out = tape.c_relu(out);
    }
    if residual {
        let skip = if spec.in_dim == spec.concat_dim() {
            x
        } else {
            tape.c_matmul(x, bound.cget(&format!("cgal{l}.skip")))?
        };
        out = tape.c_add(out, skip)?;
    }
    Ok((out, gammas))
}

/// Dense complex layer with a real weight: `W (1 + j) x`, row-wise.
pub(crate) fn cfcl<T: Real>(tape: &mut Tape<T>, x: CVar, w: Var) -> Result<CVar> {
    let diff = tape.sub(x.re, x.im)?;
    let sum = tape.add(x.im, x.re)?;
    Ok(CVar {
        re: tape.matmul(diff, w)?,
        im: tape.matmul(sum, w)?,
    })
}

fn broadcast_row<T: Real>(tape: &mut Tape<T>, v: Var, rows: usize) -> Result<Var> {
    tape.gather_rows(v, vec![0; rows])
}

/// Normalizes each column of `v`; returns the output and, in batch mode,
/// the batch mean and variance.
fn bn_part<T: Real>(
    tape: &mut Tape<T>,
    v: Var,
    gamma: Var,
    beta: Var,
    mode: BnMode,
    running: (&[T], &[T]),
) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
    let (rows, cols) = tape.shape(v);
    let eps = T::lit(BN_EPS);
    let (xn, stats) = match mode {
        BnMode::Batch => {
            let avg = tape.constant(Tensor::full(1, rows, T::one() / T::lit(rows as f64)));
            let mean = tape.matmul(avg, v)?;
            let mb = broadcast_row(tape, mean, rows)?;
            let cen = tape.sub(v, mb)?;
            let sq = tape.square(cen);
            let var = tape.matmul(avg, sq)?;
            let stats = (tape.value(mean).data.clone(), tape.value(var).data.clone());
            let sd = tape.add_scalar(var, eps);
            let sd = tape.sqrt(sd);
            let inv = tape.recip(sd);
            let ib = broadcast_row(tape, inv, rows)?;
            (tape.mul(cen, ib)?, Some(stats))
        }
        BnMode::Running => {
            let (mean, var) = running;
            let mut shift = Tensor::zeros(rows, cols);
            let mut scale = Tensor::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    shift.data[r * cols + c] = mean[c];
                    scale.data[r * cols + c] = T::one() / (var[c] + eps).sqrt();
                }
            }
            let shift = tape.constant(shift);
            let scale = tape.constant(scale);
            let cen = tape.sub(v, shift)?;
            (tape.mul(cen, scale)?, None)
        }
    };
    let g = broadcast_row(tape, gamma, rows)?;
    let b = broadcast_row(tape, beta, rows)?;
    let y = tape.mul(xn, g)?;
    Ok((tape.add(y, b)?, stats))
}

/// `p * P_max / max(sum p, P_max)` per sample, groups of `k` rows.
pub(crate) fn project_power<T: Real>(tape: &mut Tape<T>, raw: Var, k: usize, p_max: T) -> Result<Var> {
    let rows = tape.shape(raw).0;
    let total = tape.group_sum(raw, k)?;
    let denom = tape.max_scalar(total, p_max);
    let inv = tape.recip(denom);
    let ratio = tape.scale(inv, p_max);
    let spread = tape.gather_rows(ratio, (0..rows).map(|r| r / k).collect())?;
    tape.mul(raw, spread)
}

pub(crate) fn alpha_sigmoid<T: Real>(tape: &mut Tape<T>, raw: Var, sign: AlphaSign) -> Var {
    match sign {
        AlphaSign::AsPrinted => {
            let n = tape.neg(raw);
            tape.sigmoid(n)
        }
        AlphaSign::Standard => tape.sigmoid(raw),
    }
}

/// Forward pass for the requested branches.
pub fn build<T: Real>(
    tape: &mut Tape<T>,
    params: &GnnParams<T>,
    bound: &Bound,
    batch: &Batch<'_, T>,
    branches: &[Scheme],
    bn_mode: BnMode,
) -> Result<NetGraph<T>> {
    let arch = &params.arch;
    let k = batch.k_users;
    if batch.n_antennas != arch.input_dim {
        return Err(BeamError::Shape {
            op: "network input",
            lhs: (k, batch.n_antennas),
            rhs: (k, arch.input_dim),
        });
    }
    let mut x = tape.cconstant(batch.x.clone());
    let mut attention = Vec::with_capacity(arch.cgal.len());
    if arch.topology == Topology::Graph {
        for (l, spec) in arch.cgal.iter().enumerate() {
            let (y, g) = cgal_layer(tape, bound, l, spec, x, k, arch.cgal_crelu, arch.residual)?;
            x = y;
            attention.push(g);
        }
    }
    let bn_index = bn_layers(arch);
    let mut bn_batch: Vec<Option<BnStats<T>>> = vec![None; bn_index.len()];
    let mut out = Vec::with_capacity(branches.len());
    for &scheme in branches {
        if !arch.has_branch(scheme) {
            return Err(BeamError::Config(format!("architecture has no {scheme} branch")));
        }
        let mut h = x;
        let depth = arch.cfcl.len() - 1;
        for t in 0..depth {
            let p = format!("{scheme}.cfcl{t}");
            let mut y = cfcl(tape, h, bound.get(&format!("{p}.w")))?;
            if arch.batch_norm {
                let slot = bn_index
                    .iter()
                    .position(|(s, tt, _)| *s == scheme && *tt == t)
                    .expect("normalization slot");
                let run = &params.bn[slot];
                let (re, sr) = bn_part(
                    tape,
                    y.re,
                    bound.get(&format!("{p}.bn.gamma_re")),
                    bound.get(&format!("{p}.bn.beta_re")),
                    bn_mode,
                    (&run.mean_re, &run.var_re),
                )?;
                let (im, si) = bn_part(
                    tape,
                    y.im,
                    bound.get(&format!("{p}.bn.gamma_im")),
                    bound.get(&format!("{p}.bn.beta_im")),
                    bn_mode,
                    (&run.mean_im, &run.var_im),
                )?;
                y = CVar { re, im };
                if let (Some((mr, vr)), Some((mi, vi))) = (sr, si) {
                    bn_batch[slot] = Some(BnStats {
                        mean_re: mr,
                        var_re: vr,
                        mean_im: mi,
                        var_im: vi,
                    });
                }
            }
            h = tape.c_relu(y);
        }
        let o = cfcl(tape, h, bound.get(&format!("{scheme}.out.w")))?;
        let width = head_width(scheme);
        let mut re = o.re;
        if let Topology::Flat { .. } = arch.topology {
            let rows = tape.shape(re).0;
            re = tape.reshape(re, rows * k, width)?;
        }
        let p_col = tape.slice_cols(re, 0, 1)?;
        let raw_power = tape.abs(p_col);
        let power = project_power(tape, raw_power, k, batch.p_max)?;
        let (raw_alpha, alpha) = if width == 2 {
            let a_col = tape.slice_cols(re, 1, 1)?;
            let ra = tape.abs(a_col);
            (Some(ra), Some(alpha_sigmoid(tape, ra, arch.alpha_sign)))
        } else {
            (None, None)
        };
        out.push(BranchVars {
            scheme,
            raw_power,
            raw_alpha,
            power,
            alpha,
        });
    }
    Ok(NetGraph {
        branches: out,
        bn_batch,
        attention,
    })
}

/// Differentiable per-sample metrics of one branch.
pub struct LossVars {
    /// Mean penalized loss over the batch, `1 x 1`.
    pub loss: Var,
    /// Energy efficiency per sample, `N x 1`.
    pub ee: Var,
    /// Rates, one row per user.
    pub rates: Var,
    /// Penalized loss per sample, `N x 1`.
    pub per_sample: Var,
}

/// `mean_n(-EE_n + lambda * sum_k relu(floor_k - R_k))`.
pub fn branch_loss<T: Real>(
    tape: &mut Tape<T>,
    batch: &Batch<'_, T>,
    br: &BranchVars,
    lambda: T,
) -> Result<LossVars> {
    let k = batch.k_users;
    let rows = batch.len() * k;
    let by_beam: Vec<usize> = (0..rows * k).map(|r| (r / (k * k)) * k + r % k).collect();
    let pg = tape.gather_rows(br.power, by_beam.clone())?;
    let gains = match br.scheme {
        Scheme::Mmse => {
            let c = batch
                .mmse
                .as_ref()
                .ok_or_else(|| BeamError::InvalidInput("batch lacks MMSE constants".into()))?;
            let d = tape.constant(c.gain.clone());
            tape.mul(pg, d)?
        }
        Scheme::Hzm => {
            let c = batch
                .hzm
                .as_ref()
                .ok_or_else(|| BeamError::InvalidInput("batch lacks hybrid constants".into()))?;
            let alpha = br.alpha.expect("hybrid branch has coefficients");
            let ag = tape.gather_rows(alpha, by_beam)?;
            let mut mix = |u: &Tensor<T>, g: &Tensor<T>| -> Result<Var> {
                let diff = Tensor {
                    rows: u.rows,
                    cols: 1,
                    data: u.data.iter().zip(&g.data).map(|(a, b)| *a - *b).collect(),
                };
                let diff = tape.constant(diff);
                let base = tape.constant(g.clone());
                let t = tape.mul(ag, diff)?;
                tape.add(t, base)
            };
            let re = mix(&c.zf_re, &c.mrt_re)?;
            let im = mix(&c.zf_im, &c.mrt_im)?;
            let r2 = tape.square(re);
            let i2 = tape.square(im);
            let mag = tape.add(r2, i2)?;
            // ||alpha u + (1 - alpha) g||^2 = 1 - 2 (1 - c) alpha (1 - alpha)
            let na = tape.neg(alpha);
            let om = tape.add_scalar(na, T::one());
            let q = tape.mul(alpha, om)?;
            let w = tape.constant(c.overlap.map(|v| T::lit(2.0) * (T::one() - v)));
            let q = tape.mul(q, w)?;
            let nq = tape.neg(q);
            let norm = tape.add_scalar(nq, T::one());
            let ng = tape.gather_rows(norm, (0..rows * k).map(|r| (r / (k * k)) * k + r % k).collect())?;
            let g = tape.div(mag, ng)?;
            tape.mul(pg, g)?
        }
        Scheme::Raw => return Err(BeamError::InvalidInput("raw beams have no branch".into())),
    };
    let total = tape.group_sum(gains, k)?;
    let signal = tape.gather_rows(gains, (0..rows).map(|r| r * k + r % k).collect())?;
    let interference = tape.sub(total, signal)?;
    let noise = tape.constant(batch.noise.clone());
    let den = tape.add(interference, noise)?;
    let sinr = tape.div(signal, den)?;
    let one_plus = tape.add_scalar(sinr, T::one());
    let rates = tape.log2(one_plus);
    let sum_rate = tape.group_sum(rates, k)?;
    let tx = tape.group_sum(br.power, k)?;
    let power = tape.add_scalar(tx, batch.p_circuit);
    let ee = tape.div(sum_rate, power)?;
    let floors = tape.constant(batch.floors.clone());
    let short = tape.sub(floors, rates)?;
    let short = tape.relu(short);
    let pen = tape.group_sum(short, k)?;
    let pen = tape.scale(pen, lambda);
    let per_sample = tape.sub(pen, ee)?;
    let loss = tape.mean(per_sample);
    Ok(LossVars {
        loss,
        ee,
        rates,
        per_sample,
    })
}
