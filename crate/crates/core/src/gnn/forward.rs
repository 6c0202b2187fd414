//! Inference: head activations, beam recovery and scheme selection.

use serde::{Deserialize, Serialize};

use crate::autodiff::{CTensor, Tape, Tensor};
use crate::error::{BeamError, Result};
use crate::model::{check_feasibility, BeamSolution, ChannelSet, PerfReport, Scheme, SystemConfig, DEFAULT_RATE_TOL};
use crate::precoders::recover_beams;
use crate::scalar::Real;

use super::arch::{AlphaSign, Topology};
use super::batch::Batch;
use super::graph::{build, cgal_layer, Bound, BnMode};
use super::params::GnnParams;

/// EE differences at or below this are ties, resolved towards MMSE.
pub const SELECT_TIE: f64 = 1e-12;

/// Which branches run and whether the selector chooses between them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mmse,
    Hzm,
    Select,
}

impl Mode {
    pub fn branches(self) -> Vec<Scheme> {
        match self {
            Mode::Mmse => vec![Scheme::Mmse],
            Mode::Hzm => vec![Scheme::Hzm],
            Mode::Select => vec![Scheme::Mmse, Scheme::Hzm],
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = BeamError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmse" => Ok(Mode::Mmse),
            "hzm" => Ok(Mode::Hzm),
            "select" | "both" => Ok(Mode::Select),
            _ => Err(BeamError::Config(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchOutput<T = f64> {
    pub scheme: Scheme,
    pub raw_power: Vec<T>,
    pub raw_alpha: Option<Vec<T>>,
    pub powers: Vec<T>,
    pub alphas: Option<Vec<T>>,
    pub solution: BeamSolution<T>,
    pub report: PerfReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T = f64> {
    pub branches: Vec<BranchOutput<T>>,
    pub selected: usize,
    /// Whether the selected branch meets every constraint.
    pub feasible: bool,
}

impl<T: Real> ForwardOutput<T> {
    pub fn chosen(&self) -> &BranchOutput<T> {
        &self.branches[self.selected]
    }

    pub fn scheme(&self) -> Scheme {
        self.chosen().scheme
    }

    pub fn ee(&self) -> f64 {
        self.chosen().report.ee
    }

    pub fn branch(&self, s: Scheme) -> Option<&BranchOutput<T>> {
        self.branches.iter().find(|b| b.scheme == s)
    }
}

/// `|Re(out)|`.
pub fn head_decode<T: Real>(re_out: &[T]) -> Vec<T> {
    re_out.iter().map(|v| v.abs()).collect()
}

/// Rescales `raw` onto the budget when its sum exceeds `p_max`.
pub fn power_activation<T: Real>(raw: &[T], p_max: T) -> Vec<T> {
    let s: T = raw.iter().copied().sum();
    if s <= p_max {
        raw.to_vec()
    } else {
        raw.iter().map(|p| *p * p_max / s).collect()
    }
}

pub fn alpha_activation<T: Real>(raw: T, sign: AlphaSign) -> T {
    match sign {
        AlphaSign::AsPrinted => T::one() / (T::one() + raw.exp()),
        AlphaSign::Standard => T::one() / (T::one() + (-raw).exp()),
    }
}

/// Candidate outcome of one scheme for selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub scheme: Scheme,
    pub ee: f64,
    pub feasible: bool,
}

/// Index of the preferred candidate and whether it is feasible.
///
/// Feasible candidates beat infeasible ones; among equals the larger EE
/// wins and ties within [`SELECT_TIE`] go to MMSE.
pub fn select_scheme(cands: &[Candidate]) -> Option<(usize, bool)> {
    let any_feasible = cands.iter().any(|c| c.feasible);
    let mut best: Option<usize> = None;
    for (i, c) in cands.iter().enumerate() {
        if any_feasible && !c.feasible {
            continue;
        }
        best = Some(match best {
            None => i,
            Some(b) => {
                let cb = &cands[b];
                let diff = c.ee - cb.ee;
                if diff > SELECT_TIE || (diff.abs() <= SELECT_TIE && c.scheme == Scheme::Mmse && cb.scheme != Scheme::Mmse) {
                    i
                } else {
                    b
                }
            }
        });
    }
    best.map(|b| (b, any_feasible))
}

fn col<T: Real>(t: &Tensor<T>, rows: std::ops::Range<usize>) -> Vec<T> {
    t.data[rows].to_vec()
}

/// Runs the network on samples sharing one user count.
pub fn forward_batch<T: Real>(
    params: &GnnParams<T>,
    samples: &[&ChannelSet<T>],
    cfgs: &[SystemConfig],
    mode: Mode,
) -> Result<Vec<ForwardOutput<T>>> {
    let branches = mode.branches();
    for b in &branches {
        if !params.arch.has_branch(*b) {
            return Err(BeamError::Config(format!("architecture has no {b} branch")));
        }
    }
    let batch = Batch::new(samples, cfgs, &branches, params.arch.topology)?;
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let net = build(&mut tape, params, &bound, &batch, &branches, BnMode::Running)?;
    let k = batch.k_users;
    let mut out = Vec::with_capacity(batch.len());
    for n in 0..batch.len() {
        let rows = n * k..(n + 1) * k;
        let mut outs = Vec::with_capacity(net.branches.len());
        for br in &net.branches {
            let raw_power = col(tape.value(br.raw_power), rows.clone());
            let powers = col(tape.value(br.power), rows.clone());
            if powers.iter().any(|p| !p.is_finite()) {
                return Err(BeamError::NonFinite {
                    sample: n,
                    what: "network power output".into(),
                });
            }
            let raw_alpha = br.raw_alpha.map(|v| col(tape.value(v), rows.clone()));
            let alphas = br.alpha.map(|v| col(tape.value(v), rows.clone()));
            let dirs = match br.scheme {
                Scheme::Mmse => batch.mmse.as_ref().expect("mmse constants").dirs[n].clone(),
                _ => batch.hzm.as_ref().expect("hybrid constants").bases[n]
                    .combine(alphas.as_ref().expect("hybrid coefficients"))?,
            };
            let solution = recover_beams(&dirs, &powers)?;
            let report = check_feasibility(samples[n], &solution, &cfgs[n], DEFAULT_RATE_TOL)?;
            outs.push(BranchOutput {
                scheme: br.scheme,
                raw_power,
                raw_alpha,
                powers,
                alphas,
                solution,
                report,
            });
        }
        let cands: Vec<Candidate> = outs
            .iter()
            .map(|b| Candidate {
                scheme: b.scheme,
                ee: b.report.ee,
                feasible: b.report.feasible,
            })
            .collect();
        let (selected, feasible) = select_scheme(&cands).expect("at least one branch");
        out.push(ForwardOutput {
            branches: outs,
            selected,
            feasible,
        });
    }
    Ok(out)
}

/// Runs the network on one channel set.
pub fn full_forward<T: Real>(
    ch: &ChannelSet<T>,
    cfg: &SystemConfig,
    params: &GnnParams<T>,
    mode: Mode,
) -> Result<ForwardOutput<T>> {
    Ok(forward_batch(params, &[ch], std::slice::from_ref(cfg), mode)?.remove(0))
}

/// Dense baseline: rejects any user count other than the trained one.
pub fn mlp_forward<T: Real>(
    ch: &ChannelSet<T>,
    cfg: &SystemConfig,
    params: &GnnParams<T>,
    mode: Mode,
) -> Result<ForwardOutput<T>> {
    match params.arch.topology {
        Topology::Flat { .. } => full_forward(ch, cfg, params, mode),
        Topology::Graph => Err(BeamError::Config("parameters describe a graph network".into())),
    }
}

/// Output and attention weights of attention layer `l` applied to node
/// features `x` (rows grouped by `k_users`).
pub fn cgal_forward<T: Real>(
    params: &GnnParams<T>,
    l: usize,
    x: &CTensor<T>,
    k_users: usize,
) -> Result<(CTensor<T>, Vec<Tensor<T>>)> {
    let spec = params
        .arch
        .cgal
        .get(l)
        .ok_or_else(|| BeamError::InvalidInput(format!("no attention layer {l}")))?;
    if k_users == 0 || x.shape().0 % k_users != 0 {
        return Err(BeamError::Shape {
            op: "attention grouping",
            lhs: x.shape(),
            rhs: (k_users, 0),
        });
    }
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let xv = tape.cconstant(x.clone());
    let (y, g) = cgal_layer(&mut tape, &bound, l, spec, xv, k_users, params.arch.cgal_crelu, params.arch.residual)?;
    Ok((tape.cvalue(y), g.into_iter().map(|v| tape.value(v).clone()).collect()))
}
