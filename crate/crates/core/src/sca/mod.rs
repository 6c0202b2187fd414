//! Successive convex approximation for maximum energy efficiency under
//! per-user rate floors and a transmit budget.
//!
//! The fractional objective is split into per-user shares `varpi_k` with
//! `varpi_k * P_total <= R_k`, expressed through exponential slacks:
//!
//! ```text
//! varpi_k <= e^{a_k}        P_total <= e^b        e^{a_k + b} <= c_k
//! 2^{c_k} - 1 <= e^{d_k}    e^{d_k + f_k} <= |h_k^H w_k|^2
//! sum_{i != k} |h_k^H w_i|^2 + sigma_k^2 <= e^{f_k}
//! ```
//!
//! Concave right-hand sides are replaced by first-order expansions at the
//! current iterate, and each convex surrogate is solved by a log-barrier
//! Newton method over the real and imaginary parts of the beams.

mod grid;
mod sub;

pub use grid::{grid_oracle, scalar_oracle, single_user_oracle, GridResult, GridSpec, GRID_MAX_USERS};
pub use sub::{barrier_solve, linearize, BarrierOptions, BarrierResult, Subproblem, VarLayout};

use serde::{Deserialize, Serialize};

use crate::error::{BeamError, Result};
use crate::linalg::{inner, lu_solve_real, CMatrix};
use crate::model::{check_feasibility, transmit_power, BeamSolution, ChannelSet, PerfReport, SystemConfig};
use crate::precoders::{direction_gains, mmse_directions, recover_beams};

/// Relative margin kept below the budget and above the rate floors at
/// initialization so the first surrogate has a strictly feasible start.
pub const INIT_MARGIN: f64 = 1e-6;
/// Perturbation separating the barrier start from the expansion point.
pub const START_OFFSET: f64 = 1e-7;

/// Beams plus the slack variables of the split fractional problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaState {
    pub w: CMatrix<f64>,
    pub varpi: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub f: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// MMSE directions, equal powers, rate floors repaired by power control.
    #[default]
    Mmse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaOptions {
    pub max_outer: usize,
    pub rel_tol: f64,
    pub mu: f64,
    pub t0: f64,
    /// Barrier stops when `constraints / t` drops below this.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub init: InitStrategy,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            max_outer: 50,
            rel_tol: 1e-5,
            mu: 10.0,
            t0: 1.0,
            newton_tol: 1e-8,
            max_newton: 50,
            init: InitStrategy::Mmse,
        }
    }
}

impl ScaOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 || self.max_newton == 0 {
            return Err(BeamError::Config("iteration limits must be positive".into()));
        }
        if !(self.rel_tol > 0.0 && self.t0 > 0.0 && self.newton_tol > 0.0 && self.mu > 1.0) {
            return Err(BeamError::Config("tolerances must be positive and mu > 1".into()));
        }
        Ok(())
    }

    fn barrier(&self) -> BarrierOptions {
        BarrierOptions {
            mu: self.mu,
            t0: self.t0,
            gap_tol: self.newton_tol,
            max_newton: self.max_newton,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaIterate {
    /// Sum of shares with slacks tightened at the accepted beams; equals
    /// their energy efficiency.
    pub objective: f64,
    /// Sum of shares returned by the surrogate solve (0 for the start).
    pub surrogate: f64,
    pub newton_steps: usize,
    /// Largest violation of the exact slack constraints by the surrogate
    /// solution (negative when strictly inside).
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxOuter,
    NoImprovement,
    SolverFailure(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaResult {
    pub solution: BeamSolution,
    pub report: PerfReport,
    pub state: ScaState,
    pub history: Vec<ScaIterate>,
    pub stop: StopReason,
}

impl ScaResult {
    /// Surrogate solves performed.
    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }
}

/// Interference-plus-noise and SINR per user.
fn link_terms(ch: &ChannelSet, cfg: &SystemConfig, w: &CMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let k = ch.k_users();
    let mut ipn = Vec::with_capacity(k);
    let mut sinr = Vec::with_capacity(k);
    for j in 0..k {
        let mut interf = cfg.noise_powers[j];
        let mut sig = 0.0;
        for i in 0..k {
            let g = inner(ch.user(j), w.row(i)).norm_sqr();
            if i == j {
                sig = g;
            } else {
                interf += g;
            }
        }
        ipn.push(interf);
        sinr.push(sig / interf);
    }
    (ipn, sinr)
}

/// Slacks set from their defining equalities at beams `w`, with the rate
/// target `c_k` equal to the achieved rate, so the sum of shares equals
/// the energy efficiency of `w`.
pub fn consistent_state(ch: &ChannelSet, cfg: &SystemConfig, w: &CMatrix<f64>) -> Result<ScaState> {
    let (ipn, sinr) = link_terms(ch, cfg, w);
    if let Some(k) = sinr.iter().position(|s| !(*s > 0.0)) {
        return Err(BeamError::Degenerate(format!("user {k} receives no signal")));
    }
    let total = transmit_power(w) + cfg.p_circuit;
    let rates: Vec<f64> = sinr.iter().map(|s| (1.0 + s).log2()).collect();
    Ok(ScaState {
        w: w.clone(),
        varpi: rates.iter().map(|r| r / total).collect(),
        a: rates.iter().map(|r| (r / total).ln()).collect(),
        b: total.ln(),
        c: rates,
        d: sinr.iter().map(|s| s.ln()).collect(),
        f: ipn.iter().map(|v| v.ln()).collect(),
    })
}

/// Largest violation of the exact (non-convex) slack constraints, the
/// rate floors and the budget. Non-positive means feasible.
pub fn slack_violation(ch: &ChannelSet, cfg: &SystemConfig, s: &ScaState) -> f64 {
    let k = ch.k_users();
    let tx = transmit_power(&s.w);
    let total = tx + cfg.p_circuit;
    let (ipn, sinr) = link_terms(ch, cfg, &s.w);
    let mut worst = tx - cfg.p_max;
    worst = worst.max(total - s.b.exp());
    for j in 0..k {
        let sig = sinr[j] * ipn[j];
        worst = worst
            .max((s.d[j] + s.f[j]).exp() - sig)
            .max(s.c[j].exp2() - 1.0 - s.d[j].exp())
            .max(ipn[j] - s.f[j].exp())
            .max(s.varpi[j] - s.a[j].exp())
            .max((s.a[j] + s.b).exp() - s.c[j])
            .max(cfg.rate_floors[j] - (1.0 + sinr[j]).log2())
            .max(-s.varpi[j]);
    }
    worst
}

/// Minimal powers meeting SINR targets `gamma` for fixed unit directions,
/// from `G_kk p_k - gamma_k sum_{i != k} G_ki p_i = gamma_k sigma_k^2`.
fn min_powers(gains: &[f64], k: usize, gamma: &[f64], noise: &[f64]) -> Option<Vec<f64>> {
    let mut a = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for j in 0..k {
        for i in 0..k {
            a[j * k + i] = if i == j { gains[j * k + j] } else { -gamma[j] * gains[j * k + i] };
        }
        rhs[j] = gamma[j] * noise[j];
    }
    lu_solve_real(&mut a, k, &mut rhs).ok()?;
    rhs.iter().all(|p| *p >= 0.0 && p.is_finite()).then_some(rhs)
}

/// Feasible starting beams and consistent slacks.
///
/// Uses MMSE directions with equal powers just inside the budget. When a
/// rate floor is missed, the minimal powers meeting all floors (with a
/// small margin) are solved for and scaled up uniformly to the budget.
pub fn sca_init(ch: &ChannelSet, cfg: &SystemConfig) -> Result<ScaState> {
    let k = ch.k_users();
    let dirs = mmse_directions(ch, cfg)?;
    let budget = cfg.p_max * (1.0 - INIT_MARGIN);
    let strictly_ok = |w: &CMatrix<f64>| {
        let (_, sinr) = link_terms(ch, cfg, w);
        sinr.iter()
            .zip(&cfg.rate_floors)
            .all(|(s, xi)| (1.0 + s).log2() > *xi && *s > 0.0)
    };
    let equal = recover_beams(&dirs, &vec![budget / k as f64; k])?;
    if strictly_ok(&equal.w) {
        return consistent_state(ch, cfg, &equal.w);
    }
    let gains = direction_gains(ch, &dirs.dirs);
    let gamma: Vec<f64> = cfg
        .rate_floors
        .iter()
        .map(|xi| (xi.exp2() - 1.0) * (1.0 + INIT_MARGIN))
        .collect();
    let p = min_powers(&gains, k, &gamma, &cfg.noise_powers)
        .ok_or_else(|| BeamError::Infeasible("rate floors unreachable with MMSE directions".into()))?;
    let sum: f64 = p.iter().sum();
    if !(sum < budget) {
        return Err(BeamError::Infeasible(format!(
            "rate floors need power {sum:.6} > budget {:.6} with MMSE directions",
            cfg.p_max
        )));
    }
    let scale = budget / sum;
    let beams = recover_beams(&dirs, &p.iter().map(|v| v * scale).collect::<Vec<_>>())?;
    if !strictly_ok(&beams.w) {
        return Err(BeamError::Infeasible("power control could not meet the rate floors".into()));
    }
    consistent_state(ch, cfg, &beams.w)
}

/// Strictly feasible barrier start near the consistent state `s`, which is
/// also the expansion point of the surrogate.
pub fn strict_start(s: &ScaState) -> ScaState {
    let dl = START_OFFSET;
    let f: Vec<f64> = s.f.iter().map(|v| v + dl).collect();
    let d: Vec<f64> = s.d.iter().map(|v| v - 2.0 * dl).collect();
    let c: Vec<f64> = s
        .d
        .iter()
        .map(|dt| (1.0 + dt.exp() * (1.0 - 2.0 * dl) * (1.0 - dl)).log2())
        .collect();
    let b = s.b + dl;
    let a: Vec<f64> = c.iter().map(|cv| cv.ln() - b - dl).collect();
    let varpi = a
        .iter()
        .zip(&s.a)
        .map(|(av, at)| at.exp() * (av - at + 1.0) * (1.0 - dl))
        .collect();
    ScaState {
        w: s.w.clone(),
        varpi,
        a,
        b,
        c,
        d,
        f,
    }
}

fn validate_instance(ch: &ChannelSet, cfg: &SystemConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.k_users() != ch.k_users() {
        return Err(BeamError::InvalidInput(format!(
            "configuration has {} users, channels have {}",
            cfg.k_users(),
            ch.k_users()
        )));
    }
    Ok(())
}

/// Runs the outer approximation loop from [`sca_init`].
pub fn sca_solve(ch: &ChannelSet, cfg: &SystemConfig, opts: &ScaOptions) -> Result<ScaResult> {
    opts.validate()?;
    validate_instance(ch, cfg)?;
    let mut state = sca_init(ch, cfg)?;
    let mut ee: f64 = state.varpi.iter().sum();
    let mut history = vec![ScaIterate {
        objective: ee,
        surrogate: 0.0,
        newton_steps: 0,
        violation: slack_violation(ch, cfg, &state),
    }];
    let layout = VarLayout {
        k: ch.k_users(),
        n: ch.n_antennas(),
    };
    let mut stop = StopReason::MaxOuter;
    for _ in 0..opts.max_outer {
        let sub = linearize(ch, cfg, &state);
        let start = layout.pack(&strict_start(&state));
        let res = match barrier_solve(&sub, &start, &opts.barrier()) {
            Ok(r) => r,
            Err(e) => {
                stop = StopReason::SolverFailure(e.to_string());
                break;
            }
        };
        let raw = layout.unpack(&res.z);
        let cand = match consistent_state(ch, cfg, &raw.w) {
            Ok(c) => c,
            Err(e) => {
                stop = StopReason::SolverFailure(e.to_string());
                break;
            }
        };
        let new_ee: f64 = cand.varpi.iter().sum();
        if !(new_ee >= ee) {
            stop = StopReason::NoImprovement;
            break;
        }
        let rel = (new_ee - ee) / ee.abs().max(f64::MIN_POSITIVE);
        history.push(ScaIterate {
            objective: new_ee,
            surrogate: res.objective,
            newton_steps: res.newton_steps,
            violation: slack_violation(ch, cfg, &raw),
        });
        state = cand;
        ee = new_ee;
        if rel < opts.rel_tol {
            stop = StopReason::Converged;
            break;
        }
    }
    let solution = BeamSolution::raw(state.w.clone());
    let report = check_feasibility(ch, &solution, cfg, crate::model::DEFAULT_RATE_TOL)?;
    Ok(ScaResult {
        solution,
        report,
        state,
        history,
        stop,
    })
}

#[cfg(test)]
mod tests;
