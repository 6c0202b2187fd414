//! Exhaustive search over per-user powers (and hybrid coefficients) for
//! tiny instances, and a golden-section search for a single user.

use crate::error::{BeamError, Result};
use crate::linalg::norm_sqr;
use crate::model::{check_feasibility, BeamSolution, ChannelSet, PerfReport, Scheme, SystemConfig, DEFAULT_RATE_TOL};
use crate::precoders::{direction_gains, mmse_directions, recover_beams, DirectionSet, HzmBasis};

/// Largest user count the exhaustive search accepts.
pub const GRID_MAX_USERS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    /// Power levels `0, step, ..., P_max`.
    pub power_step: f64,
    /// Hybrid coefficients `0, step, ..., 1`.
    pub alpha_step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            power_step: 0.02,
            alpha_step: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub solution: BeamSolution,
    pub report: PerfReport,
    /// Power tuples evaluated.
    pub evaluated: usize,
}

fn levels(step: f64, span: f64, what: &str) -> Result<usize> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(BeamError::InvalidInput(format!("{what} step must be positive, got {step}")));
    }
    let g = (span / step).round();
    if g < 1.0 || g > 1e6 {
        return Err(BeamError::InvalidInput(format!("{what} step {step} gives {g} levels")));
    }
    Ok(g as usize)
}

/// Calls `f` with every tuple of `k` non-negative integers summing to at most `total`.
fn for_each_simplex(k: usize, total: usize, f: &mut dyn FnMut(&[usize])) {
    let mut idx = vec![0usize; k];
    loop {
        f(&idx);
        let mut pos = k;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx.iter().sum::<usize>() <= total {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Best feasible (EE, power tuple) for fixed unit directions with gains
/// `gains[j * k + i] = |h_j^H d_i|^2`.
fn best_powers(gains: &[f64], k: usize, g: usize, cfg: &SystemConfig, evaluated: &mut usize) -> Option<(f64, Vec<f64>)> {
    let step = |i: usize| cfg.p_max * (i as f64 / g as f64);
    let sinr_floor: Vec<f64> = cfg.rate_floors.iter().map(|x| (x - DEFAULT_RATE_TOL).exp2() - 1.0).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut p = vec![0.0; k];
    let mut sinr = vec![0.0; k];
    for_each_simplex(k, g, &mut |idx| {
        *evaluated += 1;
        for (pi, &i) in p.iter_mut().zip(idx) {
            *pi = step(i);
        }
        for j in 0..k {
            let row = &gains[j * k..(j + 1) * k];
            let mut interf = cfg.noise_powers[j];
            for i in 0..k {
                if i != j {
                    interf += p[i] * row[i];
                }
            }
            sinr[j] = p[j] * row[j] / interf;
            if sinr[j] < sinr_floor[j] {
                return;
            }
        }
        let rate: f64 = sinr.iter().map(|s| (1.0 + s).log2()).sum();
        let ee = rate / (p.iter().sum::<f64>() + cfg.p_circuit);
        if best.as_ref().map_or(true, |(b, _)| ee > *b) {
            best = Some((ee, p.clone()));
        }
    });
    best
}

/// Maximum-EE search restricted to MMSE or hybrid directions.
pub fn grid_oracle(ch: &ChannelSet, cfg: &SystemConfig, scheme: Scheme, grid: GridSpec) -> Result<GridResult> {
    cfg.validate()?;
    let k = ch.k_users();
    if k > GRID_MAX_USERS {
        return Err(BeamError::Capacity(format!(
            "exhaustive search supports at most {GRID_MAX_USERS} users, got {k}"
        )));
    }
    if cfg.k_users() != k {
        return Err(BeamError::InvalidInput("configuration and channel user counts differ".into()));
    }
    let g = levels(grid.power_step, cfg.p_max, "power")?;
    let mut evaluated = 0usize;
    let mut best: Option<(f64, Vec<f64>, DirectionSet)> = None;
    let mut consider = |dirs: DirectionSet, evaluated: &mut usize| {
        let gains = direction_gains(ch, &dirs.dirs);
        if let Some((ee, p)) = best_powers(&gains, k, g, cfg, evaluated) {
            if best.as_ref().map_or(true, |(b, _, _)| ee > *b) {
                best = Some((ee, p, dirs));
            }
        }
    };
    match scheme {
        Scheme::Mmse => consider(mmse_directions(ch, cfg)?, &mut evaluated),
        Scheme::Hzm => {
            let basis = HzmBasis::new(ch)?;
            let a = levels(grid.alpha_step, 1.0, "hybrid coefficient")?;
            let mut idx = vec![0usize; k];
            loop {
                let alphas: Vec<f64> = idx.iter().map(|&i| i as f64 / a as f64).collect();
                match basis.combine(&alphas) {
                    Ok(d) => consider(d, &mut evaluated),
                    Err(BeamError::Degenerate(_)) => {}
                    Err(e) => return Err(e),
                }
                let mut pos = k;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    idx[pos] += 1;
                    if idx[pos] <= a {
                        break;
                    }
                    idx[pos] = 0;
                }
                if idx.iter().all(|&i| i == 0) {
                    break;
                }
            }
        }
        Scheme::Raw => return Err(BeamError::InvalidInput("grid search needs a direction scheme".into())),
    }
    let (_, p, dirs) = best.ok_or_else(|| BeamError::Infeasible("no grid point meets the rate floors".into()))?;
    let solution = recover_beams(&dirs, &p)?;
    let report = check_feasibility(ch, &solution, cfg, DEFAULT_RATE_TOL)?;
    Ok(GridResult {
        solution,
        report,
        evaluated,
    })
}

/// Golden-section maximization of `log2(1 + p g / noise) / (p + p_circuit)`
/// over `p` in `[p_min, p_max]`, where `p_min` meets the rate floor `xi`.
/// Returns `(p, ee)`.
pub fn scalar_oracle(gain: f64, noise: f64, p_circuit: f64, p_max: f64, xi: f64, tol: f64) -> Result<(f64, f64)> {
    if !(gain > 0.0 && noise > 0.0 && p_max > 0.0 && p_circuit >= 0.0) {
        return Err(BeamError::InvalidInput("scalar search needs positive gain, noise and budget".into()));
    }
    let ee = |p: f64| (1.0 + p * gain / noise).log2() / (p + p_circuit);
    let p_min = (xi.exp2() - 1.0).max(0.0) * noise / gain;
    if p_min > p_max {
        return Err(BeamError::Infeasible(format!("rate floor needs power {p_min} > budget {p_max}")));
    }
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (p_min, p_max);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (ee(x1), ee(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = ee(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = ee(x1);
        }
    }
    let mut best = (0.5 * (lo + hi), ee(0.5 * (lo + hi)));
    for p in [p_min, p_max] {
        if p > 0.0 && ee(p) > best.1 {
            best = (p, ee(p));
        }
    }
    Ok(best)
}

/// Scalar search for a single-user channel set.
pub fn single_user_oracle(ch: &ChannelSet, cfg: &SystemConfig) -> Result<(f64, f64)> {
    if ch.k_users() != 1 {
        return Err(BeamError::InvalidInput("single-user search needs K = 1".into()));
    }
    scalar_oracle(
        norm_sqr(ch.user(0)),
        cfg.noise_powers[0],
        cfg.p_circuit,
        cfg.p_max,
        cfg.rate_floors[0],
        1e-12,
    )
}
