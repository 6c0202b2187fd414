//! System model: per-user achievable rate, total consumed power, energy
//! efficiency and the QoS / power-budget feasibility check.
//!
//! Inputs may be stored in any [`Real`] precision; every metric is
//! evaluated in `f64`.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{BeamError, Result};
use crate::linalg::{inner, norm_sqr, CMatrix};
use crate::scalar::Real;

/// Absolute slack allowed on the transmit power budget.
pub const TOL_POWER: f64 = 1e-9;
/// Default slack on the per-user rate floors.
pub const DEFAULT_RATE_TOL: f64 = 1e-6;

/// Power budget, circuit power, noise powers and rate floors of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub p_max: f64,
    pub p_circuit: f64,
    pub noise_powers: Vec<f64>,
    pub rate_floors: Vec<f64>,
}

impl SystemConfig {
    pub fn new(
        p_max: f64,
        p_circuit: f64,
        noise_powers: Vec<f64>,
        rate_floors: Vec<f64>,
    ) -> Result<Self> {
        let cfg = Self {
            p_max,
            p_circuit,
            noise_powers,
            rate_floors,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Identical noise power and rate floor for all `k_users`.
    pub fn uniform(k_users: usize, p_max: f64, p_circuit: f64, noise: f64, xi: f64) -> Result<Self> {
        Self::new(p_max, p_circuit, vec![noise; k_users], vec![xi; k_users])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_max > 0.0) {
            return Err(BeamError::InvalidInput(format!("p_max must be > 0, got {}", self.p_max)));
        }
        if !(self.p_circuit >= 0.0) {
            return Err(BeamError::InvalidInput(format!(
                "p_circuit must be >= 0, got {}",
                self.p_circuit
            )));
        }
        if self.noise_powers.len() != self.rate_floors.len() {
            return Err(BeamError::InvalidInput(
                "noise_powers and rate_floors differ in length".into(),
            ));
        }
        if let Some(s) = self.noise_powers.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(BeamError::InvalidInput(format!("noise power must be > 0, got {s}")));
        }
        if let Some(x) = self.rate_floors.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(BeamError::InvalidInput(format!("rate floor must be >= 0, got {x}")));
        }
        Ok(())
    }

    pub fn k_users(&self) -> usize {
        self.noise_powers.len()
    }

    /// The same cell parameters re-sized to `k_users`, reusing the first
    /// user's noise power and rate floor.
    pub fn resized(&self, k_users: usize) -> Self {
        let noise = self.noise_powers.first().copied().unwrap_or(1.0);
        let xi = self.rate_floors.first().copied().unwrap_or(0.0);
        Self {
            p_max: self.p_max,
            p_circuit: self.p_circuit,
            noise_powers: vec![noise; k_users],
            rate_floors: vec![xi; k_users],
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            p_max: self.p_max,
            p_circuit: self.p_circuit,
            noise_powers: perm.iter().map(|&p| self.noise_powers[p]).collect(),
            rate_floors: perm.iter().map(|&p| self.rate_floors[p]).collect(),
        }
    }
}

/// Channel state of one sample. Row `k` holds `h_k`; inner products with a
/// beam are `h_k^H w = sum_j conj(h_kj) w_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet<T = f64> {
    h: CMatrix<T>,
}

impl<T: Real> ChannelSet<T> {
    pub fn new(h: CMatrix<T>) -> Result<Self> {
        if h.rows() == 0 || h.cols() == 0 {
            return Err(BeamError::InvalidInput(format!(
                "channel set must be at least 1x1, got {:?}",
                h.shape()
            )));
        }
        if !h.is_finite() {
            return Err(BeamError::InvalidInput("non-finite channel entry".into()));
        }
        Ok(Self { h })
    }

    #[inline]
    pub fn k_users(&self) -> usize {
        self.h.rows()
    }

    #[inline]
    pub fn n_antennas(&self) -> usize {
        self.h.cols()
    }

    #[inline]
    pub fn h(&self) -> &CMatrix<T> {
        &self.h
    }

    #[inline]
    pub fn user(&self, k: usize) -> &[Complex<T>] {
        self.h.row(k)
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            h: self.h.permute_rows(perm),
        }
    }

    pub fn cast<U: Real>(&self) -> ChannelSet<U> {
        ChannelSet { h: self.h.cast() }
    }
}

/// Direction family that produced a beam solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Mmse,
    Hzm,
    Raw,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Mmse => "mmse",
            Scheme::Hzm => "hzm",
            Scheme::Raw => "raw",
        })
    }
}

/// Beamforming vectors (row `k` is `w_k`) plus the parameterization behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSolution<T = f64> {
    pub w: CMatrix<T>,
    pub powers: Vec<T>,
    pub alphas: Option<Vec<T>>,
    pub scheme: Scheme,
}

impl<T: Real> BeamSolution<T> {
    /// Unparameterized beams; powers are read off the row norms.
    pub fn raw(w: CMatrix<T>) -> Self {
        let powers = (0..w.rows()).map(|k| norm_sqr(w.row(k))).collect();
        Self {
            w,
            powers,
            alphas: None,
            scheme: Scheme::Raw,
        }
    }

    pub fn zeros(k_users: usize, n_antennas: usize) -> Self {
        Self::raw(CMatrix::zeros(k_users, n_antennas))
    }

    pub fn k_users(&self) -> usize {
        self.w.rows()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            w: self.w.permute_rows(perm),
            powers: perm.iter().map(|&p| self.powers[p]).collect(),
            alphas: self
                .alphas
                .as_ref()
                .map(|a| perm.iter().map(|&p| a[p]).collect()),
            scheme: self.scheme,
        }
    }
}

/// Rates, power and energy efficiency of one beam solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub rates: Vec<f64>,
    pub total_power: f64,
    pub ee: f64,
    pub qos_ok: Vec<bool>,
    pub feasible: bool,
}

fn check_dims<T: Real>(ch: &ChannelSet<T>, beams: &BeamSolution<T>, cfg: &SystemConfig) -> Result<()> {
    if beams.w.shape() != ch.h().shape() {
        return Err(BeamError::Shape {
            op: "beams vs channels",
            lhs: beams.w.shape(),
            rhs: ch.h().shape(),
        });
    }
    if cfg.k_users() != ch.k_users() {
        return Err(BeamError::Shape {
            op: "config vs channels",
            lhs: (cfg.k_users(), 1),
            rhs: (ch.k_users(), 1),
        });
    }
    if !beams.w.is_finite() {
        return Err(BeamError::InvalidInput("non-finite beam entry".into()));
    }
    Ok(())
}

/// `|h_j^H w_k|^2` for all receivers `j` (rows) and beams `k` (columns),
/// row-major `K x K`.
pub fn gain_matrix<T: Real>(ch: &ChannelSet<T>, w: &CMatrix<T>) -> Vec<f64> {
    let k = ch.k_users();
    let mut g = vec![0.0; k * k];
    for j in 0..k {
        for i in 0..k {
            g[j * k + i] = inner(ch.user(j), w.row(i)).norm_sqr().as_f64();
        }
    }
    g
}

/// Per-user rates from a `K x K` gain matrix (see [`gain_matrix`]).
pub fn rates_from_gains(gains: &[f64], noise: &[f64]) -> Vec<f64> {
    let k = noise.len();
    (0..k)
        .map(|j| {
            let row = &gains[j * k..(j + 1) * k];
            let signal = row[j];
            let interference: f64 = row.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, g)| g).sum();
            (1.0 + signal / (interference + noise[j])).log2()
        })
        .collect()
}

/// Achievable rate of user `k` in bit/s/Hz.
pub fn rate_k<T: Real>(
    ch: &ChannelSet<T>,
    beams: &BeamSolution<T>,
    cfg: &SystemConfig,
    k: usize,
) -> Result<f64> {
    check_dims(ch, beams, cfg)?;
    if k >= ch.k_users() {
        return Err(BeamError::InvalidInput(format!(
            "user index {k} out of range for K={}",
            ch.k_users()
        )));
    }
    let hk = ch.user(k);
    let mut signal = 0.0;
    let mut interference = 0.0;
    for i in 0..ch.k_users() {
        let g = inner(hk, beams.w.row(i)).norm_sqr().as_f64();
        if i == k {
            signal = g;
        } else {
            interference += g;
        }
    }
    Ok((1.0 + signal / (interference + cfg.noise_powers[k])).log2())
}

/// Rates of all users.
pub fn rates<T: Real>(ch: &ChannelSet<T>, beams: &BeamSolution<T>, cfg: &SystemConfig) -> Result<Vec<f64>> {
    check_dims(ch, beams, cfg)?;
    Ok(rates_from_gains(&gain_matrix(ch, &beams.w), &cfg.noise_powers))
}

/// Transmit power plus circuit power.
pub fn total_power<T: Real>(beams: &BeamSolution<T>, cfg: &SystemConfig) -> f64 {
    transmit_power(&beams.w) + cfg.p_circuit
}

pub fn transmit_power<T: Real>(w: &CMatrix<T>) -> f64 {
    (0..w.rows()).map(|k| norm_sqr(w.row(k)).as_f64()).sum()
}

/// Sum rate over total consumed power, in bit/s/Hz/W.
pub fn energy_efficiency<T: Real>(
    ch: &ChannelSet<T>,
    beams: &BeamSolution<T>,
    cfg: &SystemConfig,
) -> Result<f64> {
    let r = rates(ch, beams, cfg)?;
    ee_from_parts(&r, total_power(beams, cfg))
}

pub(crate) fn ee_from_parts(rates: &[f64], total_power: f64) -> Result<f64> {
    if !(total_power > 0.0) {
        return Err(BeamError::Domain(format!(
            "total power must be positive, got {total_power}"
        )));
    }
    Ok(rates.iter().sum::<f64>() / total_power)
}

/// Evaluates every metric and both constraint families.
pub fn check_feasibility<T: Real>(
    ch: &ChannelSet<T>,
    beams: &BeamSolution<T>,
    cfg: &SystemConfig,
    rate_tol: f64,
) -> Result<PerfReport> {
    let rates = rates(ch, beams, cfg)?;
    Ok(report_from_rates(rates, transmit_power(&beams.w), cfg, rate_tol))
}

pub(crate) fn report_from_rates(
    rates: Vec<f64>,
    transmit: f64,
    cfg: &SystemConfig,
    rate_tol: f64,
) -> PerfReport {
    let total_power = transmit + cfg.p_circuit;
    let ee = if total_power > 0.0 {
        rates.iter().sum::<f64>() / total_power
    } else {
        0.0
    };
    let qos_ok: Vec<bool> = rates
        .iter()
        .zip(&cfg.rate_floors)
        .map(|(r, xi)| *r >= xi - rate_tol)
        .collect();
    let feasible = qos_ok.iter().all(|ok| *ok) && transmit <= cfg.p_max + TOL_POWER;
    PerfReport {
        rates,
        total_power,
        ee,
        qos_ok,
        feasible,
    }
}
