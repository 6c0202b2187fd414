//! Convex surrogate around an expansion point and its log-barrier solver.

use num_complex::Complex;

use crate::error::{BeamError, Result};
use crate::linalg::{cholesky_real, cholesky_real_solve, inner, CMatrix};
use crate::model::{ChannelSet, SystemConfig};

use super::ScaState;

/// Positions of the real variables: interleaved `(Re, Im)` beam entries,
/// then per-user shares, log-shares, the log-power, rate targets,
/// log-SINRs and log-interference levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarLayout {
    pub k: usize,
    pub n: usize,
}

impl VarLayout {
    pub fn beam(&self, i: usize) -> usize {
        2 * i * self.n
    }
    pub fn share(&self, k: usize) -> usize {
        2 * self.k * self.n + k
    }
    pub fn log_share(&self, k: usize) -> usize {
        2 * self.k * self.n + self.k + k
    }
    pub fn log_power(&self) -> usize {
        2 * self.k * self.n + 2 * self.k
    }
    pub fn rate(&self, k: usize) -> usize {
        2 * self.k * self.n + 2 * self.k + 1 + k
    }
    pub fn log_sinr(&self, k: usize) -> usize {
        2 * self.k * self.n + 3 * self.k + 1 + k
    }
    pub fn log_interf(&self, k: usize) -> usize {
        2 * self.k * self.n + 4 * self.k + 1 + k
    }
    pub fn len(&self) -> usize {
        2 * self.k * self.n + 5 * self.k + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pack(&self, s: &ScaState) -> Vec<f64> {
        let mut z = vec![0.0; self.len()];
        for i in 0..self.k {
            for (t, w) in s.w.row(i).iter().enumerate() {
                z[self.beam(i) + 2 * t] = w.re;
                z[self.beam(i) + 2 * t + 1] = w.im;
            }
            z[self.share(i)] = s.varpi[i];
            z[self.log_share(i)] = s.a[i];
            z[self.rate(i)] = s.c[i];
            z[self.log_sinr(i)] = s.d[i];
            z[self.log_interf(i)] = s.f[i];
        }
        z[self.log_power()] = s.b;
        z
    }

    pub fn unpack(&self, z: &[f64]) -> ScaState {
        let mut w = CMatrix::zeros(self.k, self.n);
        for i in 0..self.k {
            for t in 0..self.n {
                w[(i, t)] = Complex::new(z[self.beam(i) + 2 * t], z[self.beam(i) + 2 * t + 1]);
            }
        }
        let g = |f: &dyn Fn(usize) -> usize| (0..self.k).map(|i| z[f(i)]).collect::<Vec<_>>();
        ScaState {
            w,
            varpi: g(&|i| self.share(i)),
            a: g(&|i| self.log_share(i)),
            b: z[self.log_power()],
            c: g(&|i| self.rate(i)),
            d: g(&|i| self.log_sinr(i)),
            f: g(&|i| self.log_interf(i)),
        }
    }
}

/// Curvature of one constraint, added to the barrier Hessian.
#[derive(Clone, Copy, Debug)]
enum Curv {
    /// `v * (e_i + e_j)(e_i + e_j)^T`.
    Pair(usize, usize, f64),
    Single(usize, f64),
    /// `coef * 2 (u u^T + v v^T)` on beam `beam`, with `u, v` of user `user`.
    Quad { beam: usize, user: usize, coef: f64 },
    /// `coef * 2 I` on every beam entry.
    Ball(f64),
}

struct Eval {
    g: f64,
    grad: Vec<(usize, f64)>,
    curv: Vec<Curv>,
}

/// Convex surrogate of the fractional problem, built around an expansion
/// point. Every constraint is written `g(z) <= 0`.
pub struct Subproblem {
    pub layout: VarLayout,
    /// Per user: `(Re h, Im h)` lifted to the interleaved beam layout.
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    noise: Vec<f64>,
    /// `2^xi - 1` per user.
    qos: Vec<f64>,
    p_max: f64,
    p_circuit: f64,
    /// Own-signal value `h_k^H w_k` at the expansion point.
    sig: Vec<Complex<f64>>,
    exp_sinr: Vec<f64>,
    exp_interf: Vec<f64>,
    exp_share: Vec<f64>,
    exp_power: f64,
}

pub(crate) fn lifted(h: &[Complex<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut u = Vec::with_capacity(2 * h.len());
    let mut v = Vec::with_capacity(2 * h.len());
    for z in h {
        u.extend([z.re, z.im]);
        v.extend([-z.im, z.re]);
    }
    (u, v)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds the surrogate whose concave pieces are expanded at `at`
/// (beams for the signal terms, `d`, `f`, `a`, `b` for the exponentials).
pub fn linearize(ch: &ChannelSet, cfg: &SystemConfig, at: &ScaState) -> Subproblem {
    let (k, n) = (ch.k_users(), ch.n_antennas());
    let (u, v): (Vec<_>, Vec<_>) = (0..k).map(|i| lifted(ch.user(i))).unzip();
    Subproblem {
        layout: VarLayout { k, n },
        u,
        v,
        noise: cfg.noise_powers.clone(),
        qos: cfg.rate_floors.iter().map(|x| x.exp2() - 1.0).collect(),
        p_max: cfg.p_max,
        p_circuit: cfg.p_circuit,
        sig: (0..k).map(|i| inner(ch.user(i), at.w.row(i))).collect(),
        exp_sinr: at.d.clone(),
        exp_interf: at.f.clone(),
        exp_share: at.a.clone(),
        exp_power: at.b,
    }
}

impl Subproblem {
    pub fn n_constraints(&self) -> usize {
        7 * self.layout.k + 2
    }

    /// `(Re, Im)` of `h_k^H w_i` for all `k` (rows) and `i`.
    fn products(&self, z: &[f64]) -> Vec<(f64, f64)> {
        let l = self.layout;
        let mut out = Vec::with_capacity(l.k * l.k);
        for k in 0..l.k {
            for i in 0..l.k {
                let w = &z[l.beam(i)..l.beam(i) + 2 * l.n];
                out.push((dot(&self.u[k], w), dot(&self.v[k], w)));
            }
        }
        out
    }

    fn evaluate(&self, z: &[f64], derivs: bool) -> Vec<Eval> {
        let l = self.layout;
        let (k_n, nn) = (l.k, 2 * l.n);
        let zz = self.products(z);
        let mut out = Vec::with_capacity(self.n_constraints());
        let e = |g: f64| Eval {
            g,
            grad: Vec::new(),
            curv: Vec::new(),
        };
        let tx: f64 = z[..2 * k_n * l.n].iter().map(|x| x * x).sum();
        for k in 0..k_n {
            let (sr, si) = zz[k * k_n + k];
            let s0 = self.sig[k];
            let lower = 2.0 * (s0.re * sr + s0.im * si) - s0.norm_sqr();
            let interf: f64 = (0..k_n)
                .filter(|&i| i != k)
                .map(|i| {
                    let (r, m) = zz[k * k_n + i];
                    r * r + m * m
                })
                .sum();
            let lower_grad = |scale: f64, grad: &mut Vec<(usize, f64)>| {
                let b = l.beam(k);
                for t in 0..nn {
                    grad.push((b + t, scale * 2.0 * (s0.re * self.u[k][t] + s0.im * self.v[k][t])));
                }
            };
            let interf_grad = |scale: f64, grad: &mut Vec<(usize, f64)>, curv: &mut Vec<Curv>| {
                for i in (0..k_n).filter(|&i| i != k) {
                    let (r, m) = zz[k * k_n + i];
                    let b = l.beam(i);
                    for t in 0..nn {
                        grad.push((b + t, scale * 2.0 * (r * self.u[k][t] + m * self.v[k][t])));
                    }
                    curv.push(Curv::Quad {
                        beam: i,
                        user: k,
                        coef: scale,
                    });
                }
            };
            let (d, f) = (z[l.log_sinr(k)], z[l.log_interf(k)]);
            let (c, a) = (z[l.rate(k)], z[l.log_share(k)]);
            let b = z[l.log_power()];
            let varpi = z[l.share(k)];

            // signal lower bound covers SINR x interference
            let edf = (d + f).exp();
            let mut ev = e(edf - lower);
            if derivs {
                ev.grad.push((l.log_sinr(k), edf));
                ev.grad.push((l.log_interf(k), edf));
                lower_grad(-1.0, &mut ev.grad);
                ev.curv.push(Curv::Pair(l.log_sinr(k), l.log_interf(k), edf));
            }
            out.push(ev);

            // rate target below log2(1 + SINR)
            let ed = self.exp_sinr[k].exp();
            let c2 = c.exp2();
            let mut ev = e(c2 - 1.0 - ed * (d - self.exp_sinr[k] + 1.0));
            if derivs {
                let ln2 = std::f64::consts::LN_2;
                ev.grad.push((l.rate(k), ln2 * c2));
                ev.grad.push((l.log_sinr(k), -ed));
                ev.curv.push(Curv::Single(l.rate(k), ln2 * ln2 * c2));
            }
            out.push(ev);

            // interference plus noise below exp(f)
            let ef = self.exp_interf[k].exp();
            let mut ev = e(interf + self.noise[k] - ef * (f - self.exp_interf[k] + 1.0));
            if derivs {
                interf_grad(1.0, &mut ev.grad, &mut ev.curv);
                ev.grad.push((l.log_interf(k), -ef));
            }
            out.push(ev);

            // share below exp(a)
            let ea = self.exp_share[k].exp();
            let mut ev = e(varpi - ea * (a - self.exp_share[k] + 1.0));
            if derivs {
                ev.grad.push((l.share(k), 1.0));
                ev.grad.push((l.log_share(k), -ea));
            }
            out.push(ev);

            // share times total power below rate target
            let eab = (a + b).exp();
            let mut ev = e(eab - c);
            if derivs {
                ev.grad.push((l.log_share(k), eab));
                ev.grad.push((l.log_power(), eab));
                ev.grad.push((l.rate(k), -1.0));
                ev.curv.push(Curv::Pair(l.log_share(k), l.log_power(), eab));
            }
            out.push(ev);

            // rate floor
            let q = self.qos[k];
            let mut ev = e(q * (interf + self.noise[k]) - lower);
            if derivs {
                if q != 0.0 {
                    interf_grad(q, &mut ev.grad, &mut ev.curv);
                }
                lower_grad(-1.0, &mut ev.grad);
            }
            out.push(ev);

            let mut ev = e(-varpi);
            if derivs {
                ev.grad.push((l.share(k), -1.0));
            }
            out.push(ev);
        }
        let eb = self.exp_power.exp();
        let mut ev = e(tx + self.p_circuit - eb * (z[l.log_power()] - self.exp_power + 1.0));
        if derivs {
            for t in 0..2 * k_n * l.n {
                ev.grad.push((t, 2.0 * z[t]));
            }
            ev.grad.push((l.log_power(), -eb));
            ev.curv.push(Curv::Ball(1.0));
        }
        out.push(ev);
        let mut ev = e(tx - self.p_max);
        if derivs {
            for t in 0..2 * k_n * l.n {
                ev.grad.push((t, 2.0 * z[t]));
            }
            ev.curv.push(Curv::Ball(1.0));
        }
        out.push(ev);
        out
    }

    /// Constraint values at `z`, in a fixed order.
    pub fn constraint_values(&self, z: &[f64]) -> Vec<f64> {
        self.evaluate(z, false).into_iter().map(|e| e.g).collect()
    }

    /// `sum of shares`, the quantity maximized.
    pub fn objective(&self, z: &[f64]) -> f64 {
        (0..self.layout.k).map(|k| z[self.layout.share(k)]).sum()
    }

    fn barrier_value(&self, z: &[f64], t: f64) -> Option<f64> {
        let mut phi = -t * self.objective(z);
        for e in self.evaluate(z, false) {
            if !(e.g < 0.0) {
                return None;
            }
            phi -= (-e.g).ln();
        }
        Some(phi)
    }

    /// Gradient and dense Hessian of the barrier function.
    fn barrier_derivs(&self, z: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout;
        let nv = l.len();
        let mut grad = vec![0.0; nv];
        let mut hess = vec![0.0; nv * nv];
        for k in 0..l.k {
            grad[l.share(k)] -= t;
        }
        for ev in self.evaluate(z, true) {
            let s = 1.0 / (-ev.g);
            let mut dense: Vec<(usize, f64)> = Vec::with_capacity(ev.grad.len());
            for &(i, gval) in &ev.grad {
                grad[i] += s * gval;
                match dense.iter_mut().find(|(j, _)| *j == i) {
                    Some(p) => p.1 += gval,
                    None => dense.push((i, gval)),
                }
            }
            let s2 = s * s;
            for &(i, gi) in &dense {
                for &(j, gj) in &dense {
                    hess[i * nv + j] += s2 * gi * gj;
                }
            }
            for c in ev.curv {
                match c {
                    Curv::Pair(i, j, v) => {
                        for (p, q) in [(i, i), (i, j), (j, i), (j, j)] {
                            hess[p * nv + q] += s * v;
                        }
                    }
                    Curv::Single(i, v) => hess[i * nv + i] += s * v,
                    Curv::Quad { beam, user, coef } => {
                        let b = l.beam(beam);
                        let (u, vv) = (&self.u[user], &self.v[user]);
                        for p in 0..2 * l.n {
                            for q in 0..2 * l.n {
                                hess[(b + p) * nv + b + q] += s * coef * 2.0 * (u[p] * u[q] + vv[p] * vv[q]);
                            }
                        }
                    }
                    Curv::Ball(coef) => {
                        for p in 0..2 * l.k * l.n {
                            hess[p * nv + p] += s * coef * 2.0;
                        }
                    }
                }
            }
        }
        (grad, hess)
    }
}

/// Log-barrier path-following settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierOptions {
    pub mu: f64,
    pub t0: f64,
    /// Stop once `constraints / t` falls below this.
    pub gap_tol: f64,
    /// Newton steps per centering.
    pub max_newton: usize,
}

#[derive(Clone, Debug)]
pub struct BarrierResult {
    pub z: Vec<f64>,
    pub objective: f64,
    pub newton_steps: usize,
    /// Centerings cut short because no step passed the line search.
    pub stalls: usize,
    pub final_gap: f64,
}

const ARMIJO: f64 = 0.01;
const DECREMENT_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 80;

/// Minimizes `-objective` over the surrogate from a strictly feasible start.
pub fn barrier_solve(sub: &Subproblem, start: &[f64], opts: &BarrierOptions) -> Result<BarrierResult> {
    let nv = sub.layout.len();
    if start.len() != nv {
        return Err(BeamError::InvalidInput(format!(
            "start has {} entries, expected {nv}",
            start.len()
        )));
    }
    if sub.barrier_value(start, opts.t0).is_none() {
        return Err(BeamError::Solver("start point is not strictly feasible".into()));
    }
    let m = sub.n_constraints() as f64;
    let mut z = start.to_vec();
    let mut t = opts.t0;
    let mut steps = 0usize;
    let mut stalls = 0usize;
    loop {
        for _ in 0..opts.max_newton {
            let (g, mut h) = sub.barrier_derivs(&z, t);
            let mut dz: Vec<f64> = g.iter().map(|v| -v).collect();
            let diag_max = (0..nv).map(|i| h[i * nv + i].abs()).fold(0.0, f64::max);
            let mut reg = 0.0;
            let base = h.clone();
            loop {
                if cholesky_real(&mut h, nv).is_ok() {
                    break;
                }
                reg = if reg == 0.0 { diag_max * 1e-14 + 1e-300 } else { reg * 100.0 };
                if reg > diag_max {
                    return Err(BeamError::Solver("barrier Hessian is not positive definite".into()));
                }
                h.copy_from_slice(&base);
                for i in 0..nv {
                    h[i * nv + i] += reg;
                }
            }
            cholesky_real_solve(&h, nv, &mut dz);
            let slope: f64 = g.iter().zip(&dz).map(|(a, b)| a * b).sum();
            if -slope / 2.0 <= DECREMENT_TOL {
                break;
            }
            let phi0 = sub.barrier_value(&z, t).expect("iterate stays interior");
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let cand: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + step * b).collect();
                if let Some(phi) = sub.barrier_value(&cand, t) {
                    if phi <= phi0 + ARMIJO * step * slope {
                        accepted = Some(cand);
                        break;
                    }
                }
                step *= 0.5;
            }
            match accepted {
                Some(c) => {
                    z = c;
                    steps += 1;
                }
                None => {
                    stalls += 1;
                    break;
                }
            }
        }
        if m / t < opts.gap_tol {
            break;
        }
        t *= opts.mu;
    }
    Ok(BarrierResult {
        objective: sub.objective(&z),
        z,
        newton_steps: steps,
        stalls,
        final_gap: m / t,
    })
}
