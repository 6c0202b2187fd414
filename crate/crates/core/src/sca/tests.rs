use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::linalg::norm_sqr;
use crate::model::{energy_efficiency, Scheme};

fn channel(rng: &mut ChaCha8Rng, k: usize, nt: usize) -> ChannelSet {
    let data = (0..k * nt)
        .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    ChannelSet::new(CMatrix::from_vec(k, nt, data).unwrap()).unwrap()
}

fn cfg(k: usize, xi: f64) -> SystemConfig {
    SystemConfig::uniform(k, 1.0, 0.5, 0.1, xi).unwrap()
}

/// Exact slack constraints, written independently of the surrogate.
fn exact_constraints(ch: &ChannelSet, cfg: &SystemConfig, s: &ScaState) -> Vec<f64> {
    let k = ch.k_users();
    let mut out = Vec::new();
    let tx: f64 = (0..k).map(|i| norm_sqr(s.w.row(i))).sum();
    for j in 0..k {
        let sig = inner(ch.user(j), s.w.row(j)).norm_sqr();
        let ipn: f64 = cfg.noise_powers[j]
            + (0..k)
                .filter(|&i| i != j)
                .map(|i| inner(ch.user(j), s.w.row(i)).norm_sqr())
                .sum::<f64>();
        out.push((s.d[j] + s.f[j]).exp() - sig);
        out.push(s.c[j].exp2() - 1.0 - s.d[j].exp());
        out.push(ipn - s.f[j].exp());
        out.push(s.varpi[j] - s.a[j].exp());
        out.push((s.a[j] + s.b).exp() - s.c[j]);
        out.push((cfg.rate_floors[j].exp2() - 1.0) * ipn - sig);
        out.push(-s.varpi[j]);
    }
    out.push(tx + cfg.p_circuit - s.b.exp());
    out.push(tx - cfg.p_max);
    out
}

#[test]
fn consistent_state_reproduces_efficiency() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ch = channel(&mut rng, 3, 4);
    let c = cfg(3, 0.5);
    let s = sca_init(&ch, &c).unwrap();
    let ee = energy_efficiency(&ch, &BeamSolution::raw(s.w.clone()), &c).unwrap();
    let sum: f64 = s.varpi.iter().sum();
    assert!((sum - ee).abs() <= 1e-12 * ee);
    assert!(transmit_power(&s.w) < c.p_max);
    let v = slack_violation(&ch, &c, &s);
    assert!(v <= 1e-12, "violation {v}");
}

#[test]
fn init_without_rate_floors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ch = channel(&mut rng, 2, 3);
    let c = cfg(2, 0.0);
    let s = sca_init(&ch, &c).unwrap();
    let tx = transmit_power(&s.w);
    assert!((tx - c.p_max * (1.0 - INIT_MARGIN)).abs() < 1e-9);
}

#[test]
fn init_repairs_missed_floors_with_power_control() {
    // one strong and one weak user: equal split misses the weak floor
    let h = CMatrix::from_rows(&[
        vec![Complex::new(3.0, 0.0), Complex::new(0.0, 0.0)],
        vec![Complex::new(0.0, 0.0), Complex::new(0.4, 0.0)],
    ])
    .unwrap();
    let ch = ChannelSet::new(h).unwrap();
    let c = SystemConfig::uniform(2, 1.0, 0.5, 0.1, 0.0).unwrap();
    let c = SystemConfig {
        rate_floors: vec![0.5, 1.3],
        ..c
    };
    let s = sca_init(&ch, &c).unwrap();
    let r = check_feasibility(&ch, &BeamSolution::raw(s.w.clone()), &c, 0.0).unwrap();
    assert!(r.feasible, "{r:?}");
    assert!(r.rates[1] > 1.3);
}

#[test]
fn unreachable_floor_is_infeasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ch = channel(&mut rng, 2, 3);
    let c = cfg(2, 30.0);
    assert!(matches!(sca_init(&ch, &c), Err(BeamError::Infeasible(_))));
    assert!(matches!(
        sca_solve(&ch, &c, &ScaOptions::default()),
        Err(BeamError::Infeasible(_))
    ));
}

#[test]
fn surrogate_is_tight_at_expansion_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ch = channel(&mut rng, 3, 4);
    let c = cfg(3, 0.3);
    let s = sca_init(&ch, &c).unwrap();
    let sub = linearize(&ch, &c, &s);
    let z = sub.layout.pack(&s);
    let got = sub.constraint_values(&z);
    let want = exact_constraints(&ch, &c, &s);
    assert_eq!(got.len(), sub.n_constraints());
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-10 * (1.0 + w.abs()), "{g} vs {w}");
    }
    assert_eq!(sub.layout.unpack(&z), s);
}

#[test]
fn surrogate_is_conservative_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..40 {
        let (k, n) = (1 + trial % 3, 2 + trial % 3);
        let ch = channel(&mut rng, k, n);
        let c = cfg(k, 0.2);
        let Ok(s) = sca_init(&ch, &c) else { continue };
        let sub = linearize(&ch, &c, &s);
        let mut z = sub.layout.pack(&s);
        for v in z.iter_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
        let moved = sub.layout.unpack(&z);
        let got = sub.constraint_values(&z);
        let want = exact_constraints(&ch, &c, &moved);
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!(*g >= w - 1e-10 * (1.0 + w.abs()), "constraint {i}: {g} < {w}");
        }
    }
}

#[test]
fn strict_start_is_interior() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ch = channel(&mut rng, 3, 4);
    let c = cfg(3, 0.3);
    let s = sca_init(&ch, &c).unwrap();
    let sub = linearize(&ch, &c, &s);
    let start = strict_start(&s);
    let g = sub.constraint_values(&sub.layout.pack(&start));
    assert!(g.iter().all(|v| *v < 0.0), "{g:?}");
    let lost = s.varpi.iter().sum::<f64>() - start.varpi.iter().sum::<f64>();
    assert!(lost >= 0.0 && lost < 1e-5 * s.varpi.iter().sum::<f64>());
}

#[test]
fn barrier_improves_on_start_and_stays_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ch = channel(&mut rng, 2, 3);
    let c = cfg(2, 0.3);
    let s = sca_init(&ch, &c).unwrap();
    let sub = linearize(&ch, &c, &s);
    let start = sub.layout.pack(&strict_start(&s));
    let res = barrier_solve(&sub, &start, &ScaOptions::default().barrier()).unwrap();
    assert!(res.objective >= sub.objective(&start));
    assert!(sub.constraint_values(&res.z).iter().all(|v| *v < 0.0));
    assert!(res.final_gap < 1e-8);
    let exact = exact_constraints(&ch, &c, &sub.layout.unpack(&res.z));
    assert!(exact.iter().all(|v| *v <= 1e-12));
}

#[test]
fn barrier_rejects_infeasible_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ch = channel(&mut rng, 2, 3);
    let c = cfg(2, 0.3);
    let s = sca_init(&ch, &c).unwrap();
    let sub = linearize(&ch, &c, &s);
    let z = sub.layout.pack(&s);
    assert!(matches!(
        barrier_solve(&sub, &z, &BarrierOptions { mu: 10.0, t0: 1.0, gap_tol: 1e-8, max_newton: 50 }),
        Err(BeamError::Solver(_))
    ));
}

#[test]
fn single_user_matches_scalar_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for xi in [0.0, 1.0, 3.0] {
        let ch = channel(&mut rng, 1, 4);
        let c = cfg(1, xi);
        let res = sca_solve(&ch, &c, &ScaOptions::default()).unwrap();
        let (_, best) = single_user_oracle(&ch, &c).unwrap();
        assert!(res.report.feasible);
        assert!(
            (res.report.ee - best).abs() <= 1e-4 * best,
            "xi {xi}: {} vs {best}",
            res.report.ee
        );
    }
}

#[test]
fn outer_history_is_monotone_and_reports_efficiency() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ch = channel(&mut rng, 3, 4);
    let c = cfg(3, 0.5);
    let res = sca_solve(&ch, &c, &ScaOptions::default()).unwrap();
    for pair in res.history.windows(2) {
        assert!(pair[1].objective >= pair[0].objective);
    }
    let last = res.history.last().unwrap().objective;
    assert!((last - res.report.ee).abs() <= 1e-9 * last);
    assert!(res.report.feasible);
    assert!(res.iterations() >= 1);
    assert!(!matches!(res.stop, StopReason::SolverFailure(_)), "{:?}", res.stop);
}

#[test]
fn two_users_dominate_coarse_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = GridSpec {
        power_step: 0.05,
        alpha_step: 0.25,
    };
    for _ in 0..3 {
        let ch = channel(&mut rng, 2, 3);
        let c = cfg(2, 0.5);
        let sca = sca_solve(&ch, &c, &ScaOptions::default()).unwrap();
        for scheme in [Scheme::Mmse, Scheme::Hzm] {
            let g = grid_oracle(&ch, &c, scheme, grid).unwrap();
            assert!(g.report.feasible);
            assert!(
                sca.report.ee >= g.report.ee - 1e-3,
                "{scheme:?}: sca {} < grid {}",
                sca.report.ee,
                g.report.ee
            );
        }
    }
}

#[test]
fn finer_grid_never_loses() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ch = channel(&mut rng, 2, 3);
    let c = cfg(2, 0.5);
    let coarse = GridSpec {
        power_step: 0.1,
        alpha_step: 0.5,
    };
    let fine = GridSpec {
        power_step: 0.05,
        alpha_step: 0.25,
    };
    for scheme in [Scheme::Mmse, Scheme::Hzm] {
        let a = grid_oracle(&ch, &c, scheme, coarse).unwrap();
        let b = grid_oracle(&ch, &c, scheme, fine).unwrap();
        assert!(b.report.ee >= a.report.ee - 1e-12);
        assert!(b.evaluated > a.evaluated);
    }
}

#[test]
fn grid_refuses_large_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ch = channel(&mut rng, 4, 4);
    let c = cfg(4, 0.5);
    assert!(matches!(
        grid_oracle(&ch, &c, Scheme::Mmse, GridSpec::default()),
        Err(BeamError::Capacity(_))
    ));
}

#[test]
fn grid_reports_infeasible_floors() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let ch = channel(&mut rng, 2, 3);
    let c = cfg(2, 30.0);
    assert!(matches!(
        grid_oracle(&ch, &c, Scheme::Mmse, GridSpec::default()),
        Err(BeamError::Infeasible(_))
    ));
}

#[test]
fn scalar_search_matches_closed_form_stationarity() {
    // d/dp [ln(1 + p g/s) / (p + pc)] = 0  <=>  (g/s)(p + pc) = (1 + p g/s) ln(1 + p g/s)
    let (g, s, pc) = (2.0, 0.1, 0.5);
    let (p, _) = scalar_oracle(g, s, pc, 100.0, 0.0, 1e-12).unwrap();
    let x = 1.0 + p * g / s;
    assert!(((g / s) * (p + pc) - x * x.ln()).abs() < 1e-6 * x * x.ln());
    let (p_cap, _) = scalar_oracle(g, s, pc, 0.01, 0.0, 1e-12).unwrap();
    assert!((p_cap - 0.01).abs() < 1e-9);
}
