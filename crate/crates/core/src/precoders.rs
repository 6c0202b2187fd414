//! Closed-form beam directions (MMSE, ZF, MRT and the hybrid ZF/MRT
//! combination) and beam recovery from per-user powers.
//!
//! Directions are computed from the `K x K` Gram matrix `G G^H` so no
//! `N_T x N_T` inverse is ever formed. They carry no phase normalization;
//! compare them with [`phase_invariant_agreement`].

use num_complex::Complex;

use crate::error::{BeamError, Result};
use crate::linalg::{hermitian_solve, inner, norm, CMatrix};
use crate::model::{BeamSolution, ChannelSet, Scheme, SystemConfig};
use crate::scalar::Real;

/// Condition-estimate ceiling for the regularized MMSE Gram matrix.
pub const MMSE_COND_LIMIT: f64 = 1e14;
/// Condition-estimate ceiling for the unregularized ZF Gram matrix.
pub const ZF_COND_LIMIT: f64 = 1e12;
/// Norms below this are treated as a cancelled combination.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum DirectionScheme<T = f64> {
    Mmse,
    Zf,
    Mrt,
    Hzm(Vec<T>),
}

/// Unit-norm beam directions, row `k` for user `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet<T = f64> {
    pub dirs: CMatrix<T>,
    pub scheme: DirectionScheme<T>,
}

impl<T: Real> DirectionSet<T> {
    pub fn k_users(&self) -> usize {
        self.dirs.rows()
    }

    pub fn dir(&self, k: usize) -> &[Complex<T>] {
        self.dirs.row(k)
    }
}

fn gram<T: Real>(ch: &ChannelSet<T>) -> CMatrix<T> {
    let k = ch.k_users();
    let mut a = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = inner(ch.user(i), ch.user(j));
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
    a
}

/// Rows of `(A^{-1})^T G` style combination: row `k` = `sum_j X_{jk} h_j`.
fn combine_columns<T: Real>(ch: &ChannelSet<T>, x: &CMatrix<T>) -> CMatrix<T> {
    let (k, n) = (ch.k_users(), ch.n_antennas());
    let mut out = CMatrix::zeros(k, n);
    for col in 0..k {
        for j in 0..k {
            let coef = x[(j, col)];
            for (o, h) in out.row_mut(col).iter_mut().zip(ch.user(j)) {
                *o += *h * coef;
            }
        }
    }
    out
}

fn normalize_rows<T: Real>(m: &mut CMatrix<T>, what: &str) -> Result<()> {
    for k in 0..m.rows() {
        let nk = norm(m.row(k));
        if !(nk.as_f64() > DEGENERATE_NORM) {
            return Err(BeamError::Degenerate(format!("{what}: row {k} has norm {nk}")));
        }
        for z in m.row_mut(k) {
            *z = *z / nk;
        }
    }
    Ok(())
}

/// MMSE directions `V = G^H (G G^H + diag(sigma^2))^{-1}`, columns normalized.
pub fn mmse_directions<T: Real>(ch: &ChannelSet<T>, cfg: &SystemConfig) -> Result<DirectionSet<T>> {
    let k = ch.k_users();
    if cfg.k_users() != k {
        return Err(BeamError::Shape {
            op: "mmse_directions",
            lhs: (cfg.k_users(), 1),
            rhs: (k, 1),
        });
    }
    let mut a = gram(ch);
    for (i, s) in cfg.noise_powers.iter().enumerate() {
        a[(i, i)] += Complex::new(T::lit(*s), T::zero());
    }
    let solved = hermitian_solve(&a, &CMatrix::identity(k))?;
    if solved.cond_estimate > MMSE_COND_LIMIT {
        return Err(BeamError::Numeric {
            cond: solved.cond_estimate,
            limit: MMSE_COND_LIMIT,
        });
    }
    let mut dirs = combine_columns(ch, &solved.x);
    normalize_rows(&mut dirs, "mmse")?;
    Ok(DirectionSet {
        dirs,
        scheme: DirectionScheme::Mmse,
    })
}

/// Zero-forcing directions `U = G^H (G G^H)^{-1}`, columns normalized.
pub fn zf_directions<T: Real>(ch: &ChannelSet<T>) -> Result<DirectionSet<T>> {
    let (k, n) = (ch.k_users(), ch.n_antennas());
    if k > n {
        return Err(BeamError::Rank(format!("zero forcing needs K <= N_T, got K={k}, N_T={n}")));
    }
    let solved = hermitian_solve(&gram(ch), &CMatrix::identity(k))?;
    if !(solved.cond_estimate <= ZF_COND_LIMIT) {
        return Err(BeamError::Rank(format!(
            "channel Gram condition estimate {:.3e} exceeds {ZF_COND_LIMIT:.0e}",
            solved.cond_estimate
        )));
    }
    let mut dirs = combine_columns(ch, &solved.x);
    normalize_rows(&mut dirs, "zf")?;
    Ok(DirectionSet {
        dirs,
        scheme: DirectionScheme::Zf,
    })
}

/// Matched-filter directions `h_k / ||h_k||`.
pub fn mrt_directions<T: Real>(ch: &ChannelSet<T>) -> Result<DirectionSet<T>> {
    let mut dirs = ch.h().clone();
    normalize_rows(&mut dirs, "mrt").map_err(|_| BeamError::Degenerate("zero channel vector".into()))?;
    Ok(DirectionSet {
        dirs,
        scheme: DirectionScheme::Mrt,
    })
}

/// ZF and MRT unit directions, the two endpoints of the hybrid family.
#[derive(Clone, Debug)]
pub struct HzmBasis<T = f64> {
    pub zf: CMatrix<T>,
    pub mrt: CMatrix<T>,
}

impl<T: Real> HzmBasis<T> {
    pub fn new(ch: &ChannelSet<T>) -> Result<Self> {
        Ok(Self {
            zf: zf_directions(ch)?.dirs,
            mrt: mrt_directions(ch)?.dirs,
        })
    }

    /// Row `k` = normalize(alpha_k * zf_k + (1 - alpha_k) * mrt_k).
    pub fn combine(&self, alphas: &[T]) -> Result<DirectionSet<T>> {
        let k = self.zf.rows();
        if alphas.len() != k {
            return Err(BeamError::InvalidInput(format!(
                "expected {k} hybrid coefficients, got {}",
                alphas.len()
            )));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a >= T::zero() && **a <= T::one())) {
            return Err(BeamError::InvalidInput(format!("hybrid coefficient {a} outside [0, 1]")));
        }
        let mut dirs = CMatrix::zeros(k, self.zf.cols());
        for (i, &a) in alphas.iter().enumerate() {
            for ((o, u), g) in dirs.row_mut(i).iter_mut().zip(self.zf.row(i)).zip(self.mrt.row(i)) {
                *o = *u * a + *g * (T::one() - a);
            }
        }
        for i in 0..k {
            if !(norm(dirs.row(i)).as_f64() >= DEGENERATE_NORM) {
                return Err(BeamError::Degenerate(format!(
                    "hybrid combination for user {i} cancels (alpha={})",
                    alphas[i]
                )));
            }
        }
        normalize_rows(&mut dirs, "hzm")?;
        Ok(DirectionSet {
            dirs,
            scheme: DirectionScheme::Hzm(alphas.to_vec()),
        })
    }
}

/// Hybrid ZF/MRT directions for per-user coefficients `alphas` in `[0, 1]`.
pub fn hzm_direction<T: Real>(ch: &ChannelSet<T>, alphas: &[T]) -> Result<DirectionSet<T>> {
    HzmBasis::new(ch)?.combine(alphas)
}

/// Scales each unit direction by `sqrt(p_k)`.
pub fn recover_beams<T: Real>(dirs: &DirectionSet<T>, powers: &[T]) -> Result<BeamSolution<T>> {
    let k = dirs.k_users();
    if powers.len() != k {
        return Err(BeamError::InvalidInput(format!(
            "expected {k} powers, got {}",
            powers.len()
        )));
    }
    if let Some(p) = powers.iter().find(|p| !(**p >= T::zero()) || !p.is_finite()) {
        return Err(BeamError::InvalidInput(format!("power must be finite and >= 0, got {p}")));
    }
    let mut w = dirs.dirs.clone();
    for (i, &p) in powers.iter().enumerate() {
        let s = p.sqrt();
        for z in w.row_mut(i) {
            *z = *z * s;
        }
    }
    let (scheme, alphas) = match &dirs.scheme {
        DirectionScheme::Mmse => (Scheme::Mmse, None),
        DirectionScheme::Zf => (Scheme::Hzm, Some(vec![T::one(); k])),
        DirectionScheme::Mrt => (Scheme::Hzm, Some(vec![T::zero(); k])),
        DirectionScheme::Hzm(a) => (Scheme::Hzm, Some(a.clone())),
    };
    Ok(BeamSolution {
        w,
        powers: powers.to_vec(),
        alphas,
        scheme,
    })
}

/// `|<d1, d2>|` for unit vectors: 1 when they agree up to a phase.
pub fn phase_invariant_agreement<T: Real>(d1: &[Complex<T>], d2: &[Complex<T>]) -> f64 {
    inner(d1, d2).norm().as_f64()
}

/// Smallest row-wise phase-invariant agreement between two direction sets.
pub fn min_row_agreement<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> f64 {
    (0..a.rows())
        .map(|k| phase_invariant_agreement(a.row(k), b.row(k)))
        .fold(f64::INFINITY, f64::min)
}

/// `|h_j^H d_k|^2` for every receiver `j` and direction `k`, row-major.
pub fn direction_gains<T: Real>(ch: &ChannelSet<T>, dirs: &CMatrix<T>) -> Vec<f64> {
    let k = ch.k_users();
    let mut g = vec![0.0; k * k];
    for j in 0..k {
        for i in 0..k {
            g[j * k + i] = inner(ch.user(j), dirs.row(i)).norm_sqr().as_f64();
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::total_power;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn random_channels(rng: &mut ChaCha8Rng, k: usize, n: usize) -> ChannelSet {
        let data = (0..k * n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ChannelSet::new(CMatrix::from_vec(k, n, data).unwrap()).unwrap()
    }

    fn assert_unit_rows(d: &CMatrix<f64>) {
        for k in 0..d.rows() {
            assert!((norm(d.row(k)) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn single_user_mmse_is_mrt() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = random_channels(&mut rng, 1, 5);
        let cfg = SystemConfig::uniform(1, 1.0, 0.5, 0.3, 0.0).unwrap();
        let m = mmse_directions(&ch, &cfg).unwrap();
        let r = mrt_directions(&ch).unwrap();
        assert!(min_row_agreement(&m.dirs, &r.dirs) > 1.0 - 1e-12);
    }

    #[test]
    fn mmse_limits_reach_zf_and_mrt() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ch = random_channels(&mut rng, 4, 4);
        let zf = zf_directions(&ch).unwrap();
        let mrt = mrt_directions(&ch).unwrap();
        let lo = mmse_directions(&ch, &SystemConfig::uniform(4, 1.0, 0.5, 1e-10, 0.0).unwrap()).unwrap();
        let hi = mmse_directions(&ch, &SystemConfig::uniform(4, 1.0, 0.5, 1e6, 0.0).unwrap()).unwrap();
        let angle = |a: f64| a.min(1.0).acos();
        assert!(angle(min_row_agreement(&lo.dirs, &zf.dirs)) < 1e-3);
        assert!(angle(min_row_agreement(&hi.dirs, &mrt.dirs)) < 1e-3);
    }

    #[test]
    fn zf_equals_mrt_for_orthogonal_channels() {
        let ch = ChannelSet::new(
            CMatrix::from_rows(&[
                vec![c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
                vec![c(0.0, 0.0), c(0.0, -1.0), c(0.0, 0.0)],
            ])
            .unwrap(),
        )
        .unwrap();
        let zf = zf_directions(&ch).unwrap();
        let mrt = mrt_directions(&ch).unwrap();
        assert!(min_row_agreement(&zf.dirs, &mrt.dirs) > 1.0 - 1e-14);
    }

    #[test]
    fn zf_nulls_cross_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = random_channels(&mut rng, 3, 8);
        let zf = zf_directions(&ch).unwrap();
        assert_unit_rows(&zf.dirs);
        for i in 0..3 {
            for k in 0..3 {
                if i != k {
                    assert!(inner(ch.user(i), zf.dir(k)).norm() < 1e-8 * norm(ch.user(i)));
                }
            }
        }
    }

    #[test]
    fn zf_rejects_more_users_than_antennas() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = random_channels(&mut rng, 5, 4);
        assert!(matches!(zf_directions(&ch), Err(BeamError::Rank(_))));
    }

    #[test]
    fn zf_rejects_collinear_users() {
        let ch = ChannelSet::new(
            CMatrix::from_rows(&[vec![c(1.0, 0.0), c(1.0, 0.0)], vec![c(2.0, 0.0), c(2.0, 0.0)]]).unwrap(),
        )
        .unwrap();
        assert!(matches!(zf_directions(&ch), Err(BeamError::Rank(_))));
    }

    #[test]
    fn mrt_normalizes_and_rejects_zero_channel() {
        let ch = ChannelSet::new(CMatrix::from_rows(&[vec![c(2.0, 0.0), c(0.0, 0.0)]]).unwrap()).unwrap();
        let d = mrt_directions(&ch).unwrap();
        assert_eq!(d.dir(0), &[c(1.0, 0.0), c(0.0, 0.0)]);
        let zero = ChannelSet::new(CMatrix::<f64>::zeros(1, 2)).unwrap();
        assert!(matches!(mrt_directions(&zero), Err(BeamError::Degenerate(_))));
    }

    #[test]
    fn mrt_rotates_with_channel_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ch = random_channels(&mut rng, 2, 3);
        let rot = Complex::from_polar(1.0, 0.7);
        let mut h = ch.h().clone();
        h.as_mut_slice().iter_mut().for_each(|z| *z *= rot);
        let d = mrt_directions(&ch).unwrap();
        let dr = mrt_directions(&ChannelSet::new(h).unwrap()).unwrap();
        for (a, b) in d.dirs.as_slice().iter().zip(dr.dirs.as_slice()) {
            assert!((a * rot - b).norm() < 1e-14);
        }
    }

    #[test]
    fn hzm_endpoints_are_zf_and_mrt() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ch = random_channels(&mut rng, 3, 6);
        let zf = zf_directions(&ch).unwrap();
        let mrt = mrt_directions(&ch).unwrap();
        let one = hzm_direction(&ch, &[1.0; 3]).unwrap();
        let zero = hzm_direction(&ch, &[0.0; 3]).unwrap();
        assert!(min_row_agreement(&one.dirs, &zf.dirs) > 1.0 - 1e-12);
        assert!(min_row_agreement(&zero.dirs, &mrt.dirs) > 1.0 - 1e-12);
    }

    #[test]
    fn hzm_matches_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ch = random_channels(&mut rng, 2, 4);
        let hzm = hzm_direction(&ch, &[0.5, 0.5]).unwrap();
        // Oracle: build U by explicit 2x2 inverse of G G^H.
        let h0 = ch.user(0);
        let h1 = ch.user(1);
        let a00 = inner(h0, h0);
        let a01 = inner(h0, h1);
        let a10 = inner(h1, h0);
        let a11 = inner(h1, h1);
        let det = a00 * a11 - a01 * a10;
        let inv = [[a11 / det, -a01 / det], [-a10 / det, a00 / det]];
        for k in 0..2 {
            let u: Vec<Complex<f64>> = (0..4).map(|n| h0[n] * inv[0][k] + h1[n] * inv[1][k]).collect();
            let g = ch.user(k);
            let (nu, ng) = (norm(&u), norm(g));
            let v: Vec<Complex<f64>> = (0..4).map(|n| u[n] * (0.5 / nu) + g[n] * (0.5 / ng)).collect();
            let nv = norm(&v);
            for n in 0..4 {
                assert!((hzm.dir(k)[n] - v[n] / nv).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn hzm_rejects_out_of_range_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ch = random_channels(&mut rng, 2, 3);
        assert!(hzm_direction(&ch, &[0.5, 1.5]).is_err());
        assert!(hzm_direction(&ch, &[0.5]).is_err());
    }

    #[test]
    fn hzm_detects_antipodal_cancellation() {
        let basis = HzmBasis {
            zf: CMatrix::from_rows(&[vec![c(1.0, 0.0), c(0.0, 0.0)]]).unwrap(),
            mrt: CMatrix::from_rows(&[vec![c(-1.0, 0.0), c(0.0, 0.0)]]).unwrap(),
        };
        assert!(matches!(basis.combine(&[0.5]), Err(BeamError::Degenerate(_))));
    }

    #[test]
    fn recover_beams_scales_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ch = random_channels(&mut rng, 3, 4);
        let d = mrt_directions(&ch).unwrap();
        let zero = recover_beams(&d, &[0.0; 3]).unwrap();
        assert!(zero.w.as_slice().iter().all(|z| z.norm() == 0.0));
        let p = [0.2, 0.35, 0.1];
        let b = recover_beams(&d, &p).unwrap();
        for k in 0..3 {
            assert!((norm(b.w.row(k)).powi(2) - p[k]).abs() < 1e-12);
        }
        let cfg = SystemConfig::uniform(3, 1.0, 0.5, 1.0, 0.0).unwrap();
        assert!((total_power(&b, &cfg) - (0.65 + 0.5)).abs() < 1e-12);
        assert!(recover_beams(&d, &[0.1, -0.1, 0.0]).is_err());
    }

    #[test]
    fn precoders_work_in_single_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ch = random_channels(&mut rng, 3, 6).cast::<f32>();
        let cfg = SystemConfig::uniform(3, 1.0, 0.5, 0.5, 0.0).unwrap();
        let m = mmse_directions(&ch, &cfg).unwrap();
        for k in 0..3 {
            assert!((norm(m.dir(k)) - 1.0).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn hzm_is_continuous_in_alpha(seed in 0u64..200, a in 0.01..0.99f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ch = random_channels(&mut rng, 3, 6);
            let basis = HzmBasis::new(&ch).unwrap();
            let d0 = basis.combine(&[a; 3]).unwrap();
            let d1 = basis.combine(&[a + 1e-6; 3]).unwrap();
            for (x, y) in d0.dirs.as_slice().iter().zip(d1.dirs.as_slice()) {
                prop_assert!((x - y).norm() <= 1e-4);
            }
        }

        #[test]
        fn every_scheme_is_permutation_equivariant(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ch = random_channels(&mut rng, 3, 5);
            let cfg = SystemConfig::new(1.0, 0.5, vec![0.2, 0.5, 0.9], vec![0.0; 3]).unwrap();
            let perm = [2, 0, 1];
            let chp = ch.permuted(&perm);
            let cfgp = cfg.permuted(&perm);
            let alphas = [0.2, 0.6, 0.9];
            let alphas_p: Vec<f64> = perm.iter().map(|&p| alphas[p]).collect();
            let pairs = [
                (mmse_directions(&ch, &cfg).unwrap().dirs, mmse_directions(&chp, &cfgp).unwrap().dirs),
                (zf_directions(&ch).unwrap().dirs, zf_directions(&chp).unwrap().dirs),
                (mrt_directions(&ch).unwrap().dirs, mrt_directions(&chp).unwrap().dirs),
                (hzm_direction(&ch, &alphas).unwrap().dirs, hzm_direction(&chp, &alphas_p).unwrap().dirs),
            ];
            for (d, dp) in pairs {
                prop_assert!(min_row_agreement(&d.permute_rows(&perm), &dp) > 1.0 - 1e-10);
            }
        }
    }
}
