//! Per-batch network inputs and the channel-derived constants the
//! differentiable rate model needs.

use crate::autodiff::{CTensor, Tensor};
use crate::error::{BeamError, Result};
use crate::linalg::inner;
use crate::model::{ChannelSet, Scheme, SystemConfig};
use crate::precoders::{mmse_directions, DirectionSet, HzmBasis};
use crate::scalar::Real;

use super::arch::Topology;

/// Fixed MMSE directions and their `|h_j^H d_k|^2` gains.
pub struct MmseConsts<T> {
    pub dirs: Vec<DirectionSet<T>>,
    /// Row `(n, j, k)`: gain of receiver `j` from direction `k`.
    pub gain: Tensor<T>,
}

/// ZF and MRT bases and their cross terms for the hybrid gain.
pub struct HzmConsts<T> {
    pub bases: Vec<HzmBasis<T>>,
    /// `Re`/`Im` of `h_j^H u_k` (ZF) and `h_j^H g_k` (MRT), rows `(n, j, k)`.
    pub zf_re: Tensor<T>,
    pub zf_im: Tensor<T>,
    pub mrt_re: Tensor<T>,
    pub mrt_im: Tensor<T>,
    /// `Re <u_k, g_k>`, rows `(n, k)`.
    pub overlap: Tensor<T>,
}

/// A stack of samples sharing the user count and power settings.
pub struct Batch<'a, T> {
    pub samples: Vec<&'a ChannelSet<T>>,
    pub cfgs: Vec<SystemConfig>,
    pub k_users: usize,
    pub n_antennas: usize,
    /// Node features, one row per user (graph) or per sample (flat).
    pub x: CTensor<T>,
    pub noise: Tensor<T>,
    pub floors: Tensor<T>,
    pub p_max: T,
    pub p_circuit: T,
    pub mmse: Option<MmseConsts<T>>,
    pub hzm: Option<HzmConsts<T>>,
}

impl<'a, T: Real> Batch<'a, T> {
    pub fn new(
        samples: &[&'a ChannelSet<T>],
        cfgs: &[SystemConfig],
        branches: &[Scheme],
        topology: Topology,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| BeamError::InvalidInput("empty batch".into()))?;
        if cfgs.len() != samples.len() {
            return Err(BeamError::InvalidInput(format!(
                "{} samples but {} configurations",
                samples.len(),
                cfgs.len()
            )));
        }
        let (k, nt) = (first.k_users(), first.n_antennas());
        for (i, (s, c)) in samples.iter().zip(cfgs).enumerate() {
            if s.k_users() != k || s.n_antennas() != nt {
                return Err(BeamError::Shape {
                    op: "batch sample",
                    lhs: (k, nt),
                    rhs: (s.k_users(), s.n_antennas()),
                });
            }
            if c.k_users() != k {
                return Err(BeamError::InvalidInput(format!(
                    "configuration {i} is for {} users, sample has {k}",
                    c.k_users()
                )));
            }
            if c.p_max != cfgs[0].p_max || c.p_circuit != cfgs[0].p_circuit {
                return Err(BeamError::InvalidInput("power settings differ within a batch".into()));
            }
        }
        let n = samples.len();
        let (rows, cols) = match topology {
            Topology::Graph => (n * k, nt),
            Topology::Flat { k_users } => {
                if k_users != k {
                    return Err(BeamError::Shape {
                        op: "flat input users",
                        lhs: (k_users, nt),
                        rhs: (k, nt),
                    });
                }
                (n, k * nt)
            }
        };
        let mut re = Vec::with_capacity(rows * cols);
        let mut im = Vec::with_capacity(rows * cols);
        for s in samples {
            for z in s.h().as_slice() {
                re.push(z.re);
                im.push(z.im);
            }
        }
        let x = CTensor::new(Tensor::from_vec(rows, cols, re)?, Tensor::from_vec(rows, cols, im)?)?;
        let col = |f: &dyn Fn(&SystemConfig, usize) -> f64| {
            Tensor::column(
                cfgs.iter()
                    .flat_map(|c| (0..k).map(move |u| T::lit(f(c, u))))
                    .collect(),
            )
        };
        let noise = col(&|c, u| c.noise_powers[u]);
        let floors = col(&|c, u| c.rate_floors[u]);

        let mmse = if branches.contains(&Scheme::Mmse) {
            let mut dirs = Vec::with_capacity(n);
            let mut gain = Vec::with_capacity(n * k * k);
            for (s, c) in samples.iter().zip(cfgs) {
                let d = mmse_directions(s, c)?;
                for j in 0..k {
                    for u in 0..k {
                        gain.push(inner(s.user(j), d.dir(u)).norm_sqr());
                    }
                }
                dirs.push(d);
            }
            Some(MmseConsts {
                dirs,
                gain: Tensor::column(gain),
            })
        } else {
            None
        };

        let hzm = if branches.contains(&Scheme::Hzm) {
            let mut bases = Vec::with_capacity(n);
            let (mut zr, mut zi, mut mr, mut mi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut overlap = Vec::with_capacity(n * k);
            for s in samples {
                let b = HzmBasis::new(s)?;
                for j in 0..k {
                    for u in 0..k {
                        let a = inner(s.user(j), b.zf.row(u));
                        let g = inner(s.user(j), b.mrt.row(u));
                        zr.push(a.re);
                        zi.push(a.im);
                        mr.push(g.re);
                        mi.push(g.im);
                    }
                }
                for u in 0..k {
                    overlap.push(inner(b.zf.row(u), b.mrt.row(u)).re);
                }
                bases.push(b);
            }
            Some(HzmConsts {
                bases,
                zf_re: Tensor::column(zr),
                zf_im: Tensor::column(zi),
                mrt_re: Tensor::column(mr),
                mrt_im: Tensor::column(mi),
                overlap: Tensor::column(overlap),
            })
        } else {
            None
        };

        Ok(Self {
            samples: samples.to_vec(),
            cfgs: cfgs.to_vec(),
            k_users: k,
            n_antennas: nt,
            x,
            noise,
            floors,
            p_max: T::lit(cfgs[0].p_max),
            p_circuit: T::lit(cfgs[0].p_circuit),
            mmse,
            hzm,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
