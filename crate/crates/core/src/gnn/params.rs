//! Learnable parameters laid out as named flat blocks.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{BeamError, Result};
use crate::model::Scheme;
use crate::scalar::Real;

use super::arch::{head_width, ArchSpec, Topology};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Real and imaginary part of a complex Glorot-uniform matrix.
    ComplexGlorot { fan_in: usize, fan_out: usize },
    /// Real Glorot-uniform matrix.
    Glorot { fan_in: usize, fan_out: usize },
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Slot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

/// Block layout implied by an architecture, in graph-construction order.
pub(crate) fn layout(arch: &ArchSpec) -> Vec<Slot> {
    let mut s = Vec::new();
    let mut push = |name: String, rows, cols, init| s.push(Slot { name, rows, cols, init });
    for (l, c) in arch.cgal.iter().enumerate() {
        let mat = Init::ComplexGlorot {
            fan_in: c.in_dim,
            fan_out: c.out_dim,
        };
        for d in 0..c.heads {
            for w in ["ws", "wn", "wm"] {
                for part in ["re", "im"] {
                    push(format!("cgal{l}.h{d}.{w}.{part}"), c.in_dim, c.out_dim, mat);
                }
            }
            let att = Init::ComplexGlorot {
                fan_in: c.out_dim,
                fan_out: 1,
            };
            for part in ["re", "im"] {
                push(format!("cgal{l}.h{d}.a.{part}"), c.out_dim, 1, att);
            }
        }
        if arch.residual && c.in_dim != c.concat_dim() {
            let proj = Init::ComplexGlorot {
                fan_in: c.in_dim,
                fan_out: c.concat_dim(),
            };
            for part in ["re", "im"] {
                push(format!("cgal{l}.skip.{part}"), c.in_dim, c.concat_dim(), proj);
            }
        }
    }
    let users = match arch.topology {
        Topology::Graph => 1,
        Topology::Flat { k_users } => k_users,
    };
    for b in &arch.branches {
        for t in 0..arch.cfcl.len() - 1 {
            let (i, o) = (arch.cfcl[t], arch.cfcl[t + 1]);
            push(format!("{b}.cfcl{t}.w"), i, o, Init::Glorot { fan_in: i, fan_out: o });
            if arch.batch_norm {
                for (nm, v) in [("gamma_re", 1.0), ("beta_re", 0.0), ("gamma_im", 1.0), ("beta_im", 0.0)] {
                    push(format!("{b}.cfcl{t}.bn.{nm}"), 1, o, Init::Const(v));
                }
            }
        }
        let i = *arch.cfcl.last().expect("validated");
        let o = users * head_width(*b);
        push(format!("{b}.out.w"), i, o, Init::Glorot { fan_in: i, fan_out: o });
    }
    s
}

/// Number of batch-normalized layers.
pub(crate) fn bn_layers(arch: &ArchSpec) -> Vec<(Scheme, usize, usize)> {
    if !arch.batch_norm {
        return Vec::new();
    }
    let mut v = Vec::new();
    for b in &arch.branches {
        for t in 0..arch.cfcl.len() - 1 {
            v.push((*b, t, arch.cfcl[t + 1]));
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block<T = f64> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Block<T> {
    pub fn tensor(&self) -> Tensor<T> {
        Tensor::from_vec(self.rows, self.cols, self.data.clone()).expect("block shape")
    }
}

/// Running statistics of one batch-normalized layer, per column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnStats<T = f64> {
    pub mean_re: Vec<T>,
    pub var_re: Vec<T>,
    pub mean_im: Vec<T>,
    pub var_im: Vec<T>,
}

impl<T: Real> BnStats<T> {
    pub fn fresh(width: usize) -> Self {
        Self {
            mean_re: vec![T::zero(); width],
            var_re: vec![T::one(); width],
            mean_im: vec![T::zero(); width],
            var_im: vec![T::one(); width],
        }
    }

    /// Exponential moving average with weight `momentum` on `batch`.
    pub fn update(&mut self, batch: &BnStats<T>, momentum: T) {
        let keep = T::one() - momentum;
        for (dst, src) in [
            (&mut self.mean_re, &batch.mean_re),
            (&mut self.var_re, &batch.var_re),
            (&mut self.mean_im, &batch.mean_im),
            (&mut self.var_im, &batch.var_im),
        ] {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = keep * *d + momentum * *s;
            }
        }
    }
}

/// Provenance stored alongside trained weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub dataset_checksum: Option<String>,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub seed: Option<u64>,
    pub scheme: Option<String>,
    pub loss_history_digest: Option<String>,
    /// User counts seen during training.
    #[serde(default)]
    pub trained_k: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnParams<T = f64> {
    pub arch: ArchSpec,
    pub blocks: Vec<Block<T>>,
    pub bn: Vec<BnStats<T>>,
    pub meta: TrainingMeta,
}

impl<T: Real> GnnParams<T> {
    /// Glorot-initialized parameters, deterministic in `seed`.
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = layout(arch)
            .into_iter()
            .map(|s| {
                let n = s.rows * s.cols;
                let data = match s.init {
                    Init::Const(v) => vec![T::lit(v); n],
                    Init::ComplexGlorot { fan_in, fan_out } | Init::Glorot { fan_in, fan_out } => {
                        let var = match s.init {
                            Init::ComplexGlorot { .. } => 1.0 / (fan_in + fan_out) as f64,
                            _ => 2.0 / (fan_in + fan_out) as f64,
                        };
                        let bound = (3.0 * var).sqrt();
                        let u = Uniform::new_inclusive(-bound, bound);
                        (0..n).map(|_| T::lit(u.sample(&mut rng))).collect()
                    }
                };
                Block {
                    name: s.name,
                    rows: s.rows,
                    cols: s.cols,
                    data,
                }
            })
            .collect();
        let bn = bn_layers(arch).into_iter().map(|(_, _, w)| BnStats::fresh(w)).collect();
        Ok(Self {
            arch: arch.clone(),
            blocks,
            bn,
            meta: TrainingMeta::default(),
        })
    }

    /// Same architecture with every learnable entry set to `v`.
    pub fn filled(arch: &ArchSpec, v: T) -> Result<Self> {
        let mut p = Self::init(arch, 0)?;
        for b in &mut p.blocks {
            b.data.iter_mut().for_each(|x| *x = v);
        }
        Ok(p)
    }

    /// Checks block names and shapes against the architecture.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let slots = layout(&self.arch);
        if slots.len() != self.blocks.len() {
            return Err(BeamError::Checkpoint(format!(
                "architecture has {} parameter blocks, found {}",
                slots.len(),
                self.blocks.len()
            )));
        }
        for (s, b) in slots.iter().zip(&self.blocks) {
            if s.name != b.name || s.rows != b.rows || s.cols != b.cols || b.data.len() != b.rows * b.cols {
                return Err(BeamError::Checkpoint(format!(
                    "block '{}' {}x{} does not match expected '{}' {}x{}",
                    b.name, b.rows, b.cols, s.name, s.rows, s.cols
                )));
            }
        }
        let bn = bn_layers(&self.arch);
        if bn.len() != self.bn.len()
            || bn
                .iter()
                .zip(&self.bn)
                .any(|((_, _, w), s)| [&s.mean_re, &s.var_re, &s.mean_im, &s.var_im].iter().any(|v| v.len() != *w))
        {
            return Err(BeamError::Checkpoint("normalization statistics do not match architecture".into()));
        }
        if self.blocks.iter().flat_map(|b| &b.data).any(|v| !v.is_finite()) {
            return Err(BeamError::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn block(&self, name: &str) -> Option<&Block<T>> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut Block<T>> {
        self.blocks.iter_mut().find(|b| b.name == name)
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> GnnParams<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        GnnParams {
            arch: self.arch.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    name: b.name.clone(),
                    rows: b.rows,
                    cols: b.cols,
                    data: c(&b.data),
                })
                .collect(),
            bn: self
                .bn
                .iter()
                .map(|s| BnStats {
                    mean_re: c(&s.mean_re),
                    var_re: c(&s.var_re),
                    mean_im: c(&s.mean_im),
                    var_im: c(&s.var_im),
                })
                .collect(),
            meta: self.meta.clone(),
        }
    }
}
