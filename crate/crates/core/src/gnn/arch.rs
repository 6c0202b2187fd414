//! Network architecture description and presets.

use serde::{Deserialize, Serialize};

use crate::error::{BeamError, Result};
use crate::model::Scheme;

/// One graph-attention layer: per-head output width and head count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CgalSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
}

impl CgalSpec {
    pub fn concat_dim(&self) -> usize {
        self.out_dim * self.heads
    }
}

/// How user channels enter the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Topology {
    /// One node per user, attention layers first; any user count.
    Graph,
    /// All channels flattened into one vector; fixed user count.
    Flat { k_users: usize },
}

/// Orientation of the hybrid-coefficient sigmoid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaSign {
    /// `1 / (1 + exp(x))`.
    #[default]
    AsPrinted,
    /// `1 / (1 + exp(-x))`.
    Standard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Antennas per user channel.
    pub input_dim: usize,
    pub topology: Topology,
    pub cgal: Vec<CgalSpec>,
    /// Widths of the per-scheme dense stack; the first entry is its input
    /// width and the final output layer is appended per scheme.
    pub cfcl: Vec<usize>,
    /// Output branches, each with its own dense stack.
    pub branches: Vec<Scheme>,
    /// Split ReLU after each attention layer's head concatenation.
    pub cgal_crelu: bool,
    /// Batch normalization before the activation of hidden dense layers.
    pub batch_norm: bool,
    /// Additive skip connection around each attention layer.
    pub residual: bool,
    #[serde(default)]
    pub alpha_sign: AlphaSign,
}

/// Outputs per user: power only, or power and hybrid coefficient.
pub fn head_width(s: Scheme) -> usize {
    match s {
        Scheme::Hzm => 2,
        _ => 1,
    }
}

fn graph(n_t: usize, layers: &[(usize, usize)], dense: &[usize], branches: Vec<Scheme>) -> ArchSpec {
    let mut cgal = Vec::new();
    let mut d = n_t;
    for &(out, heads) in layers {
        cgal.push(CgalSpec {
            in_dim: d,
            out_dim: out,
            heads,
        });
        d = out * heads;
    }
    let mut cfcl = vec![d];
    cfcl.extend_from_slice(dense);
    ArchSpec {
        input_dim: n_t,
        topology: Topology::Graph,
        cgal,
        cfcl,
        branches,
        cgal_crelu: true,
        batch_norm: true,
        residual: false,
        alpha_sign: AlphaSign::AsPrinted,
    }
}

impl ArchSpec {
    /// Small network for tests: two 2-head attention layers of width 4.
    pub fn toy(n_t: usize, branches: Vec<Scheme>) -> Self {
        graph(n_t, &[(4, 2), (4, 2)], &[6], branches)
    }

    /// Desktop-scale network: 16x4 and 32x4 attention, dense 128-64-32.
    pub fn desk(n_t: usize, branches: Vec<Scheme>) -> Self {
        graph(n_t, &[(16, 4), (32, 4)], &[64, 32], branches)
    }

    /// Full-size network: 64x20 and 512x20 attention, dense 10240-512-128.
    pub fn paper(n_t: usize, branches: Vec<Scheme>) -> Self {
        graph(n_t, &[(64, 20), (512, 20)], &[512, 128], branches)
    }

    /// Dense-only baseline on flattened channels of exactly `k_users` users.
    pub fn mlp(n_t: usize, k_users: usize, branches: Vec<Scheme>) -> Self {
        ArchSpec {
            input_dim: n_t,
            topology: Topology::Flat { k_users },
            cgal: Vec::new(),
            cfcl: vec![n_t * k_users, 128, 64, 32],
            branches,
            cgal_crelu: false,
            batch_norm: true,
            residual: false,
            alpha_sign: AlphaSign::AsPrinted,
        }
    }

    /// Builds a preset from `name[:branches]`, where name is one of `toy`,
    /// `desk`, `paper`, `mlp` and branches is `mmse`, `hzm` or `both`.
    pub fn from_preset(spec: &str, n_t: usize, k_users: usize, default: &[Scheme]) -> Result<Self> {
        let (name, heads) = match spec.split_once(':') {
            Some((n, h)) => (n, Some(h)),
            None => (spec, None),
        };
        let branches = match heads {
            None => default.to_vec(),
            Some("mmse") => vec![Scheme::Mmse],
            Some("hzm") => vec![Scheme::Hzm],
            Some("both") => vec![Scheme::Mmse, Scheme::Hzm],
            Some(other) => return Err(BeamError::Config(format!("unknown branch set '{other}'"))),
        };
        let arch = match name {
            "toy" => Self::toy(n_t, branches),
            "desk" => Self::desk(n_t, branches),
            "paper" => Self::paper(n_t, branches),
            "mlp" => Self::mlp(n_t, k_users, branches),
            other => return Err(BeamError::Config(format!("unknown architecture preset '{other}'"))),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn has_branch(&self, s: Scheme) -> bool {
        self.branches.contains(&s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BeamError::Config(m));
        if self.input_dim == 0 {
            return bad("input dimension must be positive".into());
        }
        if self.branches.is_empty() {
            return bad("at least one output branch is required".into());
        }
        for (i, b) in self.branches.iter().enumerate() {
            if *b == Scheme::Raw {
                return bad("raw beams have no output branch".into());
            }
            if self.branches[..i].contains(b) {
                return bad(format!("duplicate branch {b}"));
            }
        }
        if self.cfcl.is_empty() || self.cfcl.contains(&0) {
            return bad("dense widths must be non-empty and positive".into());
        }
        match self.topology {
            Topology::Graph => {
                let mut d = self.input_dim;
                for (l, c) in self.cgal.iter().enumerate() {
                    if c.in_dim != d {
                        return bad(format!("attention layer {l} expects width {}, receives {d}", c.in_dim));
                    }
                    if c.out_dim == 0 || c.heads == 0 {
                        return bad(format!("attention layer {l} has zero width or heads"));
                    }
                    d = c.concat_dim();
                }
                if self.cfcl[0] != d {
                    return bad(format!("dense stack expects width {}, receives {d}", self.cfcl[0]));
                }
            }
            Topology::Flat { k_users } => {
                if !self.cgal.is_empty() {
                    return bad("flat topology takes no attention layers".into());
                }
                if k_users == 0 || self.cfcl[0] != k_users * self.input_dim {
                    return bad(format!(
                        "flat input width {} must equal users x antennas = {}",
                        self.cfcl[0],
                        k_users * self.input_dim
                    ));
                }
            }
        }
        Ok(())
    }
}
