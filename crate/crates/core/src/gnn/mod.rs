//! Graph-attention beamforming network: attention trunk, per-scheme dense
//! heads, power projection, hybrid-coefficient sigmoid, scheme selection
//! and the dense flat-input baseline.

mod arch;
mod batch;
mod checkpoint;
mod forward;
mod graph;
mod params;

pub use arch::{head_width, AlphaSign, ArchSpec, CgalSpec, Topology};
pub use batch::{Batch, HzmConsts, MmseConsts};
pub use checkpoint::{
    decode_params, encode_params, load_params, load_params_for, save_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use forward::{
    alpha_activation, cgal_forward, forward_batch, full_forward, head_decode, mlp_forward, power_activation,
    select_scheme, BranchOutput, Candidate, ForwardOutput, Mode, SELECT_TIE,
};
pub use graph::{branch_loss, build, BnMode, Bound, BranchVars, LossVars, NetGraph, BN_EPS, BN_MOMENTUM};
pub use params::{Block, BnStats, GnnParams, TrainingMeta};
