//! Energy-efficient multi-user MISO downlink beamforming.
//!
//! The crate covers the system model (rates, energy efficiency and
//! feasibility), seeded channel datasets, ZF/MRT/MMSE/hybrid precoders, a
//! tape-based reverse-mode autodiff engine, a complex graph-attention
//! network that predicts powers and hybrid coefficients, its unsupervised
//! trainer, and an SCA optimization baseline with small exhaustive oracles.
//!
//! Numeric code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod autodiff;
pub mod channel;
pub mod error;
pub mod gnn;
pub mod linalg;
pub mod model;
pub mod precoders;
pub mod sca;
pub mod scalar;
pub mod trainer;

pub use error::{BeamError, Result};

pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type CMatrix64 = linalg::CMatrix<f64>;
pub type CMatrix32 = linalg::CMatrix<f32>;
pub type ChannelSet64 = model::ChannelSet<f64>;
pub type ChannelSet32 = model::ChannelSet<f32>;
pub type BeamSolution64 = model::BeamSolution<f64>;
pub type BeamSolution32 = model::BeamSolution<f32>;
pub type GnnParams64 = gnn::GnnParams<f64>;
pub type GnnParams32 = gnn::GnnParams<f32>;
