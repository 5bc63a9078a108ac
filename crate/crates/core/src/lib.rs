//! Jump-robust Fourier–Féjer estimation of spot covariance.

pub mod baseline;
pub mod cli_io;
pub mod error;
pub mod fourier;
pub mod linalg;
pub mod mc;
pub mod quadrature;
pub mod scalar;
pub mod second_pass;
pub mod simulator;
pub mod special;

pub use error::{Error, Result};

pub type SymMatrix64 = linalg::SymMatrix<f64>;
pub type SymMatrix32 = linalg::SymMatrix<f32>;
pub type SampledPath64 = linalg::SampledPath<f64>;
pub type SampledPath32 = linalg::SampledPath<f32>;
pub type SymMatrixPath64 = linalg::SymMatrixPath<f64>;
pub type TimeGrid64 = linalg::TimeGrid<f64>;
pub type GFunctionSpec64 = fourier::GFunctionSpec<f64>;
pub type GFunctionSpec32 = fourier::GFunctionSpec<f32>;
pub type FourierCoefficients64 = fourier::FourierCoefficients<f64>;
pub type BatesParams64 = simulator::BatesParams<f64>;
pub type SecondPassConfig64 = second_pass::SecondPassConfig<f64>;
