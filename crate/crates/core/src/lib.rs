//! Factor models for tensor-valued time series.
//!
//! Loadings of `X_t = M_t + E_t`, `M_t = F_t ×_1 A_1 ... ×_K A_K`, are
//! estimated mode by mode from lagged cross-products of the series
//! (TOPUP, TIPUP and their iterated versions, plus the lag-free UP baseline).
//! Modes are zero-based throughout the API.

pub mod dgp;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod io;
pub mod postprocess;
pub mod ratefit;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use estimators::{estimate, FactorEstimate, Method, ModelSpec};
pub use tensor::{Matrix, Tensor, TensorSeries};
