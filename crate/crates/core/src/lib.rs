//! Optimally robust Kalman filtering for linear Gaussian state-space models.
//!
//! * [`ssm`]: model, ideal simulation, AO/IO/SO contamination
//! * [`kalman`]: classical filter and Riccati recursion
//! * [`rls`]: Huberized rLS.AO / rLS.IO corrections and clipping calibration
//! * [`minimax`]: SO/eSO saddle points, risks, least favorable radius
//! * [`diagnostics`]: linearity test, normality and domination probes
//! * [`filter`], [`experiment`]: whole-trajectory runs and Monte Carlo studies

// NaN must fail validation, so `!(x > 0.0)` is intended throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod expect;
pub mod experiment;
pub mod filter;
pub mod kalman;
pub mod linalg;
pub mod minimax;
pub mod quad;
pub mod rls;
pub mod rng;
pub mod root;
pub mod ssm;

pub use error::{Error, Result};
