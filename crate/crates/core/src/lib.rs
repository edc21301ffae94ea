//! Tensor-on-tensor regression for real-time prediction of repetitive human
//! motion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod cli;
pub mod cycle;
pub mod error;
pub mod eval;
pub mod kinematics;
pub mod motion;
pub mod predictor;
pub mod regression;
pub mod stats;
pub mod tensor;
pub mod uncertainty;

pub use error::{Error, ErrorKind, Result};
