// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boa;
pub mod cem;
pub mod commands;
pub mod config;
pub mod ddpg;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod neural;
pub mod oracle;
pub mod seed;
pub mod svm;
pub mod sweep;

pub use error::{Error, Result};
