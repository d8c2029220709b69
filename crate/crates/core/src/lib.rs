#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod blocktridiag;
pub mod config;
pub mod drs;
pub mod error;
pub mod io;
pub mod navigation;
pub mod pipeline;
pub mod plq;
pub mod sim;
pub mod statespace;

pub use error::{Error, Result};
