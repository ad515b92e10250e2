#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bmo;
pub mod bumps;
pub mod cli;
pub mod error;
pub mod gauss;
pub mod grid;
pub mod harness;
pub mod jet;
pub mod kernels;
pub mod paraaccretive;
pub mod quadrature;
pub mod summation;

pub use error::{LabError, Result};
