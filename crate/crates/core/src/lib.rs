#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod field;
pub mod params;
pub mod proximal;
pub mod cauchy;
pub mod periodic;
pub mod verification;
pub mod io;
pub mod runner;

pub use error::{CglError, Result};
