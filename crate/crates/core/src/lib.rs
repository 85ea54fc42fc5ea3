#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fft;
pub mod fields;
pub mod io;
pub mod kernels;
pub mod noise;
pub mod params;
pub mod particles;
pub mod pde;
pub mod smooth;

pub use error::{Error, Result};
