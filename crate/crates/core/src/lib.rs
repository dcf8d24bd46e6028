// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments, clippy::len_without_is_empty)]

pub mod axis1d;
pub mod birman_schwinger;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod landau;
pub mod linalg;
pub mod quadrature;
pub mod resonances;
pub mod ssf;

pub use error::{Error, Result};
pub use num_complex::Complex64;
