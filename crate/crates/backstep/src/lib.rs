// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cauchy;
pub mod dd;
pub mod error;
pub mod format;
pub mod matrix;
pub mod precision;
pub mod quantitative;
pub mod simulate;
pub mod spectrum;
pub mod transform;

pub use error::{Error, Result};
pub use num_complex::Complex64;

// Guide chapters, compiled as doctests.
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod guide_introduction {}
#[doc = include_str!("../../../book/src/spectrum.md")]
pub mod guide_spectrum {}
#[doc = include_str!("../../../book/src/cauchy.md")]
pub mod guide_cauchy {}
#[doc = include_str!("../../../book/src/synthesis.md")]
pub mod guide_synthesis {}
#[doc = include_str!("../../../book/src/cost.md")]
pub mod guide_cost {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod guide_simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod guide_cli {}
