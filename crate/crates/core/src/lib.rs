// Index loops mirror the math; `!(x > 0.0)` style checks are deliberate NaN guards.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::field_reassign_with_default))]

pub mod clusterinit;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod io;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{LabelTensor, Tensor, IGNORE};
