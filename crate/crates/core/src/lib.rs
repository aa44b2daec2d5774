//! Benchmark engine for out-of-distribution detection under class-incremental
//! learning.

pub mod cil;
pub mod data;
pub mod error;
pub mod finetune;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod par;
pub mod posthoc;
pub mod protocol;
pub mod synthgen;

pub use error::{Error, ErrorKind, Result};
pub use matrix::Matrix;
