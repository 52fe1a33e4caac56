// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compressor;
pub mod config;
pub mod domain;
pub mod error;
pub mod events;
pub mod lbo;
pub mod metrics;
pub mod pipeline;
pub mod similarity;
pub mod storage;
pub mod tracker;
pub mod trafficgen;
pub mod trajectory;
pub mod value;

pub use error::{Error, Result};
