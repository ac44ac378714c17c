// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotate;
pub mod channel;
pub mod detect;
pub mod error;
pub mod evalmetrics;
pub mod features;
pub mod iq;
pub mod pipeline;
pub mod spectro;
pub mod sync;
pub mod waveforms;

pub use error::{Error, Result};
