// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod evaluate;
pub mod footprints;
pub mod metrics;
pub mod optimize;
mod par;
pub mod raster;
pub mod synthetic;
