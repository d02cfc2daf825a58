//! Detection-to-census pipeline for livestock barns: probability rasters in,
//! filtered barn polygons, farms, production types and population estimates
//! out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
mod par;
mod unionfind;

pub mod farms;
pub mod features;
pub mod filters;
pub mod forest;
pub mod geometry;
pub mod labels;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod vector;

pub use error::{Error, Result};
pub use par::is_parallel;
