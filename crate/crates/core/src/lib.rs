//! Guided super-resolution of scalar raster maps.
//!
//! Upsamples a low-resolution source map `S` by an integer factor `α` with the
//! help of a co-registered multi-channel high-resolution guide `G`, and
//! evaluates the predictions against the high-resolution target `Y`.
//!
//! Methods: unguided interpolation ([`interp`]), joint bilateral upsampling
//! ([`jbu`]) and the per-sample pixel-to-pixel network ([`p2p`]). Evaluation:
//! regression and perception metrics ([`metrics`]) and radial frequency
//! response ([`spectrum`]). [`bench`] ties these together behind one config.

pub mod bench;
pub mod bundle;
pub mod error;
pub mod interp;
pub mod jbu;
pub mod metrics;
pub mod p2p;
pub mod raster;
pub mod spectrum;
pub mod split;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{coord_grid, downsample_avg, CoordGrid, PatchRecord, Raster};
