//! Synthetic radiography of layered shell targets, single-view volumetric
//! reconstruction with a deeply supervised encoder-decoder, and surface
//! feature extraction from the reconstructed volumes.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod degrade;
pub mod error;
pub mod features;
pub mod image;
pub mod io;
pub mod nn;
pub mod oracle;
pub mod projector;
pub mod shell;
pub mod volume;

pub use error::{Error, Result};
pub use image::Image;
pub use projector::{BeamGeometry, BeamKind, MaterialSpec, Radiograph, Ray};
pub use shell::{ShellLayer, ShellModel};
pub use volume::{DensityVolume, GridSpec};
