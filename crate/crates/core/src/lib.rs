//! Retinal microvasculature analysis on en-face angiography images:
//! a from-scratch convolutional segmentation network with staged
//! fine-tuning, classical post-processing, inter-capillary-area
//! quantification against a normative database, and a synthetic phantom
//! generator for verification.

pub mod augment;
pub mod components;
pub mod distance;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod phantom;
pub mod quantify;
pub mod raster;
pub mod segment;
pub mod tensor;
pub mod training;
pub mod unet;

pub use error::{Error, Result};
pub use raster::{BinaryMask, GrayImage, ProbMap};
