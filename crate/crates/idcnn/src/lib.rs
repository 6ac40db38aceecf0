//! Switching filter for impulsive noise removal in color images.
//!
//! A trained convolutional detector estimates a per-pixel impulse
//! probability map, a threshold binarizes it, and an adaptive arithmetic
//! mean filter restores only the flagged pixels, leaving clean pixels
//! untouched. The crate bundles the detector's dense NN engine (with
//! gradient verification), the CTRI/SPIN noise models, the restoration
//! filter, detection and image-quality metrics, and the dataset pipeline.
//!
//! Kernels are data-parallel via rayon when the default `parallel` feature
//! is on; every parallel reduction runs in a fixed order, so results are
//! bit-identical to the sequential fallback.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod noise;
pub mod oracle;
pub mod par;
pub mod restore;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image::{ColorImage, NoiseMap};
pub use model::{build_model, IdcnnModel};
pub use restore::{adaptive_mean_restore, switching_filter, RestoreConfig};
pub use tensor::{Element, Tensor};
pub use train::{train, TrainConfig, Trainer};
