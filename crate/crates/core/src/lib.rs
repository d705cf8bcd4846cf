//! Processing chain for dermoscopy lesion and lesion-attribute segmentation.
//!
//! The crate wraps a pluggable probability-map [`tta::Predictor`] with
//! everything around it: augmentation, preprocessing, loss and metric
//! kernels, marker/mask morphological post-processing with threshold grid
//! search, test-time-augmentation and fold ensembling, negative-class
//! subsampling, and challenge-style evaluation.
//!
//! Real-valued rasters and kernels are generic over [`Real`] (`f32` or `f64`);
//! the aliases below fix the pipeline's storage precision.

pub mod error;
pub mod scalar;
pub mod raster;
pub mod rng;
pub mod rasterio;
pub mod dataset;
pub mod preprocess;
pub mod augment;
pub mod loss;
pub mod metrics;
pub mod postprocess;
pub mod tta;
pub mod arch;
pub mod config;
pub mod synthetic;

pub use error::{Error, ErrorClass, Result};
pub use raster::{BinaryMask, Image, LossCoefficients, NormImage, Permutation, ProbMap, ThresholdPair};
pub use scalar::Real;

/// Probability maps as the pipeline stores them.
pub type ProbabilityMap = ProbMap<f32>;
/// Double-precision maps, used where gradients are checked numerically.
pub type ProbabilityMap64 = ProbMap<f64>;
pub type NormalizedImage = NormImage<f32>;
