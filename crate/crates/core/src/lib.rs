//! Sign-to-magnitude weight binarization toolkit.
//!
//! - [`binarize`]: optimal and half-half `{0, 1}` codes, baselines, metrics.
//! - [`dist`]: thresholds and `+1` proportions under Laplace/Gauss models.
//! - [`bitkernel`]: packed XNOR/popcount dot, matvec and convolution.
//! - [`nn`]: binarized ConvNet training with STE.
//! - [`data`]: CIFAR-10 / synthetic datasets, checkpoints, CSV.

pub mod binarize;
pub mod bitkernel;
pub mod data;
pub mod dist;
pub mod nn;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
