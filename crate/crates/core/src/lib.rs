//! Wireless imaging for RIS-aided sensing systems.
//!
//! The crate simulates stacked CSI measurements of a scattering scene through
//! a multipath channel model and reconstructs the scene with an implicit
//! neural representation (a Fourier-feature, sine-activated MLP) trained
//! against the physical forward model. Model-based baselines (FISTA and a
//! matched filter) and image-quality metrics are included for comparison.
//!
//! Module map:
//!
//! * [`scene`]: system geometry, ROI grids, ground-truth scenes, PGM I/O
//! * [`channel`]: point-to-point channels, RIS phase books, path assembly
//! * [`forward`]: the stacked affine operator `y = A sigma + b` and noise
//! * [`inr`]: positional encoding, the MLP and its analytic gradients
//! * [`train`]: the physics-informed training loop and rendering
//! * [`baselines`]: FISTA compressed sensing and matched filtering
//! * [`metrics`]: MSE / PSNR / SSIM
//! * [`experiment`]: ablation, comparison and distance sweep drivers

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod binfmt;
pub mod channel;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod inr;
pub mod metrics;
pub mod pgm;
pub mod rng;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use num_complex::Complex64;

pub use channel::{Path, PathMask, RisPhaseBook};
pub use forward::{ForwardOperator, MeasurementSet, NoiseModel};
pub use inr::{Activation, InrModel, ModelSpec};
pub use scene::{ImageGrid, Point3, Scene, SceneKind, SystemConfig};
pub use train::{TrainConfig, TrainHistory};
