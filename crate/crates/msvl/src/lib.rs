//! Multispectral-view learning toolkit.
//!
//! This crate reconstructs 24-band reflectance cubes from 3-channel color
//! images via data-driven Wiener estimation, classifies them with a
//! graph-attention multi-view model over cross-spectral graphs, and scores
//! predictions with a full ROC-based statistical protocol. A synthetic
//! phantom generator makes the whole pipeline runnable end to end without
//! any clinical data.
//!
//! The pipeline, in order:
//!
//! 1. [`calib`] fits a 3(+bias)->24 transformation matrix from color-checker
//!    patches and validates it by RMSE.
//! 2. [`recon`] applies the matrix per pixel to build a [`spectral::SpectralCube`]
//!    and exposes its 24 single-band views.
//! 3. [`graph`] builds the cross-spectral topology (ring, full, or jumper-N)
//!    over the 24 band nodes.
//! 4. [`model`] runs the multi-view classifier: a shared residual encoder per
//!    view, a channel-gating attention module, a four-head graph attention
//!    layer over the topology, and a two-class readout; [`nn`] supplies the
//!    reverse-mode tape underneath.
//! 5. [`metrics`] evaluates scores: ROC/AUROC, stratified bootstrap
//!    confidence intervals, DeLong comparison, Youden cutoff, and confusion
//!    metrics.
//! 6. [`phantom`] generates the synthetic calibration patches and two-class
//!    fundus-like images that the acceptance suite trains on.
//!
//! ```
//! use msvl::calib::{reconstruct_spectrum, wiener_fit};
//! use msvl::phantom::{synth_patch_set, SyntheticCamera};
//!
//! let camera = SyntheticCamera::default_camera(0.0);
//! let (train, holdout) = synth_patch_set(3, 24, 12, &camera, 7).unwrap();
//! let matrix = wiener_fit(&train, 0.0, false).unwrap();
//! let spectrum = reconstruct_spectrum(&matrix, holdout[0].rgb_linear).unwrap();
//! assert_eq!(spectrum.values().len(), 24);
//! ```

pub mod calib;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod recon;
pub mod spectral;
pub mod util;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book;
