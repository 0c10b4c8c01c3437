//! Adaptive gating for single-photon lidar.
//!
//! The crate models a time-gated SPAD pixel under periodic pulsed
//! illumination, simulates its acquisitions, estimates depth from the
//! resulting timestamps, and chooses gates adaptively by posterior sampling.
//!
//! - [`model`]: bin timing, transients, the detection likelihood and
//!   acquisition records.
//! - [`estimators`]: Coates' estimator, background estimation, and the
//!   Bayesian depth posterior.
//! - [`spadsim`]: Monte Carlo simulator of the detector.
//! - [`policies`]: gating policies and adaptive exposure.
//! - [`scene`]: scene grids, priors and file formats.
//! - [`harness`]: experiment configuration, sweeps, scans and CSV output.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimators;
pub mod harness;
pub mod model;
pub mod policies;
pub mod rng;
pub mod scene;
pub mod spadsim;

pub use error::{Error, Result};
pub use estimators::{BackgroundEstimate, DepthEstimate, DepthPosterior, FluxGrid, PriorTag, TransientEstimate};
pub use model::{AcquisitionRecord, DetectedHistogram, Observation, SceneTransient, SpadConfig};
pub use policies::{GateDirective, GatingPolicy, PolicyKind, PolicyState};
pub use spadsim::{run_acquisition, Acquisition, AcquisitionLimits, CycleOutcome};
