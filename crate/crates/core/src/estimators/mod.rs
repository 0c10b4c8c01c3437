//! Depth inference from acquisition records.
//!
//! Two estimators are provided: the generalized Coates transient estimate
//! followed by an argmax, and a Bayesian posterior over depth (optionally
//! joint with a grid of signal-flux hypotheses) followed by MAP.

mod background;
mod coates;
mod posterior;

pub use background::{estimate_background, BackgroundEstimate, MIN_CALIBRATION_DETECTIONS};
pub use coates::{coates_depth, coates_transient, dither_depth, DepthEstimate, TransientEstimate};
pub use posterior::{
    posterior_entropy, DepthPosterior, FluxGrid, PriorTag, UpdateStatus, DEFAULT_FLUX_GRID_SIZE,
};
