//! Adapting an image classifier to event-camera streams without source data.
//!
//! The pipeline starts from a classifier pretrained on labeled grayscale
//! frames and a reconstruction network that turns event windows back into
//! frame-like surrogates. Adaptation then trains three event-representation
//! classifiers (stack image, voxel grid, event spike tensor) against the
//! surrogate branch using entropy minimization, knowledge distillation
//! through a text/visual feature bank, and cross-representation consistency.
//!
//! Modules follow the data path: [`event_io`] loads and synthesizes streams,
//! [`repr`] densifies them, [`autodiff`] supplies the tape machinery,
//! [`models`] and [`clipbank`] define the networks and feature banks,
//! [`losses`] the objective terms, [`adapt`] the training loops, and
//! [`metrics`] the evaluation report.

pub mod adapt;
pub mod autodiff;
pub mod clipbank;
pub mod event_io;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod repr;
