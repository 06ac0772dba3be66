//! Gaussian landmark states for video: fitting, rendering, warping,
//! interpolation, residual LSTM dynamics and image metrics.

pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod heatmap;
pub mod interpolate;
pub mod linalg;
pub mod metrics;
pub mod pgm;
pub mod rng;
pub mod seqcsv;
pub mod state;
pub mod synthetic;

pub use error::{Error, Result};
pub use state::{ActivationMap, CholFactor, GridCoords, PoseState, StateSequence};
