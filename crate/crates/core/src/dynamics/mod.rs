//! Residual-state LSTM: model, unrolling, gradients, optimizer, training and
//! checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod model;
pub mod train;
pub mod unroll;

pub use adam::{Adam, AdamConfig};
pub use model::{lstm_step, step_batch, HiddenState, Linear, LstmLayer, LstmModel, ModelConfig, Normalizer};
pub use train::{train, TrainConfig, TrainReport, DIVERGENCE_LOSS};
pub use unroll::{
    backward, forward, loss, rollout, rollout_batch, rollout_traced, BackwardOptions, Batch, Feedback, Gradients,
    InputSource, Rollout, RolloutConfig, Unrolled,
};

use crate::error::{Error, Result};
use crate::state::PoseState;

pub const DEFAULT_GRAD_CLIP: f64 = 5.0;

/// `r_t = s_t − s_{t−1}` in packed-state units.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub delta: Vec<f64>,
}

impl Residual {
    pub fn between(prev: &PoseState, next: &PoseState) -> Result<Self> {
        if prev.len() != next.len() {
            return Err(Error::ShapeMismatch(format!("{} vs {}", prev.len(), next.len())));
        }
        let delta = next.as_slice().iter().zip(prev.as_slice()).map(|(a, b)| a - b).collect();
        Ok(Self { delta })
    }

    pub fn zero(d: usize) -> Self {
        Self { delta: vec![0.0; d] }
    }

    /// `s + r`, without validity checks on the result.
    pub fn apply(&self, state: &PoseState) -> Result<PoseState> {
        if state.len() != self.delta.len() {
            return Err(Error::ShapeMismatch(format!("{} vs {}", state.len(), self.delta.len())));
        }
        PoseState::from_vec(state.as_slice().iter().zip(&self.delta).map(|(s, r)| s + r).collect())
    }
}
