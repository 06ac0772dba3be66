//! Minibatch training loop.

use rand::Rng;

use super::adam::{Adam, AdamConfig};
use super::model::LstmModel;
use super::unroll::{backward, BackwardOptions, Batch, Feedback, RolloutConfig};
use super::DEFAULT_GRAD_CLIP;
use crate::error::{Error, Result};
use crate::rng;
use crate::state::{cholesky_2x2, PoseState, StateSequence};

pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub feedback: Feedback,
    /// Rotate each sampled window by a random angle about the origin.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 5e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            max_steps: 1000,
            seed: 0,
            grad_clip: Some(DEFAULT_GRAD_CLIP),
            feedback: Feedback::Attached,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.learning_rate, self.beta1, self.beta2, self.eps];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) || self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::InvalidArgument(format!("optimizer rates out of range: {self:?}")));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!("weight_decay = {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidArgument(format!("grad_clip = {c}")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training loss per step, before that step's update.
    pub losses: Vec<f64>,
    /// Pre-clip gradient norm per step.
    pub grad_norms: Vec<f64>,
}

/// Rotates every landmark about the origin: μ → Rμ, Σ → RΣRᵀ.
pub fn rotate_state(state: &PoseState, theta: f64) -> Result<PoseState> {
    let (sin, cos) = theta.sin_cos();
    let rot = |v: [f64; 2]| [cos * v[0] - sin * v[1], sin * v[0] + cos * v[1]];
    let mut out = Vec::with_capacity(state.len());
    for k in 0..state.landmarks() {
        let [l11, l21, l22] = state.factor(k);
        // R·L is a square root of RΣRᵀ; re-triangularize it.
        let c0 = rot([l11, l21]);
        let c1 = rot([0.0, l22]);
        let sigma = [
            [c0[0] * c0[0] + c1[0] * c1[0], c0[0] * c0[1] + c1[0] * c1[1]],
            [c0[0] * c0[1] + c1[0] * c1[1], c0[1] * c0[1] + c1[1] * c1[1]],
        ];
        let l = cholesky_2x2(&sigma)?;
        let mu = rot(state.mu(k));
        out.extend_from_slice(&[mu[0], mu[1], l.l11, l.l21, l.l22]);
    }
    PoseState::from_vec(out)
}

/// Trains in place. Each step draws `batch_size` windows of `n + m` frames
/// (random sequence, random offset) from a stream keyed by `train_cfg.seed`.
pub fn train(
    model: &mut LstmModel,
    dataset: &[StateSequence],
    rollout_cfg: &RolloutConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with(model, dataset, rollout_cfg, train_cfg, |_, _| {})
}

/// As [`train`], calling `on_step(step, loss)` after every update.
pub fn train_with(
    model: &mut LstmModel,
    dataset: &[StateSequence],
    rollout_cfg: &RolloutConfig,
    train_cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    train_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let window = rollout_cfg.window_len();
    let d = model.state_dim();
    for (i, seq) in dataset.iter().enumerate() {
        if seq.len() < window {
            return Err(Error::InvalidArgument(format!(
                "sequence {i} has {} frames, need at least n + m = {window}",
                seq.len()
            )));
        }
        if seq.landmarks() * 5 != d {
            return Err(Error::ShapeMismatch(format!("sequence {i} has K = {}, model D = {d}", seq.landmarks())));
        }
    }

    let mut sampler = rng::stream(train_cfg.seed, "dynamics/batches");
    let mut opt = Adam::new(train_cfg.adam(), model);
    let opts = BackwardOptions { feedback: train_cfg.feedback, grad_clip: train_cfg.grad_clip };
    let mut report = TrainReport { losses: Vec::with_capacity(train_cfg.max_steps), grad_norms: Vec::new() };

    for step in 0..train_cfg.max_steps {
        let mut windows: Vec<Vec<PoseState>> = Vec::with_capacity(train_cfg.batch_size);
        for _ in 0..train_cfg.batch_size {
            let seq = &dataset[sampler.gen_range(0..dataset.len())];
            let start = sampler.gen_range(0..=seq.len() - window);
            let frames = &seq.frames()[start..start + window];
            windows.push(if train_cfg.augment {
                let theta = sampler.gen_range(0.0..std::f64::consts::TAU);
                frames.iter().map(|f| rotate_state(f, theta)).collect::<Result<_>>()?
            } else {
                frames.to_vec()
            });
        }
        let views: Vec<&[PoseState]> = windows.iter().map(Vec::as_slice).collect();
        let batch = Batch::from_windows(&views)?;
        let g = backward(model, &batch, rollout_cfg, &opts)?;
        if !g.loss.is_finite() || g.loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged { step, loss: g.loss });
        }
        opt.step(model, &g.grads);
        report.losses.push(g.loss);
        report.grad_norms.push(g.norm);
        on_step(step, g.loss);
    }
    Ok(report)
}
