//! Teacher-forced / self-fed unrolling, backpropagation through time, and
//! free rollout.
//!
//! A window of `L = n + m` ground-truth frames drives `L − 1` recurrent steps.
//! Step `τ` consumes `[s_in, r_in]` and emits a residual `r̂`, predicting
//! `ŝ_{τ+1} = s_in + r̂`. For `τ < n` the inputs are ground truth (`r_in` at
//! `τ = 0` is zero); afterwards `s_in = ŝ_τ` and `r_in = r̂_τ`, so gradients
//! also flow back through the model's own earlier outputs.

use ndarray::{linalg::general_mat_mul, s, Array2, Array3, ArrayView2, Axis};

use super::model::{head_forward, layer_forward, step_batch, HiddenState, LayerStep, LstmModel};
use crate::error::{Error, Result};
use crate::state::{PoseState, StateSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutConfig {
    /// Teacher-forced prefix length.
    pub n_inputs: usize,
    /// Self-fed horizon.
    pub m_future: usize,
}

impl RolloutConfig {
    pub fn new(n_inputs: usize, m_future: usize) -> Result<Self> {
        if n_inputs < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_inputs must be at least 2 (the first residual needs two states), got {n_inputs}"
            )));
        }
        Ok(Self { n_inputs, m_future })
    }

    /// Ground-truth frames consumed per training window.
    pub fn window_len(&self) -> usize {
        self.n_inputs + self.m_future
    }

    /// Number of supervised predictions per window, `n + m − 1`.
    pub fn supervised_len(&self) -> usize {
        self.n_inputs + self.m_future - 1
    }
}

/// Where a step's input came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSource {
    GroundTruth,
    SelfFed,
}

/// Whether gradients flow through self-fed inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Feedback {
    #[default]
    Attached,
    Detached,
}

/// Ground-truth windows, `B × L × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub truth: Array3<f64>,
}

impl Batch {
    pub fn from_windows(windows: &[&[PoseState]]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (l, d) = (first.len(), first.first().map_or(0, PoseState::len));
        let mut truth = Array3::zeros((windows.len(), l, d));
        for (b, w) in windows.iter().enumerate() {
            if w.len() != l {
                return Err(Error::ShapeMismatch(format!("window {b} has {} frames, expected {l}", w.len())));
            }
            for (t, frame) in w.iter().enumerate() {
                if frame.len() != d {
                    return Err(Error::ShapeMismatch(format!("window {b}, frame {t}: width {}", frame.len())));
                }
                truth.slice_mut(s![b, t, ..]).assign(&ndarray::aview1(frame.as_slice()));
            }
        }
        Ok(Self { truth })
    }

    pub fn from_sequences(sequences: &[StateSequence]) -> Result<Self> {
        let windows: Vec<&[PoseState]> = sequences.iter().map(StateSequence::frames).collect();
        Self::from_windows(&windows)
    }

    pub fn len(&self) -> usize {
        self.truth.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct StepCache {
    /// Normalized model input, `B × 2D`.
    input: Array2<f64>,
    layers: Vec<LayerStep>,
}

/// Forward pass over a batch, with everything the backward pass needs.
pub struct Unrolled {
    /// `ŝ_{τ+1}` for every step, `B × (L−1) × D`.
    pub predictions: Array3<f64>,
    /// Emitted residuals `r̂_{τ+1}`, same shape.
    pub residuals: Array3<f64>,
    pub sources: Vec<InputSource>,
    pub loss: f64,
    caches: Vec<StepCache>,
}

/// Mean squared error over parameters and supervised steps.
pub fn loss(predicted: &StateSequence, target: &StateSequence) -> Result<f64> {
    if predicted.len() != target.len() || predicted.landmarks() != target.landmarks() {
        return Err(Error::ShapeMismatch(format!(
            "predicted {}x{} vs target {}x{}",
            predicted.len(),
            predicted.landmarks(),
            target.len(),
            target.landmarks()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("empty sequences".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in predicted.frames().iter().zip(target.frames()) {
        for (a, b) in p.as_slice().iter().zip(t.as_slice()) {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

pub fn forward(model: &LstmModel, batch: &Batch, cfg: &RolloutConfig) -> Result<Unrolled> {
    let (b, l, d) = batch.truth.dim();
    if d != model.state_dim() {
        return Err(Error::ShapeMismatch(format!("batch width {d}, model width {}", model.state_dim())));
    }
    if l != cfg.window_len() {
        return Err(Error::ShapeMismatch(format!("window of {l} frames, config needs {}", cfg.window_len())));
    }
    let steps = cfg.supervised_len();
    let mut predictions = Array3::zeros((b, steps, d));
    let mut residuals = Array3::zeros((b, steps, d));
    let mut sources = Vec::with_capacity(steps);
    let mut caches = Vec::with_capacity(steps);
    let mut hidden = HiddenState::zeros(&model.config, b);
    let mut raw = Array2::zeros((b, 2 * d));
    let mut sum_sq = 0.0;
    for tau in 0..steps {
        let source = if tau < cfg.n_inputs { InputSource::GroundTruth } else { InputSource::SelfFed };
        match source {
            InputSource::GroundTruth => {
                let cur = batch.truth.index_axis(Axis(1), tau);
                raw.slice_mut(s![.., ..d]).assign(&cur);
                if tau == 0 {
                    raw.slice_mut(s![.., d..]).fill(0.0);
                } else {
                    let prev = batch.truth.index_axis(Axis(1), tau - 1);
                    raw.slice_mut(s![.., d..]).assign(&(&cur - &prev));
                }
            }
            InputSource::SelfFed => {
                raw.slice_mut(s![.., ..d]).assign(&predictions.index_axis(Axis(1), tau - 1));
                raw.slice_mut(s![.., d..]).assign(&residuals.index_axis(Axis(1), tau - 1));
            }
        }
        let input = model.normalize_input(raw.view());
        let mut layers = Vec::with_capacity(model.layers.len());
        for (li, layer) in model.layers.iter().enumerate() {
            let x = if li == 0 {
                input.view()
            } else {
                layers.last().map(|s: &LayerStep| s.h.view()).expect("lower layer")
            };
            let out = layer_forward(layer, x, hidden.h[li].view(), hidden.c[li].view());
            layers.push(out);
        }
        let top = layers.last().expect("at least one layer");
        let r = head_forward(model, top.h.view());
        let pred = &raw.slice(s![.., ..d]) + &r;
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput { step: tau });
        }
        let target = batch.truth.index_axis(Axis(1), tau + 1);
        sum_sq += pred.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        predictions.index_axis_mut(Axis(1), tau).assign(&pred);
        residuals.index_axis_mut(Axis(1), tau).assign(&r);
        for (li, st) in layers.iter().enumerate() {
            hidden.h[li] = st.h.clone();
            hidden.c[li] = st.c.clone();
        }
        sources.push(source);
        caches.push(StepCache { input, layers });
    }
    let loss = sum_sq / (b * steps * d) as f64;
    Ok(Unrolled { predictions, residuals, sources, loss, caches })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardOptions {
    pub feedback: Feedback,
    /// Global L2 norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self { feedback: Feedback::Attached, grad_clip: Some(super::DEFAULT_GRAD_CLIP) }
    }
}

/// Loss, gradients (same shapes as the model) and the pre-clip gradient norm.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub grads: LstmModel,
    pub norm: f64,
}

fn accumulate(out: &mut Array2<f64>, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) {
    general_mat_mul(1.0, &a.t(), &b, 1.0, out);
}

/// Backpropagation through the whole unrolled window, including the paths
/// through self-fed states and residuals.
pub fn backward(model: &LstmModel, batch: &Batch, cfg: &RolloutConfig, opts: &BackwardOptions) -> Result<Gradients> {
    let un = forward(model, batch, cfg)?;
    let (b, _, d) = batch.truth.dim();
    let hd = model.config.hidden;
    let nl = model.layers.len();
    let steps = cfg.supervised_len();
    let mut grads = model.zeros_like();
    let norm = 2.0 / (b * steps * d) as f64;
    let zeros_h = Array2::<f64>::zeros((b, hd));
    let mut dh_next = vec![zeros_h.clone(); nl];
    let mut dc_next = vec![zeros_h.clone(); nl];
    let mut carry_ds = Array2::<f64>::zeros((b, d));
    let mut carry_dr = Array2::<f64>::zeros((b, d));
    let out_scale = &model.normalizer.output_scale;
    let in_scale = &model.normalizer.input_scale;

    for tau in (0..steps).rev() {
        let pred = un.predictions.index_axis(Axis(1), tau);
        let target = batch.truth.index_axis(Axis(1), tau + 1);
        let d_pred = (&pred - &target) * norm + &carry_ds;
        let d_res = &d_pred + &carry_dr;
        let mut ds_in = d_pred;

        let cache = &un.caches[tau];
        let d_head = &d_res * out_scale;
        let top_h = cache.layers[nl - 1].h.view();
        accumulate(&mut grads.head.weight, d_head.view(), top_h);
        grads.head.bias += &d_head.sum_axis(Axis(0));
        let mut dh_above = d_head.dot(&model.head.weight);

        for li in (0..nl).rev() {
            let layer = &model.layers[li];
            let st = &cache.layers[li];
            let (h_prev, c_prev) = if tau == 0 {
                (zeros_h.view(), zeros_h.view())
            } else {
                (un.caches[tau - 1].layers[li].h.view(), un.caches[tau - 1].layers[li].c.view())
            };
            let x = if li == 0 { cache.input.view() } else { cache.layers[li - 1].h.view() };
            let dh = &dh_above + &dh_next[li];
            let mut da = Array2::<f64>::zeros((b, 4 * hd));
            let mut dc_prev = Array2::<f64>::zeros((b, hd));
            for r in 0..b {
                for j in 0..hd {
                    let i = st.gates[[r, j]];
                    let f = st.gates[[r, hd + j]];
                    let g = st.gates[[r, 2 * hd + j]];
                    let o = st.gates[[r, 3 * hd + j]];
                    let tc = st.tanh_c[[r, j]];
                    let dhv = dh[[r, j]];
                    let dc = dhv * o * (1.0 - tc * tc) + dc_next[li][[r, j]];
                    da[[r, j]] = dc * g * i * (1.0 - i);
                    da[[r, hd + j]] = dc * c_prev[[r, j]] * f * (1.0 - f);
                    da[[r, 2 * hd + j]] = dc * i * (1.0 - g * g);
                    da[[r, 3 * hd + j]] = dhv * tc * o * (1.0 - o);
                    dc_prev[[r, j]] = dc * f;
                }
            }
            let gl = &mut grads.layers[li];
            accumulate(&mut gl.w_ih, da.view(), x);
            accumulate(&mut gl.w_hh, da.view(), h_prev);
            gl.bias += &da.sum_axis(Axis(0));
            dh_above = da.dot(&layer.w_ih);
            dh_next[li] = da.dot(&layer.w_hh);
            dc_next[li] = dc_prev;
        }

        // dh_above now holds the gradient w.r.t. the normalized input.
        let dx_raw = &dh_above / in_scale;
        ds_in += &dx_raw.slice(s![.., ..d]);
        let dr_in = dx_raw.slice(s![.., d..]).to_owned();
        if un.sources[tau] == InputSource::SelfFed && opts.feedback == Feedback::Attached {
            carry_ds = ds_in;
            carry_dr = dr_in;
        } else {
            carry_ds.fill(0.0);
            carry_dr.fill(0.0);
        }
    }

    let mut bad = None;
    let mut sq = 0.0;
    grads.for_each_param(|name, p| {
        for v in p {
            if !v.is_finite() && bad.is_none() {
                bad = Some(name.to_string());
            }
            sq += v * v;
        }
    });
    if let Some(param) = bad {
        return Err(Error::NonFiniteGradient { param });
    }
    let total = sq.sqrt();
    if let Some(clip) = opts.grad_clip {
        if total > clip {
            let k = clip / total;
            grads.for_each_param_mut(|_, p| p.iter_mut().for_each(|v| *v *= k));
        }
    }
    Ok(Gradients { loss: un.loss, grads, norm: total })
}

/// A free rollout with the per-step residuals and input sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Seed frames followed by `horizon` predicted frames.
    pub sequence: StateSequence,
    /// Residual emitted at every recurrent step.
    pub residuals: Vec<Vec<f64>>,
    pub sources: Vec<InputSource>,
}

/// Rolls several seed windows of equal length forward together.
pub fn rollout_batch(model: &LstmModel, seeds: &[&[PoseState]], horizon: usize) -> Result<Vec<Rollout>> {
    let first = seeds.first().ok_or_else(|| Error::InvalidArgument("no seed windows".into()))?;
    let n = first.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("rollout needs at least 2 seed frames, got {n}")));
    }
    let d = model.state_dim();
    let batch = Batch::from_windows(seeds)?;
    if batch.truth.dim().2 != d {
        return Err(Error::ShapeMismatch(format!(
            "seed states have {} landmarks, model expects {}",
            batch.truth.dim().2 / 5,
            model.config.landmarks
        )));
    }
    let b = seeds.len();
    let mut outs: Vec<Rollout> = seeds
        .iter()
        .map(|w| Rollout {
            sequence: StateSequence::new(w.to_vec()).expect("validated by batch"),
            residuals: Vec::new(),
            sources: Vec::new(),
        })
        .collect();
    if horizon == 0 {
        return Ok(outs);
    }
    let mut frames: Vec<Vec<PoseState>> = seeds.iter().map(|w| w.to_vec()).collect();
    let mut hidden = HiddenState::zeros(&model.config, b);
    let mut raw = Array2::zeros((b, 2 * d));
    let mut last_pred = Array2::<f64>::zeros((b, d));
    let mut last_res = Array2::<f64>::zeros((b, d));
    for tau in 0..n - 1 + horizon {
        let source = if tau < n { InputSource::GroundTruth } else { InputSource::SelfFed };
        match source {
            InputSource::GroundTruth => {
                let cur = batch.truth.index_axis(Axis(1), tau);
                raw.slice_mut(s![.., ..d]).assign(&cur);
                if tau == 0 {
                    raw.slice_mut(s![.., d..]).fill(0.0);
                } else {
                    raw.slice_mut(s![.., d..]).assign(&(&cur - &batch.truth.index_axis(Axis(1), tau - 1)));
                }
            }
            InputSource::SelfFed => {
                raw.slice_mut(s![.., ..d]).assign(&last_pred);
                raw.slice_mut(s![.., d..]).assign(&last_res);
            }
        }
        let (r, next) = step_batch(model, &hidden, raw.view())?;
        hidden = next;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput { step: tau });
        }
        last_pred = &raw.slice(s![.., ..d]) + &r;
        last_res = r;
        for (i, out) in outs.iter_mut().enumerate() {
            out.residuals.push(last_res.row(i).to_vec());
            out.sources.push(source);
            if tau >= n - 1 {
                frames[i].push(PoseState::from_vec(last_pred.row(i).to_vec())?);
            }
        }
    }
    for (out, f) in outs.iter_mut().zip(frames) {
        out.sequence = StateSequence::new(f)?;
    }
    Ok(outs)
}

/// Seeds the model with `seeds` (teacher forced) and then feeds back its own
/// predictions for `horizon` frames. The hidden state carries through.
pub fn rollout(model: &LstmModel, seeds: &[PoseState], horizon: usize) -> Result<StateSequence> {
    rollout_traced(model, seeds, horizon).map(|r| r.sequence)
}

pub fn rollout_traced(model: &LstmModel, seeds: &[PoseState], horizon: usize) -> Result<Rollout> {
    Ok(rollout_batch(model, &[seeds], horizon)?.remove(0))
}
