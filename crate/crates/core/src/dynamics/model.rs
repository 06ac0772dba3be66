//! Stacked LSTM with a linear head, and the feature normalizer around it.

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::state::PARAMS_PER_LANDMARK;

pub const DEFAULT_LAYERS: usize = 3;
pub const DEFAULT_HIDDEN: usize = 256;
pub const FORGET_BIAS: f64 = 1.0;

/// Lower bound on normalizer scales.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub landmarks: usize,
    pub layers: usize,
    pub hidden: usize,
}

impl ModelConfig {
    pub fn new(landmarks: usize) -> Self {
        Self { landmarks, layers: DEFAULT_LAYERS, hidden: DEFAULT_HIDDEN }
    }

    /// Packed state width `D = 5K`.
    pub fn state_dim(&self) -> usize {
        self.landmarks * PARAMS_PER_LANDMARK
    }
}

/// One LSTM layer. Gate blocks are stacked `[input, forget, cell, output]`
/// along the first axis of the weights and the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `4H × in`
    pub w_ih: Array2<f64>,
    /// `4H × H`
    pub w_hh: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `D × H`
    pub weight: Array2<f64>,
    /// `D`
    pub bias: Array1<f64>,
}

/// Affine input standardization and output scaling.
///
/// The model sees `(raw − shift) / scale` for each of its `2D` inputs and
/// emits residuals as `head(h) ⊙ output_scale`. Residual inputs are never
/// shifted, so a zero residual always maps to a zero feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub input_shift: Array1<f64>,
    pub input_scale: Array1<f64>,
    pub output_scale: Array1<f64>,
}

impl Normalizer {
    pub fn identity(d: usize) -> Self {
        Self { input_shift: Array1::zeros(2 * d), input_scale: Array1::ones(2 * d), output_scale: Array1::ones(d) }
    }

    /// Per-feature statistics over every frame and frame-to-frame residual.
    pub fn fit(sequences: &[crate::state::StateSequence]) -> Result<Self> {
        let d = sequences.first().map(|s| s.landmarks() * PARAMS_PER_LANDMARK).unwrap_or(0);
        if d == 0 {
            return Err(Error::InvalidArgument("cannot fit a normalizer on no data".into()));
        }
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        let mut res_sq = vec![0.0; d];
        let (mut n_state, mut n_res) = (0usize, 0usize);
        for seq in sequences {
            if seq.landmarks() * PARAMS_PER_LANDMARK != d {
                return Err(Error::ShapeMismatch("sequences disagree on landmark count".into()));
            }
            for (t, frame) in seq.frames().iter().enumerate() {
                for (j, &v) in frame.as_slice().iter().enumerate() {
                    sum[j] += v;
                    sum_sq[j] += v * v;
                }
                n_state += 1;
                if t > 0 {
                    let prev = seq.frames()[t - 1].as_slice();
                    for (j, &v) in frame.as_slice().iter().enumerate() {
                        let r = v - prev[j];
                        res_sq[j] += r * r;
                    }
                    n_res += 1;
                }
            }
        }
        let mut out = Self::identity(d);
        for j in 0..d {
            let mean = sum[j] / n_state as f64;
            let var = (sum_sq[j] / n_state as f64 - mean * mean).max(0.0);
            out.input_shift[j] = mean;
            out.input_scale[j] = var.sqrt().max(SCALE_FLOOR);
            let rms = if n_res > 0 { (res_sq[j] / n_res as f64).sqrt() } else { 0.0 };
            out.input_scale[d + j] = rms.max(SCALE_FLOOR);
            out.output_scale[j] = rms.max(SCALE_FLOOR);
        }
        Ok(out)
    }
}

/// Learned parameters plus the fixed normalizer. A zeroed copy of the
/// parameters doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub config: ModelConfig,
    pub layers: Vec<LstmLayer>,
    pub head: Linear,
    pub normalizer: Normalizer,
}

/// Per-layer `(h, c)`, each `B × H`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl HiddenState {
    pub fn zeros(config: &ModelConfig, batch: usize) -> Self {
        let z = Array2::zeros((batch, config.hidden));
        Self { h: vec![z.clone(); config.layers], c: vec![z; config.layers] }
    }
}

fn orthogonal(n: usize, rng: &mut rng::Rng) -> Array2<f64> {
    // Modified Gram–Schmidt on the rows of a Gaussian matrix.
    let mut m = Array2::from_shape_fn((n, n), |_| StandardNormal.sample(rng));
    for i in 0..n {
        for j in 0..i {
            let (done, mut rest) = m.view_mut().split_at(Axis(0), i);
            let mut row = rest.row_mut(0);
            let prev = done.row(j);
            let dot: f64 = row.dot(&prev);
            row.scaled_add(-dot, &prev);
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        m.row_mut(i).mapv_inplace(|v| v / norm);
    }
    m
}

impl LstmModel {
    /// Seeded initialization: uniform `±1/√fan_in` input and head weights,
    /// orthogonal recurrent blocks, zero biases except the forget gate at 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.landmarks == 0 || config.layers == 0 || config.hidden == 0 {
            return Err(Error::InvalidArgument(format!("degenerate model config {config:?}")));
        }
        let mut rng = rng::stream(seed, "dynamics/init");
        let d = config.state_dim();
        let h = config.hidden;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { 2 * d } else { h };
            let bound = 1.0 / (input as f64).sqrt();
            let w_ih = Array2::from_shape_fn((4 * h, input), |_| rng.gen_range(-bound..=bound));
            let mut w_hh = Array2::zeros((4 * h, h));
            for g in 0..4 {
                w_hh.slice_mut(s![g * h..(g + 1) * h, ..]).assign(&orthogonal(h, &mut rng));
            }
            let mut bias = Array1::zeros(4 * h);
            bias.slice_mut(s![h..2 * h]).fill(FORGET_BIAS);
            layers.push(LstmLayer { w_ih, w_hh, bias });
        }
        let bound = 1.0 / (h as f64).sqrt();
        let head =
            Linear { weight: Array2::from_shape_fn((d, h), |_| rng.gen_range(-bound..=bound)), bias: Array1::zeros(d) };
        Ok(Self { config, layers, head, normalizer: Normalizer::identity(d) })
    }

    pub fn with_normalizer(mut self, normalizer: Normalizer) -> Result<Self> {
        let d = self.config.state_dim();
        if normalizer.input_shift.len() != 2 * d
            || normalizer.input_scale.len() != 2 * d
            || normalizer.output_scale.len() != d
        {
            return Err(Error::ShapeMismatch("normalizer does not match model width".into()));
        }
        self.normalizer = normalizer;
        Ok(self)
    }

    /// Same shapes, every learned parameter zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_param_mut(|_, p| p.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim()
    }

    /// `Σ_layers 4·(in + H + 1)·H + D·H + D`.
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(|_, p| n += p.len());
        n
    }

    /// Visits learned parameters in checkpoint order.
    pub fn for_each_param(&self, mut f: impl FnMut(&str, &[f64])) {
        for (l, layer) in self.layers.iter().enumerate() {
            f(&format!("layers.{l}.w_ih"), layer.w_ih.as_slice().expect("standard layout"));
            f(&format!("layers.{l}.w_hh"), layer.w_hh.as_slice().expect("standard layout"));
            f(&format!("layers.{l}.bias"), layer.bias.as_slice().expect("standard layout"));
        }
        f("head.weight", self.head.weight.as_slice().expect("standard layout"));
        f("head.bias", self.head.bias.as_slice().expect("standard layout"));
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            f(&format!("layers.{l}.w_ih"), layer.w_ih.as_slice_mut().expect("standard layout"));
            f(&format!("layers.{l}.w_hh"), layer.w_hh.as_slice_mut().expect("standard layout"));
            f(&format!("layers.{l}.bias"), layer.bias.as_slice_mut().expect("standard layout"));
        }
        f("head.weight", self.head.weight.as_slice_mut().expect("standard layout"));
        f("head.bias", self.head.bias.as_slice_mut().expect("standard layout"));
    }

    /// Flattened learned parameters in checkpoint order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        self.for_each_param(|_, p| out.extend_from_slice(p));
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.parameter_count()
            )));
        }
        let mut offset = 0;
        self.for_each_param_mut(|_, p| {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        });
        Ok(())
    }

    /// Maps raw `[state, residual]` rows (`B × 2D`) to model features.
    pub fn normalize_input(&self, raw: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = &self.normalizer;
        let mut x = raw.to_owned();
        Zip::from(x.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row).and(&n.input_shift).and(&n.input_scale).for_each(|v, &s, &k| *v = (*v - s) / k);
        });
        x
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one layer step, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerStep {
    /// Activated gates `[i, f, g, o]`, `B × 4H`.
    pub gates: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub h: Array2<f64>,
}

/// One layer forward: `gates = x·W_ihᵀ + h·W_hhᵀ + b`, then the usual cell
/// update `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub(crate) fn layer_forward(
    layer: &LstmLayer,
    x: ArrayView2<'_, f64>,
    h_prev: ArrayView2<'_, f64>,
    c_prev: ArrayView2<'_, f64>,
) -> LayerStep {
    let b = x.nrows();
    let hdim = layer.w_hh.ncols();
    let mut gates = Array2::zeros((b, 4 * hdim));
    gates.rows_mut().into_iter().for_each(|mut r| r.assign(&layer.bias));
    general_mat_mul(1.0, &x, &layer.w_ih.t(), 1.0, &mut gates);
    general_mat_mul(1.0, &h_prev, &layer.w_hh.t(), 1.0, &mut gates);
    let mut c = Array2::zeros((b, hdim));
    let mut tanh_c = Array2::zeros((b, hdim));
    let mut h = Array2::zeros((b, hdim));
    for r in 0..b {
        let mut g = gates.row_mut(r);
        let g = g.as_slice_mut().expect("row-major");
        for j in 0..hdim {
            let i = sigmoid(g[j]);
            let f = sigmoid(g[hdim + j]);
            let cand = g[2 * hdim + j].tanh();
            let o = sigmoid(g[3 * hdim + j]);
            g[j] = i;
            g[hdim + j] = f;
            g[2 * hdim + j] = cand;
            g[3 * hdim + j] = o;
            let cv = f * c_prev[[r, j]] + i * cand;
            let tc = cv.tanh();
            c[[r, j]] = cv;
            tanh_c[[r, j]] = tc;
            h[[r, j]] = o * tc;
        }
    }
    LayerStep { gates, c, tanh_c, h }
}

/// Head output in residual units for top-layer activations `h` (`B × H`).
pub(crate) fn head_forward(model: &LstmModel, h: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut y = Array2::zeros((h.nrows(), model.state_dim()));
    y.rows_mut().into_iter().for_each(|mut r| r.assign(&model.head.bias));
    general_mat_mul(1.0, &h, &model.head.weight.t(), 1.0, &mut y);
    let scale = &model.normalizer.output_scale;
    y.rows_mut().into_iter().for_each(|mut r| r *= scale);
    y
}

/// One recurrent step on a batch of raw inputs (`B × 2D`), returning the
/// emitted residuals (`B × D`) and the next hidden state.
pub fn step_batch(
    model: &LstmModel,
    hidden: &HiddenState,
    raw_input: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, HiddenState)> {
    let d = model.state_dim();
    if raw_input.ncols() != 2 * d {
        return Err(Error::ShapeMismatch(format!("input width {} but model expects {}", raw_input.ncols(), 2 * d)));
    }
    let b = raw_input.nrows();
    if hidden.h.len() != model.config.layers
        || hidden.h.iter().chain(&hidden.c).any(|a| a.dim() != (b, model.config.hidden))
    {
        return Err(Error::ShapeMismatch("hidden state does not match model and batch".into()));
    }
    let mut x = model.normalize_input(raw_input);
    let mut next = HiddenState { h: Vec::with_capacity(model.layers.len()), c: Vec::with_capacity(model.layers.len()) };
    for (l, layer) in model.layers.iter().enumerate() {
        let out = layer_forward(layer, x.view(), hidden.h[l].view(), hidden.c[l].view());
        x = out.h.clone();
        next.h.push(out.h);
        next.c.push(out.c);
    }
    Ok((head_forward(model, x.view()), next))
}

/// Single-sample step: `input` is `[state, residual]` of length `2D`.
pub fn lstm_step(model: &LstmModel, hidden: &HiddenState, input: &[f64]) -> Result<(Vec<f64>, HiddenState)> {
    let row = ArrayView2::from_shape((1, input.len()), input).expect("one row");
    let (out, next) = step_batch(model, hidden, row)?;
    Ok((out.row(0).to_vec(), next))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_formula() {
        let cfg = ModelConfig::new(4);
        let m = LstmModel::new(cfg, 0).unwrap();
        let d = 20;
        let h = 256;
        let expected = 4 * (2 * d + h + 1) * h + 2 * 4 * (h + h + 1) * h + d * h + d;
        assert_eq!(m.parameter_count(), expected);
    }

    #[test]
    fn recurrent_blocks_are_orthogonal() {
        let m = LstmModel::new(ModelConfig { landmarks: 1, layers: 1, hidden: 16 }, 3).unwrap();
        let block = m.layers[0].w_hh.slice(s![16..32, ..]).to_owned();
        let gram = block.dot(&block.t());
        for ((i, j), v) in gram.indexed_iter() {
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-12);
        }
        assert!(m.layers[0].bias.slice(s![16..32]).iter().all(|&b| b == FORGET_BIAS));
        assert!(m.layers[0].bias.slice(s![..16]).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let m = LstmModel::new(ModelConfig { landmarks: 2, layers: 3, hidden: 8 }, 1).unwrap().zeros_like();
        let hidden = HiddenState::zeros(&m.config, 1);
        let (out, _) = lstm_step(&m, &hidden, &[0.7; 20]).unwrap();
        assert_eq!(out, vec![0.0; 10]);
    }

    #[test]
    fn step_is_deterministic() {
        let cfg = ModelConfig { landmarks: 2, layers: 3, hidden: 8 };
        let input: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = LstmModel::new(cfg, 11).unwrap();
        let b = LstmModel::new(cfg, 11).unwrap();
        let h = HiddenState::zeros(&cfg, 1);
        let (ya, ha) = lstm_step(&a, &h, &input).unwrap();
        let (yb, hb) = lstm_step(&b, &h, &input).unwrap();
        assert_eq!(ya, yb);
        assert_eq!(ha, hb);
        assert_ne!(LstmModel::new(cfg, 12).unwrap(), a);
    }

    #[test]
    fn shape_checks() {
        let cfg = ModelConfig { landmarks: 1, layers: 2, hidden: 4 };
        let m = LstmModel::new(cfg, 0).unwrap();
        let h = HiddenState::zeros(&cfg, 1);
        assert!(lstm_step(&m, &h, &[0.0; 9]).is_err());
        let wrong = HiddenState::zeros(&ModelConfig { hidden: 5, ..cfg }, 1);
        assert!(lstm_step(&m, &wrong, &[0.0; 10]).is_err());
        assert!(m.clone().with_normalizer(Normalizer::identity(6)).is_err());
    }
}
