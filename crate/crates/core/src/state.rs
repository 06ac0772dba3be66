//! Landmark representation: activation maps, Gaussian moment fits, 2×2
//! Cholesky factors and the packed per-frame pose state.
//!
//! All geometry lives in normalized image coordinates: pixel `(row, col)` of
//! a `W×H` grid sits at `(-1 + (2·col + 1)/W, -1 + (2·row + 1)/H)`, x to the
//! right and y downward. States are therefore independent of render size.

use ndarray::{Array3, ArrayView2};

use crate::error::{Error, Result};

/// Row-major 2×2 matrix.
pub type Mat2 = [[f64; 2]; 2];

/// Default covariance floor added to every fitted Σ.
pub const DEFAULT_EPS: f64 = 1e-4;
/// Default softmax temperature.
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Number of packed parameters per landmark: `[mu_x, mu_y, l11, l21, l22]`.
pub const PARAMS_PER_LANDMARK: usize = 5;

const NORMALIZED_TOL: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-12;

/// Pixel-center coordinates of a `width × height` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCoords {
    pub width: usize,
    pub height: usize,
}

impl GridCoords {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    #[inline]
    pub fn x(&self, col: usize) -> f64 {
        ((2 * col + 1) as f64 - self.width as f64) / self.width as f64
    }

    #[inline]
    pub fn y(&self, row: usize) -> f64 {
        ((2 * row + 1) as f64 - self.height as f64) / self.height as f64
    }

    #[inline]
    pub fn point(&self, row: usize, col: usize) -> [f64; 2] {
        [self.x(col), self.y(row)]
    }

    /// Continuous pixel position (col, row) of a normalized point; pixel
    /// centers land on integers.
    pub fn to_pixel(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] + 1.0) * self.width as f64 / 2.0 - 0.5, (p[1] + 1.0) * self.height as f64 / 2.0 - 0.5]
    }

    /// `(row, col)` of the pixel whose center is nearest to `p`, clamped to
    /// the grid.
    pub fn nearest_pixel(&self, p: [f64; 2]) -> (usize, usize) {
        let [c, r] = self.to_pixel(p);
        let clamp = |v: f64, n: usize| v.round().clamp(0.0, (n - 1) as f64) as usize;
        (clamp(r, self.height), clamp(c, self.width))
    }
}

/// `K` part grids of `H×W` scores, indexed `[part, row, col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    data: Array3<f64>,
    normalized: bool,
}

impl ActivationMap {
    /// Wraps raw encoder scores. Values are not validated here;
    /// [`softmax_normalize`] rejects non-finite cells.
    pub fn raw(data: Array3<f64>) -> Self {
        Self { data, normalized: false }
    }

    /// Wraps per-part probability grids: every cell nonnegative and every
    /// part summing to one.
    pub fn from_probabilities(data: Array3<f64>) -> Result<Self> {
        for (k, grid) in data.outer_iter().enumerate() {
            let mut sum = 0.0;
            for ((row, col), &v) in grid.indexed_iter() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteCell { part: k, row, col });
                }
                if v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "negative probability {v} at part {k}, row {row}, col {col}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > NORMALIZED_TOL {
                return Err(Error::NotNormalized);
            }
        }
        Ok(Self { data, normalized: true })
    }

    /// Renormalizes each part by its sum. Cells must be nonnegative and every
    /// part must carry positive mass.
    pub fn normalize_by_sum(mut data: Array3<f64>) -> Result<Self> {
        for (k, mut grid) in data.outer_iter_mut().enumerate() {
            let sum: f64 = grid.sum();
            if !(sum > 0.0 && sum.is_finite()) {
                return Err(Error::InvalidArgument(format!("part {k} has no mass")));
            }
            grid.mapv_inplace(|v| v / sum);
        }
        Self::from_probabilities(data)
    }

    pub fn parts(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn grid(&self) -> GridCoords {
        GridCoords::new(self.width(), self.height())
    }

    pub fn part(&self, k: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(ndarray::Axis(0), k)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
}

/// Per-part softmax with temperature, computed with max subtraction.
pub fn softmax_normalize(raw: &ActivationMap, temperature: f64) -> Result<ActivationMap> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let mut data = raw.data.clone();
    for (k, mut grid) in data.outer_iter_mut().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for ((row, col), &v) in grid.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteCell { part: k, row, col });
            }
            max = max.max(v / temperature);
        }
        grid.mapv_inplace(|v| (v / temperature - max).exp());
        let sum = grid.sum();
        grid.mapv_inplace(|v| v / sum);
    }
    Ok(ActivationMap { data, normalized: true })
}

/// A landmark as a 2D Gaussian in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    pub mu: [f64; 2],
    pub sigma: Mat2,
}

impl Gaussian2 {
    /// Checks symmetry and positive definiteness.
    pub fn new(mu: [f64; 2], sigma: Mat2) -> Result<Self> {
        if !(mu.iter().chain(sigma.iter().flatten()).all(|v| v.is_finite())) {
            return Err(Error::NonFinite("gaussian parameters".into()));
        }
        cholesky_2x2(&sigma)?;
        Ok(Self { mu, sigma })
    }

    pub fn factor(&self) -> CholFactor {
        // Construction guarantees the factorization succeeds.
        cholesky_2x2(&self.sigma).expect("Gaussian2 holds a PD covariance")
    }
}

/// Probability-weighted mean and (unregularized) covariance of one part.
pub fn moments(prob: &ActivationMap, part: usize) -> Result<([f64; 2], Mat2)> {
    if !prob.normalized {
        return Err(Error::NotNormalized);
    }
    if part >= prob.parts() {
        return Err(Error::InvalidArgument(format!("part {part} out of range for {} parts", prob.parts())));
    }
    let grid = prob.grid();
    let p = prob.part(part);
    let (mut mx, mut my) = (0.0, 0.0);
    for ((row, col), &w) in p.indexed_iter() {
        mx += w * grid.x(col);
        my += w * grid.y(row);
    }
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for ((row, col), &w) in p.indexed_iter() {
        let dx = grid.x(col) - mx;
        let dy = grid.y(row) - my;
        sxx += w * dx * dx;
        sxy += w * dx * dy;
        syy += w * dy * dy;
    }
    Ok(([mx, my], [[sxx, sxy], [sxy, syy]]))
}

/// Moment-matched Gaussian of one normalized part map, with `eps·I` added to
/// the covariance.
pub fn fit_gaussian(prob: &ActivationMap, part: usize, eps: f64) -> Result<Gaussian2> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {eps}")));
    }
    let (mu, mut sigma) = moments(prob, part)?;
    sigma[0][0] += eps;
    sigma[1][1] += eps;
    if cholesky_2x2(&sigma).is_err() {
        return Err(Error::DegenerateCovariance { part, det: det2(&sigma) });
    }
    Ok(Gaussian2 { mu, sigma })
}

/// Fits every part of a normalized map.
pub fn fit_all(prob: &ActivationMap, eps: f64) -> Result<Vec<Gaussian2>> {
    (0..prob.parts()).map(|k| fit_gaussian(prob, k, eps)).collect()
}

#[inline]
pub fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Lower-triangular factor `[[l11, 0], [l21, l22]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholFactor {
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

impl CholFactor {
    pub fn to_array(self) -> [f64; 3] {
        [self.l11, self.l21, self.l22]
    }

    pub fn covariance(self) -> Mat2 {
        lower_times_transpose([self.l11, self.l21, self.l22])
    }
}

/// Closed-form Cholesky factorization of a symmetric 2×2 matrix.
pub fn cholesky_2x2(sigma: &Mat2) -> Result<CholFactor> {
    let scale = sigma.iter().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
    if (sigma[0][1] - sigma[1][0]).abs() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidArgument(format!("covariance not symmetric: {} vs {}", sigma[0][1], sigma[1][0])));
    }
    let a = sigma[0][0];
    if a.is_nan() || a <= 0.0 {
        return Err(Error::NotPositiveDefinite { pivot: 0, value: a });
    }
    let l11 = a.sqrt();
    let l21 = sigma[1][0] / l11;
    let schur = sigma[1][1] - l21 * l21;
    if schur.is_nan() || schur <= 0.0 {
        return Err(Error::NotPositiveDefinite { pivot: 1, value: schur });
    }
    Ok(CholFactor { l11, l21, l22: schur.sqrt() })
}

fn lower_times_transpose([a, b, c]: [f64; 3]) -> Mat2 {
    let off = a * b;
    [[a * a, off], [off, b * b + c * c]]
}

/// `L·Lᵀ` for `L = [[l11, 0], [l21, l22]]`.
///
/// With `allow_invalid` the diagonal may take any sign (raw model output);
/// the result is positive semidefinite for every finite input.
pub fn factor_to_cov(l: [f64; 3], allow_invalid: bool) -> Result<Mat2> {
    if !l.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("cholesky factor {l:?}")));
    }
    if !allow_invalid && !(l[0] > 0.0 && l[2] > 0.0) {
        return Err(Error::InvalidArgument(format!("cholesky factor needs a positive diagonal, got {l:?}")));
    }
    Ok(lower_times_transpose(l))
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn sym_eigenvalues(m: &Mat2) -> [f64; 2] {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half_diff = 0.5 * (m[0][0] - m[1][1]);
    let r = half_diff.hypot(m[0][1]);
    [mean - r, mean + r]
}

/// Packed state of all landmarks for one frame:
/// `[mu_x, mu_y, l11, l21, l22]` repeated `K` times.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseState {
    params: Vec<f64>,
}

impl PoseState {
    /// Wraps a packed vector. Requires a nonzero multiple of five finite
    /// values; factor diagonals are not checked (see [`PoseState::validate`]).
    pub fn from_vec(params: Vec<f64>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::EmptyState);
        }
        if !params.len().is_multiple_of(PARAMS_PER_LANDMARK) {
            return Err(Error::ShapeMismatch(format!(
                "packed state length {} is not a multiple of {PARAMS_PER_LANDMARK}",
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state parameter {i}")));
        }
        Ok(Self { params })
    }

    pub fn landmarks(&self) -> usize {
        self.params.len() / PARAMS_PER_LANDMARK
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.params
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.params
    }

    pub fn landmark(&self, k: usize) -> [f64; 5] {
        let s = &self.params[k * 5..k * 5 + 5];
        [s[0], s[1], s[2], s[3], s[4]]
    }

    pub fn mu(&self, k: usize) -> [f64; 2] {
        [self.params[k * 5], self.params[k * 5 + 1]]
    }

    pub fn factor(&self, k: usize) -> [f64; 3] {
        [self.params[k * 5 + 2], self.params[k * 5 + 3], self.params[k * 5 + 4]]
    }

    /// Landmarks whose factor diagonal is not strictly positive.
    pub fn invalid_landmarks(&self) -> Vec<usize> {
        (0..self.landmarks())
            .filter(|&k| {
                let [l11, _, l22] = self.factor(k);
                !(l11 > 0.0 && l22 > 0.0)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self.invalid_landmarks().first() {
            None => Ok(()),
            Some(&k) => {
                let [l11, _, l22] = self.factor(k);
                let (pivot, value) = if l11 > 0.0 { (1, l22) } else { (0, l11) };
                Err(Error::NotPositiveDefinite { pivot, value })
            }
        }
    }

    /// Covariance of landmark `k` through `L·Lᵀ`, accepting any factor signs.
    pub fn covariance(&self, k: usize) -> Mat2 {
        lower_times_transpose(self.factor(k))
    }
}

/// Packs fitted landmarks into a state vector, preserving order.
pub fn pack_state(gaussians: &[Gaussian2]) -> Result<PoseState> {
    if gaussians.is_empty() {
        return Err(Error::EmptyState);
    }
    let mut params = Vec::with_capacity(gaussians.len() * PARAMS_PER_LANDMARK);
    for g in gaussians {
        let f = cholesky_2x2(&g.sigma)?;
        params.extend_from_slice(&[g.mu[0], g.mu[1], f.l11, f.l21, f.l22]);
    }
    PoseState::from_vec(params)
}

/// Inverse of [`pack_state`]; fails if any landmark has an invalid factor.
pub fn unpack_state(state: &PoseState) -> Result<Vec<Gaussian2>> {
    state.validate()?;
    Ok((0..state.landmarks()).map(|k| Gaussian2 { mu: state.mu(k), sigma: state.covariance(k) }).collect())
}

/// Time-ordered pose states sharing one landmark count.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    frames: Vec<PoseState>,
    /// Frame spacing in frames.
    pub dt: u32,
}

impl StateSequence {
    pub fn new(frames: Vec<PoseState>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let k = first.landmarks();
            if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.landmarks() != k) {
                return Err(Error::ShapeMismatch(format!("frame {t} has {} landmarks, expected {k}", f.landmarks())));
            }
        }
        Ok(Self { frames, dt: 1 })
    }

    pub fn frames(&self) -> &[PoseState] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<PoseState> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Landmark count, zero for an empty sequence.
    pub fn landmarks(&self) -> usize {
        self.frames.first().map_or(0, PoseState::landmarks)
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self { frames: self.frames[start..end].to_vec(), dt: self.dt }
    }
}
