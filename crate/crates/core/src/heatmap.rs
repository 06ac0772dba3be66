//! Rendering landmarks back to dense part maps and pooling appearance
//! features under the part distributions.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::state::{
    det2, fit_gaussian, pack_state, softmax_normalize, ActivationMap, GridCoords, Mat2, PoseState, DEFAULT_EPS,
};

/// Below this determinant a covariance is treated as singular.
pub const DET_FLOOR: f64 = 1e-14;

/// Softmax temperature used to turn a rendered heatmap back into a
/// distribution before refitting. The inverse-quadratic profile has tails
/// that decay like `1/d²`; dividing by the plain sum lets those tails pull the
/// mean toward the frame center by up to a quarter of the frame.
pub const ROUNDTRIP_TEMPERATURE: f64 = 0.05;

/// Rendered part maps, values in `(0, 1]`, indexed `[part, row, col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    data: Array3<f64>,
}

impl Heatmap {
    pub fn parts(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn part(&self, k: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), k)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// Treats the rendered values as raw scores.
    pub fn to_activation(&self) -> ActivationMap {
        ActivationMap::raw(self.data.clone())
    }
}

fn inverse(sigma: &Mat2, landmark: usize) -> Result<Mat2> {
    let det = det2(sigma);
    if det.is_nan() || det < DET_FLOOR {
        return Err(Error::SingularCovariance { landmark, det });
    }
    Ok([[sigma[1][1] / det, -sigma[0][1] / det], [-sigma[1][0] / det, sigma[0][0] / det]])
}

/// `1 / (1 + dᵀ Σ⁻¹ d)` for offset `d = l − μ`.
#[inline]
pub fn inverse_quadratic(inv: &Mat2, d: [f64; 2]) -> f64 {
    let q = inv[0][0] * d[0] * d[0] + (inv[0][1] + inv[1][0]) * d[0] * d[1] + inv[1][1] * d[1] * d[1];
    1.0 / (1.0 + q)
}

fn render_with(state: &PoseState, width: usize, height: usize, floor: Option<f64>) -> Result<Heatmap> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("render size must be positive".into()));
    }
    let grid = GridCoords::new(width, height);
    let mut data = Array3::zeros((state.landmarks(), height, width));
    for (k, mut part) in data.outer_iter_mut().enumerate() {
        let mu = state.mu(k);
        let mut sigma = state.covariance(k);
        if let Some(eps) = floor {
            if det2(&sigma) < DET_FLOOR {
                sigma[0][0] += eps;
                sigma[1][1] += eps;
            }
        }
        let inv = inverse(&sigma, k)?;
        for ((row, col), v) in part.indexed_iter_mut() {
            let [x, y] = grid.point(row, col);
            *v = inverse_quadratic(&inv, [x - mu[0], y - mu[1]]);
        }
    }
    Ok(Heatmap { data })
}

/// Renders every landmark of `state` on a `width × height` grid.
pub fn render_heatmap(state: &PoseState, width: usize, height: usize) -> Result<Heatmap> {
    render_with(state, width, height, None)
}

/// Like [`render_heatmap`], but a singular covariance (e.g. from an
/// extrapolated factor with a zero diagonal) gets `eps·I` added first.
pub fn render_heatmap_regularized(state: &PoseState, width: usize, height: usize, eps: f64) -> Result<Heatmap> {
    render_with(state, width, height, Some(eps))
}

/// `C` feature grids of `H×W`, indexed `[channel, row, col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array3<f64>,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if let Some(((c, row, col), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature channel {c}, row {row}, col {col}")));
        }
        Ok(Self { data })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }
}

/// `K × C` appearance vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceCode {
    pub vectors: Array2<f64>,
}

/// Pools features under each part distribution:
/// `code[k, c] = Σ_{i,j} prob[k, i, j] · features[c, i, j]`.
pub fn pool_appearance(prob: &ActivationMap, features: &FeatureMap) -> Result<AppearanceCode> {
    if !prob.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let (k, h, w) = prob.data().dim();
    let (c, fh, fw) = features.data.dim();
    if (h, w) != (fh, fw) {
        return Err(Error::ShapeMismatch(format!("activation grid {h}x{w} vs feature grid {fh}x{fw}")));
    }
    let p = prob.data().view().into_shape_with_order((k, h * w)).expect("contiguous");
    let f = features.data.view().into_shape_with_order((c, h * w)).expect("contiguous");
    Ok(AppearanceCode { vectors: p.dot(&f.t()) })
}

/// Renders `state`, turns each part into a distribution with a
/// low-temperature softmax and refits the Gaussians.
///
/// Only the means are expected to come back; the rendered profile is not a
/// Gaussian density so the refit covariances differ from the source.
pub fn fit_render_roundtrip(state: &PoseState, width: usize, height: usize) -> Result<PoseState> {
    let heat = render_heatmap(state, width, height)?;
    let prob = softmax_normalize(&heat.to_activation(), ROUNDTRIP_TEMPERATURE)?;
    let fitted = (0..prob.parts()).map(|k| fit_gaussian(&prob, k, DEFAULT_EPS)).collect::<Result<Vec<_>>>()?;
    pack_state(&fitted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(mu: [f64; 2], var: f64) -> PoseState {
        PoseState::from_vec(vec![mu[0], mu[1], var.sqrt(), 0.0, var.sqrt()]).unwrap()
    }

    #[test]
    fn point_values() {
        let inv = [[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(inverse_quadratic(&inv, [0.0, 0.0]), 1.0);
        assert_eq!(inverse_quadratic(&inv, [0.5, 0.0]), 0.8);
        assert!((inverse_quadratic(&inv, [0.6, 0.8]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn peak_sits_on_mean_pixel() {
        let grid = GridCoords::new(32, 32);
        let mu = grid.point(10, 20);
        let h = render_heatmap(&iso(mu, 0.01), 32, 32).unwrap();
        assert_eq!(h.part(0)[[10, 20]], 1.0);
        assert!(h.data().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn singular_covariance_is_reported() {
        let s = PoseState::from_vec(vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        match render_heatmap(&s, 8, 8) {
            Err(Error::SingularCovariance { landmark, .. }) => assert_eq!(landmark, 1),
            other => panic!("expected singular covariance, got {other:?}"),
        }
        let h = render_heatmap_regularized(&s, 8, 8, 1e-4).unwrap();
        assert_eq!(h.parts(), 2);
    }

    #[test]
    fn pooling_constant_and_delta() {
        let prob = softmax_normalize(
            &ActivationMap::raw(Array3::from_shape_fn((2, 4, 5), |(k, r, c)| (k + r * c) as f64 * 0.3)),
            1.0,
        )
        .unwrap();
        let features = FeatureMap::new(Array3::from_elem((3, 4, 5), 2.5)).unwrap();
        let code = pool_appearance(&prob, &features).unwrap();
        assert!(code.vectors.iter().all(|&v| (v - 2.5).abs() < 1e-14));

        let mut delta = Array3::zeros((1, 4, 5));
        delta[[0, 2, 3]] = 1.0;
        let prob = ActivationMap::from_probabilities(delta).unwrap();
        let features =
            FeatureMap::new(Array3::from_shape_fn((3, 4, 5), |(c, r, col)| (c * 100 + r * 10 + col) as f64)).unwrap();
        let code = pool_appearance(&prob, &features).unwrap();
        assert_eq!(code.vectors.row(0).to_vec(), vec![23.0, 123.0, 223.0]);

        let wrong = FeatureMap::new(Array3::zeros((3, 5, 4))).unwrap();
        assert!(matches!(pool_appearance(&prob, &wrong), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn roundtrip_centered_and_border() {
        let back = fit_render_roundtrip(&iso([0.0, 0.0], 0.01), 128, 128).unwrap();
        assert!(back.mu(0)[0].abs() < 1e-9 && back.mu(0)[1].abs() < 1e-9);

        let back = fit_render_roundtrip(&iso([0.9, 0.9], 0.01), 128, 128).unwrap();
        let err = (back.mu(0)[0] - 0.9).hypot(back.mu(0)[1] - 0.9);
        assert!(err < 0.1, "border refit error {err}");
    }
}
