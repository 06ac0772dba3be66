//! Frame and keypoint evaluation: PSNR, SSIM, PCK and the intercept-free
//! landmark→keypoint regressor.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;

/// PSNR reported for identical images in CSV output.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub const REGRESSION_RIDGE: f64 = 1e-8;
const RANK_TOL: f64 = 1e-9;

const RANGE_TOL: f64 = 1e-9;

/// Single-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array2<f64>,
}

impl Image {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if let Some(((r, c), v)) =
            data.indexed_iter().find(|(_, v)| !(v.is_finite() && **v >= -RANGE_TOL && **v <= 1.0 + RANGE_TOL))
        {
            return Err(Error::InvalidArgument(format!("pixel ({r}, {c}) = {v} outside [0, 1]")));
        }
        Ok(Self { data })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }
}

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("images {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.data.len() as f64;
    Ok(a.data.iter().zip(b.data.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10·log10(1 / MSE)` with peak 1; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering.
fn filter_valid(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = taps.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = Array2::<f64>::zeros((h, ow));
    for r in 0..h {
        for c in 0..ow {
            tmp[[r, c]] = taps.iter().enumerate().map(|(i, t)| t * img[[r, c + i]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for r in 0..oh {
        for c in 0..ow {
            out[[r, c]] = taps.iter().enumerate().map(|(i, t)| t * tmp[[r + i, c]]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03 and dynamic range 1, averaged over all fully-inside windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (x, y) = (&a.data, &b.data);
    let mu_x = filter_valid(x, &taps);
    let mu_y = filter_valid(y, &taps);
    let xx = filter_valid(&(x * x), &taps);
    let yy = filter_valid(&(y * y), &taps);
    let xy = filter_valid(&(x * y), &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for (idx, &mx) in mu_x.indexed_iter() {
        let my = mu_y[idx];
        let vx = xx[idx] - mx * mx;
        let vy = yy[idx] - my * my;
        let cxy = xy[idx] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

/// Linear map from centered landmark coordinates (`2K` columns) to centered
/// keypoint coordinates (`2J` columns), without intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionMap {
    /// `2K × 2J`; a row of inputs times this matrix gives the outputs.
    pub weights: Vec<Vec<f64>>,
}

impl RegressionMap {
    pub fn matrix(&self) -> Array2<f64> {
        let rows = self.weights.len();
        let cols = self.weights.first().map_or(0, Vec::len);
        Array2::from_shape_fn((rows, cols), |(r, c)| self.weights[r][c])
    }

    pub fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let w = self.matrix();
        if inputs.ncols() != w.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} input columns for a {}-row regressor",
                inputs.ncols(),
                w.nrows()
            )));
        }
        Ok(inputs.dot(&w))
    }
}

/// Least squares through the ridge-stabilized normal equations
/// `(XᵀX + 1e-8·I) W = XᵀY`.
pub fn fit_keypoint_regressor(
    landmark_mu: ArrayView2<'_, f64>,
    keypoints: ArrayView2<'_, f64>,
) -> Result<RegressionMap> {
    let (n, p) = landmark_mu.dim();
    if keypoints.nrows() != n {
        return Err(Error::ShapeMismatch(format!("{n} landmark rows vs {} keypoint rows", keypoints.nrows())));
    }
    if p == 0 || n < p {
        return Err(Error::InvalidArgument(format!("need at least {p} samples, got {n}")));
    }
    if landmark_mu.iter().chain(keypoints.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression data".into()));
    }
    let mut gram = landmark_mu.t().dot(&landmark_mu);
    for i in 0..p {
        gram[[i, i]] += REGRESSION_RIDGE;
    }
    let rhs = landmark_mu.t().dot(&keypoints);
    let w = cholesky_solve(gram.view(), rhs.view(), RANK_TOL)?;
    Ok(RegressionMap { weights: w.outer_iter().map(|r| r.to_vec()).collect() })
}

/// Fraction of keypoints whose Euclidean error is at most `threshold`.
pub fn pck_accuracy(predicted: &[[f64; 2]], target: &[[f64; 2]], threshold: f64) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions vs {} targets", predicted.len(), target.len())));
    }
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("no keypoints".into()));
    }
    let hits = predicted.iter().zip(target).filter(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]) <= threshold).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// `(threshold, accuracy)` pairs for an accuracy-vs-distance table.
pub fn pck_curve(predicted: &[[f64; 2]], target: &[[f64; 2]], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    thresholds.iter().map(|&t| pck_accuracy(predicted, target, t).map(|a| (t, a))).collect()
}

/// One line of a per-frame metric report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
    pub state_mse: f64,
}

/// Writes `frame,psnr_db,ssim,state_mse` rows and a trailing `mean` row.
/// PSNR is capped at [`PSNR_CAP_DB`] before both printing and averaging.
pub fn write_report<W: Write>(rows: &[FrameMetrics], mut out: W) -> Result<()> {
    writeln!(out, "frame,psnr_db,ssim,state_mse")?;
    let fmt = |v: f64| format!("{v:.6}");
    let mut sum = [0.0; 3];
    for (i, r) in rows.iter().enumerate() {
        let p = r.psnr_db.min(PSNR_CAP_DB);
        writeln!(out, "{i},{},{},{:.6e}", fmt(p), fmt(r.ssim), r.state_mse)?;
        sum[0] += p;
        sum[1] += r.ssim;
        sum[2] += r.state_mse;
    }
    let n = rows.len().max(1) as f64;
    writeln!(out, "mean,{},{},{:.6e}", fmt(sum[0] / n), fmt(sum[1] / n), sum[2] / n)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::new(Array2::from_shape_fn((h, w), |(r, c)| f(r, c))).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = img(8, 8, |r, c| ((r + c) % 3) as f64 * 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let lo = img(8, 8, |_, _| 0.2);
        let hi = img(8, 8, |_, _| 0.3);
        assert!((psnr(&lo, &hi).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&lo, &img(8, 9, |_, _| 0.2)).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = img(16, 20, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let (ma, mb) = (0.4, 0.7);
        let s = ssim(&img(12, 12, |_, _| ma), &img(12, 12, |_, _| mb)).unwrap();
        let c1 = SSIM_K1 * SSIM_K1;
        let expected = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        assert!((s - expected).abs() < 1e-9, "{s} vs {expected}");
        assert!(ssim(&img(10, 12, |_, _| 0.0), &img(10, 12, |_, _| 0.0)).is_err());
    }

    #[test]
    fn image_range_checked() {
        assert!(Image::new(Array2::from_elem((2, 2), 1.5)).is_err());
        assert!(Image::new(Array2::from_elem((2, 2), 1.0 + 1e-12)).is_ok());
    }

    #[test]
    fn pck_examples() {
        let t = [[10.0, 10.0], [20.0, 5.0], [0.0, 0.0]];
        assert_eq!(pck_accuracy(&t, &t, 6.0).unwrap(), 1.0);
        let p = [[16.0, 10.0], [20.0, -1.0], [-6.0, 0.0]];
        assert_eq!(pck_accuracy(&p, &t, 6.0).unwrap(), 1.0);
        assert_eq!(pck_accuracy(&p, &t, 5.999).unwrap(), 0.0);
        assert!(pck_accuracy(&p[..2], &t, 6.0).is_err());
        assert!(pck_accuracy(&p, &t, 0.0).is_err());
    }

    #[test]
    fn regressor_recovers_scaling_and_selection() {
        let x = Array2::from_shape_fn((50, 4), |(i, j)| ((i * 13 + j * 7) % 17) as f64 / 17.0 - 0.5);
        let y = &x * 2.0;
        let w = fit_keypoint_regressor(x.view(), y.view()).unwrap().matrix();
        for ((r, c), v) in w.indexed_iter() {
            let e = if r == c { 2.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-8);
        }
        // keypoints are landmark 1 (columns 2, 3)
        let y = x.slice(ndarray::s![.., 2..4]).to_owned();
        let w = fit_keypoint_regressor(x.view(), y.view()).unwrap().matrix();
        let sel = ndarray::arr2(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!((&w - &sel).iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn regressor_reports_rank_deficiency() {
        let mut x = Array2::from_shape_fn((40, 4), |(i, j)| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let col = x.column(0).to_owned();
        x.column_mut(3).assign(&col);
        let y = x.slice(ndarray::s![.., 0..2]).to_owned();
        let r = fit_keypoint_regressor(x.view(), y.view());
        assert!(matches!(r, Err(Error::RankDeficient { .. })));
        assert!(fit_keypoint_regressor(x.slice(ndarray::s![..3, ..]), y.slice(ndarray::s![..3, ..])).is_err());
    }

    #[test]
    fn report_format() {
        let rows = [
            FrameMetrics { psnr_db: f64::INFINITY, ssim: 1.0, state_mse: 0.0 },
            FrameMetrics { psnr_db: 21.0, ssim: 0.5, state_mse: 2e-3 },
        ];
        let mut buf = Vec::new();
        write_report(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "frame,psnr_db,ssim,state_mse");
        assert_eq!(lines[1], "0,99.000000,1.000000,0.000000e0");
        assert_eq!(lines[3], "mean,60.000000,0.750000,1.000000e-3");
    }
}
