//! Thin-plate-spline warps of point sets and grids.
//!
//! The warp is `f(p) = A·[p; 1] + Σ_i w_i U(‖p − src_i‖)` with kernel
//! `U(r) = r² log r²` and `U(0) = 0`. Fitting solves the usual bordered system
//!
//! ```text
//! [ K + λI  P ] [w]   [dst]
//! [ Pᵀ      0 ] [a] = [ 0 ]
//! ```
//!
//! where `P` has rows `[1, x_i, y_i]`.

use ndarray::{Array2, Array3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lu_solve;
use crate::rng;
use crate::state::GridCoords;

pub const DEFAULT_LAMBDA: f64 = 1e-6;

/// Displacements of [`random_tps`] are truncated at this many sigmas.
pub const DISPLACEMENT_TRUNCATION: f64 = 3.0;

const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsWarp {
    pub control_src: Vec<[f64; 2]>,
    pub control_dst: Vec<[f64; 2]>,
    pub weights: Vec<[f64; 2]>,
    /// Row `d` maps `[x, y, 1]` to output coordinate `d`.
    pub affine: [[f64; 3]; 2],
    pub lambda: f64,
}

#[inline]
pub fn kernel(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

#[inline]
fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn system(src: &[[f64; 2]], lambda: f64) -> Array2<f64> {
    let n = src.len();
    let mut a = Array2::zeros((n + 3, n + 3));
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] = kernel(dist2(src[i], src[j]));
        }
        a[[i, i]] += lambda;
        let row = [1.0, src[i][0], src[i][1]];
        for (c, v) in row.into_iter().enumerate() {
            a[[i, n + c]] = v;
            a[[n + c, i]] = v;
        }
    }
    a
}

fn collinear(points: &[[f64; 2]]) -> bool {
    let (span_x, span_y) = points.iter().fold((0.0_f64, 0.0_f64), |(sx, sy), p| {
        (sx.max((p[0] - points[0][0]).abs()), sy.max((p[1] - points[0][1]).abs()))
    });
    let scale = span_x.max(span_y).max(f64::MIN_POSITIVE);
    let o = points[0];
    let mut max_area = 0.0_f64;
    for i in 1..points.len() {
        for j in i + 1..points.len() {
            let (a, b) = (points[i], points[j]);
            let cross = (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
            max_area = max_area.max(cross.abs());
        }
    }
    max_area <= 1e-12 * scale * scale
}

/// Fits the spline taking `src[i]` to `dst[i]`.
pub fn tps_fit(src: &[[f64; 2]], dst: &[[f64; 2]], lambda: f64) -> Result<TpsWarp> {
    let n = src.len();
    if dst.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} source points vs {} targets", dst.len())));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 control points, got {n}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    if src.iter().chain(dst).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("control points".into()));
    }
    if collinear(src) {
        return Err(Error::SingularSystem("control points are collinear".into()));
    }
    let a = system(src, lambda);
    let mut rhs = Array2::zeros((n + 3, 2));
    for (i, p) in dst.iter().enumerate() {
        rhs[[i, 0]] = p[0];
        rhs[[i, 1]] = p[1];
    }
    let sol = lu_solve(a.view(), rhs.view(), PIVOT_TOL)?;
    let weights = (0..n).map(|i| [sol[[i, 0]], sol[[i, 1]]]).collect();
    let c = |r: usize, d: usize| sol[[n + r, d]];
    let affine = [[c(1, 0), c(2, 0), c(0, 0)], [c(1, 1), c(2, 1), c(0, 1)]];
    Ok(TpsWarp { control_src: src.to_vec(), control_dst: dst.to_vec(), weights, affine, lambda })
}

impl TpsWarp {
    pub fn apply_point(&self, p: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (d, row) in self.affine.iter().enumerate() {
            out[d] = row[0] * p[0] + row[1] * p[1] + row[2];
        }
        for (src, w) in self.control_src.iter().zip(&self.weights) {
            let u = kernel(dist2(p, *src));
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }

    /// Max-abs residual of the fitted bordered system.
    pub fn system_residual(&self) -> f64 {
        let n = self.control_src.len();
        let a = system(&self.control_src, self.lambda);
        let mut x = Array2::zeros((n + 3, 2));
        for (i, w) in self.weights.iter().enumerate() {
            x[[i, 0]] = w[0];
            x[[i, 1]] = w[1];
        }
        for d in 0..2 {
            x[[n, d]] = self.affine[d][2];
            x[[n + 1, d]] = self.affine[d][0];
            x[[n + 2, d]] = self.affine[d][1];
        }
        let mut r = a.dot(&x);
        for (i, p) in self.control_dst.iter().enumerate() {
            r[[i, 0]] -= p[0];
            r[[i, 1]] -= p[1];
        }
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Spline taking the targets back to the sources; an approximate inverse.
    pub fn inverse(&self) -> Result<TpsWarp> {
        tps_fit(&self.control_dst, &self.control_src, self.lambda)
    }
}

/// Applies `warp` to every point.
pub fn tps_apply(warp: &TpsWarp, points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("warp input points".into()));
    }
    Ok(points.iter().map(|&p| warp.apply_point(p)).collect())
}

/// Random warp on a `g×g` control lattice spanning `[-1, 1]²`.
///
/// Displacements are i.i.d. normal with standard deviation `sigma` per axis,
/// truncated at [`DISPLACEMENT_TRUNCATION`]·sigma in length and then clamped so
/// targets stay inside `[-1, 1]²`. Deterministic in `seed`.
pub fn random_tps(g: usize, sigma: f64, seed: u64) -> Result<TpsWarp> {
    if g < 2 {
        return Err(Error::InvalidArgument(format!("control grid needs g >= 2, got {g}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be nonnegative, got {sigma}")));
    }
    let mut rng = rng::stream(seed, "geometry/tps");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let step = 2.0 / (g - 1) as f64;
    let mut src = Vec::with_capacity(g * g);
    let mut dst = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let p = [-1.0 + j as f64 * step, -1.0 + i as f64 * step];
            let mut d = [normal.sample(&mut rng) * sigma, normal.sample(&mut rng) * sigma];
            let len = d[0].hypot(d[1]);
            let cap = DISPLACEMENT_TRUNCATION * sigma;
            if len > cap {
                d = [d[0] * cap / len, d[1] * cap / len];
            }
            src.push(p);
            dst.push([(p[0] + d[0]).clamp(-1.0, 1.0), (p[1] + d[1]).clamp(-1.0, 1.0)]);
        }
    }
    tps_fit(&src, &dst, DEFAULT_LAMBDA)
}

/// Warps `[part, row, col]` grids so content at `p` moves to `warp(p)`.
///
/// Each output pixel is inverse-mapped through the approximate inverse spline
/// and bilinearly sampled; samples falling outside the grid read zero.
pub fn warp_grid(warp: &TpsWarp, grids: &Array3<f64>) -> Result<Array3<f64>> {
    let inv = warp.inverse()?;
    let (k, h, w) = grids.dim();
    let coords = GridCoords::new(w, h);
    let mut out = Array3::zeros((k, h, w));
    for row in 0..h {
        for col in 0..w {
            let [px, py] = coords.to_pixel(inv.apply_point(coords.point(row, col)));
            let (x0, y0) = (px.floor(), py.floor());
            let (fx, fy) = (px - x0, py - y0);
            let taps = [
                (y0, x0, (1.0 - fx) * (1.0 - fy)),
                (y0, x0 + 1.0, fx * (1.0 - fy)),
                (y0 + 1.0, x0, (1.0 - fx) * fy),
                (y0 + 1.0, x0 + 1.0, fx * fy),
            ];
            for (r, c, wt) in taps {
                if wt == 0.0 || r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                for part in 0..k {
                    out[[part, row, col]] += wt * grids[[part, r, c]];
                }
            }
        }
    }
    Ok(out)
}

/// Sum of the fitted weights and their first moments; zero for a solved
/// system.
pub fn side_conditions(warp: &TpsWarp) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (w, p) in warp.weights.iter().zip(&warp.control_src) {
        for d in 0..2 {
            out[d] += w[d];
            out[2 + d] += w[d] * p[0];
            out[4 + d] += w[d] * p[1];
        }
    }
    out
}
