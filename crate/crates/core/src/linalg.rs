//! Small dense solvers for the TPS kernel system and the keypoint regressor.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Solves `A X = B` by LU with partial pivoting. A pivot below
/// `tol · max|A|` is reported as singular.
pub fn lu_solve(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, tol: f64) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::ShapeMismatch(format!("lu_solve: A {:?}, B {:?}", a.dim(), b.dim())));
    }
    let mut m = a.to_owned();
    let mut x = b.to_owned();
    let scale = m.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::SingularSystem("zero matrix".into()));
    }
    for col in 0..n {
        let (p, best) =
            (col..n)
                .map(|r| (r, m[[r, col]].abs()))
                .fold((col, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if best <= tol * scale {
            return Err(Error::SingularSystem(format!("pivot {col} is {best:e}")));
        }
        if p != col {
            for j in 0..n {
                m.swap([p, j], [col, j]);
            }
            for j in 0..x.ncols() {
                x.swap([p, j], [col, j]);
            }
        }
        let d = m[[col, col]];
        for r in col + 1..n {
            let f = m[[r, col]] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[[r, j]] -= f * m[[col, j]];
            }
            for j in 0..x.ncols() {
                x[[r, j]] -= f * x[[col, j]];
            }
        }
    }
    for col in (0..n).rev() {
        for j in 0..x.ncols() {
            let mut s = x[[col, j]];
            for k in col + 1..n {
                s -= m[[col, k]] * x[[k, j]];
            }
            x[[col, j]] = s / m[[col, col]];
        }
    }
    Ok(x)
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky.
/// A squared pivot below `rel_tol · max diag(A)` is reported as
/// rank deficiency.
pub fn cholesky_solve(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, rel_tol: f64) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::ShapeMismatch(format!("cholesky_solve: A {:?}, B {:?}", a.dim(), b.dim())));
    }
    let max_diag = (0..n).map(|i| a[[i, i]]).fold(0.0_f64, f64::max);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        let relative = d / max_diag;
        if relative.is_nan() || relative <= rel_tol {
            return Err(Error::RankDeficient { pivot: j, relative });
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    let mut x = b.to_owned();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = x[[i, c]];
            for k in i + 1..n {
                s -= l[[k, i]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
    }
    Ok(x)
}
