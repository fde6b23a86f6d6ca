//! Small dense solvers for the regression-style estimators (weighted least
//! squares, sandwich covariances). Sized for designs with tens of columns.

use crate::matrix::Matrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinAlgError {
    #[error("design matrix is rank deficient (pivot {pivot} at column {col})")]
    RankDeficient { col: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Cholesky factor of a symmetric positive-definite matrix (lower triangle).
pub struct Cholesky {
    l: Matrix,
    n: usize,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Result<Self, LinAlgError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinAlgError::DimensionMismatch("matrix must be square".into()));
        }
        // relative pivot floor against the largest diagonal entry
        let scale = (0..n).map(|i| a.get(i, i).abs()).fold(0.0_f64, f64::max).max(1e-300);
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if d <= 1e-12 * scale {
                return Err(LinAlgError::RankDeficient { col: j, pivot: d });
            }
            let dj = d.sqrt();
            l.set(j, j, dj);
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / dj);
            }
        }
        Ok(Cholesky { l, n })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinAlgError> {
        if b.len() != self.n {
            return Err(LinAlgError::DimensionMismatch("rhs length".into()));
        }
        let mut y = b.to_vec();
        for i in 0..self.n {
            for k in 0..i {
                y[i] -= self.l.get(i, k) * y[k];
            }
            y[i] /= self.l.get(i, i);
        }
        for i in (0..self.n).rev() {
            for k in (i + 1)..self.n {
                y[i] -= self.l.get(k, i) * y[k];
            }
            y[i] /= self.l.get(i, i);
        }
        Ok(y)
    }

    pub fn inverse(&self) -> Result<Matrix, LinAlgError> {
        let mut inv = Matrix::zeros(self.n, self.n);
        let mut e = vec![0.0; self.n];
        for j in 0..self.n {
            e[j] = 1.0;
            let col = self.solve(&e)?;
            e[j] = 0.0;
            for (i, v) in col.iter().enumerate() {
                inv.set(i, j, *v);
            }
        }
        Ok(inv)
    }
}

/// X'WX and X'Wy cross products for (optionally weighted) least squares.
pub fn cross_products(x: &Matrix, y: &[f64], weights: Option<&[f64]>) -> (Matrix, Vec<f64>) {
    let k = x.ncols();
    let mut xtx = Matrix::zeros(k, k);
    let mut xty = vec![0.0; k];
    for (i, yi) in y.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[i]);
        let row = x.row(i);
        for a in 0..k {
            let wa = w * row[a];
            xty[a] += wa * yi;
            for (b, rb) in row.iter().enumerate().skip(a) {
                let v = xtx.get(a, b) + wa * rb;
                xtx.set(a, b, v);
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx.set(a, b, xtx.get(b, a));
        }
    }
    (xtx, xty)
}

pub struct LeastSquaresFit {
    pub coef: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub xtwx_inv: Matrix,
}

/// Weighted least squares via normal equations; errors on rank deficiency.
pub fn weighted_least_squares(
    x: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<LeastSquaresFit, LinAlgError> {
    if y.len() != x.nrows() {
        return Err(LinAlgError::DimensionMismatch("y length".into()));
    }
    if let Some(w) = weights {
        if w.len() != x.nrows() {
            return Err(LinAlgError::DimensionMismatch("weights length".into()));
        }
    }
    let (xtx, xty) = cross_products(x, y, weights);
    let chol = Cholesky::new(&xtx)?;
    let coef = chol.solve(&xty)?;
    let fitted: Vec<f64> = (0..x.nrows())
        .map(|i| x.row(i).iter().zip(&coef).map(|(a, b)| a * b).sum())
        .collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Ok(LeastSquaresFit { coef, fitted, residuals, xtwx_inv: chol.inverse()? })
}

/// Heteroskedasticity-robust sandwich covariance for a (weighted) LS fit:
/// (X'WX)^-1 [sum w_i^2 e_i^2 x_i x_i'] (X'WX)^-1.
pub fn robust_covariance(
    x: &Matrix,
    fit: &LeastSquaresFit,
    weights: Option<&[f64]>,
) -> Matrix {
    let (n, k) = (x.nrows(), x.ncols());
    let mut meat = Matrix::zeros(k, k);
    for i in 0..n {
        let w = weights.map_or(1.0, |ws| ws[i]);
        let we = w * fit.residuals[i];
        let row = x.row(i);
        for a in 0..k {
            for b in a..k {
                let v = meat.get(a, b) + we * we * row[a] * row[b];
                meat.set(a, b, v);
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat.set(a, b, meat.get(b, a));
        }
    }
    sandwich(&fit.xtwx_inv, &meat)
}

/// bread * meat * bread for symmetric bread.
pub fn sandwich(bread: &Matrix, meat: &Matrix) -> Matrix {
    let k = bread.nrows();
    let mut tmp = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let mut s = 0.0;
            for c in 0..k {
                s += bread.get(a, c) * meat.get(c, b);
            }
            tmp.set(a, b, s);
        }
    }
    let mut out = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let mut s = 0.0;
            for c in 0..k {
                s += tmp.get(a, c) * bread.get(c, b);
            }
            out.set(a, b, s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_solves_known_system() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let chol = Cholesky::new(&a).unwrap();
        let x = chol.solve(&[2.0, 3.0]).unwrap();
        assert_relative_eq!(x[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-12);
        let inv = chol.inverse().unwrap();
        // A * A^-1 = I
        assert_relative_eq!(4.0 * inv.get(0, 0) + 2.0 * inv.get(1, 0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(4.0 * inv.get(0, 1) + 2.0 * inv.get(1, 1), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::new(&a), Err(LinAlgError::RankDeficient { .. })));
    }

    #[test]
    fn least_squares_recovers_exact_line() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 2.0],
            vec![1.0, 3.0],
        ])
        .unwrap();
        let y = vec![1.0, 3.0, 5.0, 7.0];
        let fit = weighted_least_squares(&x, &y, None).unwrap();
        assert_relative_eq!(fit.coef[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(fit.coef[1], 2.0, epsilon = 1e-10);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn weighted_fit_downweights_outlier() {
        let x = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        let y = vec![1.0, 1.0, 100.0];
        let w = vec![1.0, 1.0, 0.0];
        let fit = weighted_least_squares(&x, &y, Some(&w)).unwrap();
        assert_relative_eq!(fit.coef[0], 1.0, epsilon = 1e-12);
    }
}
