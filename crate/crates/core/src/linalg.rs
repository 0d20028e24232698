//! Small dense least-squares and summary-statistic helpers.
//!
//! Regressions here are tiny (a handful of regressors, at most a few thousand
//! rows), so everything goes through centered, unit-norm normal equations with
//! a pivot-checked Cholesky factorization. Column scaling makes the rank test
//! independent of the units of each regressor.

use nalgebra::{DMatrix, DVector};

/// Pivots of a Jacobi-scaled Gram matrix below this are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Intercept followed by one slope per regressor column.
    pub coef: DVector<f64>,
    /// `(X'X)^{-1}` for the design including the intercept column.
    pub cov_unscaled: DMatrix<f64>,
    pub ssr: f64,
    pub tss: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn n_params(&self) -> usize {
        self.coef.len()
    }

    /// Residual variance with `n - p` degrees of freedom.
    pub fn resid_var(&self) -> f64 {
        let dof = self.n.saturating_sub(self.n_params());
        if dof == 0 {
            f64::NAN
        } else {
            self.ssr / dof as f64
        }
    }

    /// Unadjusted R². A response without variation is fit perfectly iff the
    /// residuals vanish.
    pub fn r_squared(&self) -> f64 {
        if self.tss <= f64::EPSILON * f64::EPSILON {
            if self.ssr <= f64::EPSILON {
                1.0
            } else {
                0.0
            }
        } else {
            (1.0 - self.ssr / self.tss).clamp(0.0, 1.0)
        }
    }

    /// Classical standard errors `sqrt(s² diag((X'X)^{-1}))`.
    pub fn std_errors(&self) -> DVector<f64> {
        let s2 = self.resid_var();
        DVector::from_iterator(
            self.n_params(),
            (0..self.n_params()).map(|i| (s2 * self.cov_unscaled[(i, i)]).sqrt()),
        )
    }

    pub fn intercept(&self) -> f64 {
        self.coef[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.coef.as_slice()[1..]
    }
}

/// Why a regression could not be solved.
#[derive(Debug, Clone, PartialEq)]
pub enum OlsError {
    TooFewRows { rows: usize, params: usize },
    /// Indices (into the regressor columns) that are constant or linearly
    /// dependent on the others.
    RankDeficient(Vec<usize>),
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// The matrix is Jacobi-scaled before factoring; a scaled pivot below
/// [`RANK_TOL`] returns the offending index.
pub fn cholesky_checked(a: &DMatrix<f64>) -> Result<DMatrix<f64>, usize> {
    let n = a.nrows();
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = a[(i, i)];
            if d > 0.0 {
                d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    if let Some(i) = scale.iter().position(|&s| s == 0.0 || !s.is_finite()) {
        return Err(i);
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] / (scale[j] * scale[j]);
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < RANK_TOL || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = a[(i, j)] / (scale[i] * scale[j]);
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] *= scale[i];
        }
    }
    Ok(l)
}

/// Solves `L L' x = b` given the lower factor.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut z = b.clone();
    for i in 0..n {
        let mut v = z[i];
        for k in 0..i {
            v -= l[(i, k)] * z[k];
        }
        z[i] = v / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut v = z[i];
        for k in (i + 1)..n {
            v -= l[(k, i)] * z[k];
        }
        z[i] = v / l[(i, i)];
    }
    z
}

/// Inverse from the lower Cholesky factor.
pub fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::<f64>::zeros(n);
        e[j] = 1.0;
        inv.set_column(j, &cholesky_solve(l, &e));
    }
    inv
}

/// Least squares of `y` on an intercept plus the columns of `x`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, OlsError> {
    let n = x.nrows();
    let k = x.ncols();
    assert_eq!(n, y.len(), "design and response lengths differ");
    if n < k + 1 {
        return Err(OlsError::TooFewRows {
            rows: n,
            params: k + 1,
        });
    }
    let nf = n as f64;
    let y_mean = y.mean();
    let means: Vec<f64> = (0..k).map(|j| x.column(j).mean()).collect();

    let mut z = x.clone();
    let mut norms = vec![0.0; k];
    let mut degenerate = Vec::new();
    for j in 0..k {
        let raw: f64 = x.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut col = z.column_mut(j);
        col.add_scalar_mut(-means[j]);
        let norm = col.norm();
        if norm <= 1e-12 * raw || norm == 0.0 || !norm.is_finite() {
            degenerate.push(j);
        } else {
            col /= norm;
        }
        norms[j] = norm;
    }
    if !degenerate.is_empty() {
        return Err(OlsError::RankDeficient(degenerate));
    }

    let yc = y.add_scalar(-y_mean);
    let gram = z.tr_mul(&z);
    let l = match cholesky_checked(&gram) {
        Ok(l) => l,
        Err(_) => return Err(OlsError::RankDeficient(collinear_columns(&z))),
    };
    let scaled = cholesky_solve(&l, &z.tr_mul(&yc));
    let slopes: Vec<f64> = (0..k).map(|j| scaled[j] / norms[j]).collect();
    let intercept = y_mean - slopes.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();

    let mut coef = DVector::<f64>::zeros(k + 1);
    coef[0] = intercept;
    for j in 0..k {
        coef[j + 1] = slopes[j];
    }

    let fitted = x * DVector::from_column_slice(&slopes);
    let ssr: f64 = (0..n)
        .map(|i| {
            let e = y[i] - intercept - fitted[i];
            e * e
        })
        .sum();
    let tss: f64 = yc.iter().map(|v| v * v).sum();

    // Slope block in original units, then the intercept row by partitioned
    // inversion around the column means.
    let ginv = cholesky_inverse(&l);
    let mut slope_cov = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            slope_cov[(i, j)] = ginv[(i, j)] / (norms[i] * norms[j]);
        }
    }
    let xbar = DVector::from_column_slice(&means);
    let v_xbar = &slope_cov * &xbar;
    let mut cov = DMatrix::<f64>::zeros(k + 1, k + 1);
    cov[(0, 0)] = 1.0 / nf + xbar.dot(&v_xbar);
    for j in 0..k {
        cov[(0, j + 1)] = -v_xbar[j];
        cov[(j + 1, 0)] = -v_xbar[j];
        for i in 0..k {
            cov[(i + 1, j + 1)] = slope_cov[(i, j)];
        }
    }

    Ok(OlsFit {
        coef,
        cov_unscaled: cov,
        ssr,
        tss,
        n,
    })
}

/// Columns of a centered, unit-norm design that are (numerically) linear
/// combinations of the remaining columns.
fn collinear_columns(z: &DMatrix<f64>) -> Vec<usize> {
    let k = z.ncols();
    let mut out = Vec::new();
    for j in 0..k {
        if k == 1 {
            out.push(j);
            continue;
        }
        let others: Vec<usize> = (0..k).filter(|&c| c != j).collect();
        let rest = z.select_columns(&others);
        let target = z.column(j).into_owned();
        let svd = rest.clone().svd(true, true);
        let coef = match svd.solve(&target, 1e-12) {
            Ok(c) => c,
            Err(_) => {
                out.push(j);
                continue;
            }
        };
        let resid = &target - &rest * coef;
        if resid.norm_squared() < 1e-8 {
            out.push(j);
        }
    }
    out
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Standard error of the mean with a Bartlett-kernel (Newey-West) long-run
/// variance. `lags = 0` reduces to `sd / sqrt(n)`.
pub fn mean_std_error(xs: &[f64], lags: usize) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    if lags == 0 {
        return sample_sd(xs) / (n as f64).sqrt();
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let gamma = |h: usize| -> f64 {
        dev[h..].iter().zip(&dev[..n - h]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    };
    let mut lrv = gamma(0);
    for h in 1..=lags.min(n - 1) {
        let w = 1.0 - h as f64 / (lags as f64 + 1.0);
        lrv += 2.0 * w * gamma(h);
    }
    // Rescale to the n - 1 convention so lags = 0 and lags > 0 agree in form.
    (lrv.max(0.0) * n as f64 / (n as f64 - 1.0) / n as f64).sqrt()
}

/// Pearson correlation; `None` when either input has no variation.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_recovery() {
        let x = DMatrix::from_fn(20, 2, |i, j| ((i * (j + 3)) % 7) as f64 + 0.1 * i as f64);
        let y = DVector::from_fn(20, |i, _| 1.5 + 2.0 * x[(i, 0)] - 0.5 * x[(i, 1)]);
        let fit = ols(&x, &y).unwrap();
        assert!((fit.coef[0] - 1.5).abs() < 1e-10);
        assert!((fit.coef[1] - 2.0).abs() < 1e-10);
        assert!((fit.coef[2] + 0.5).abs() < 1e-10);
        assert!((fit.r_squared() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_matches_explicit_inverse() {
        let x = DMatrix::from_fn(15, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 - 4.0 + j as f64);
        let y = DVector::from_fn(15, |i, _| (i as f64).sin());
        let fit = ols(&x, &y).unwrap();
        let full = DMatrix::from_fn(15, 3, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let inv = (full.transpose() * &full).try_inverse().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((inv[(i, j)] - fit.cov_unscaled[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_column_is_rank_deficient() {
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 3.0 } else { i as f64 });
        let y = DVector::from_fn(10, |i, _| i as f64);
        assert_eq!(ols(&x, &y).unwrap_err(), OlsError::RankDeficient(vec![0]));
    }

    #[test]
    fn duplicated_columns_are_both_reported() {
        let x = DMatrix::from_fn(10, 3, |i, j| match j {
            0 => i as f64,
            1 => (i * i) as f64,
            _ => 2.0 * i as f64,
        });
        let y = DVector::from_fn(10, |i, _| i as f64);
        assert_eq!(ols(&x, &y).unwrap_err(), OlsError::RankDeficient(vec![0, 2]));
    }

    #[test]
    fn newey_west_zero_lag_is_plain() {
        let xs = [0.1, -0.3, 0.25, 0.4, -0.05];
        let plain = sample_sd(&xs) / (xs.len() as f64).sqrt();
        assert!((mean_std_error(&xs, 0) - plain).abs() < 1e-15);
    }
}
