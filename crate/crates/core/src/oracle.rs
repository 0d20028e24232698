//! Brute-force reference computations for tests.
//!
//! Nothing here calls into the estimators it is used to check: posteriors are
//! built from dense weight matrices and explicit inverses, moments from their
//! defining sums, portfolio assignments by counting ranks.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult<T> {
    pub quantity: &'static str,
    pub value: T,
    pub method: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugatePosterior {
    pub beta_bar: DVector<f64>,
    pub kappa_bar: DMatrix<f64>,
    pub alpha_bar: f64,
    pub gamma_bar: f64,
}

/// `Err` carries a description of the singular matrix.
pub fn conjugate_posterior(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    theta: &[f64],
    beta0: &DVector<f64>,
    kappa0: &DMatrix<f64>,
    alpha0: f64,
    gamma0: f64,
    half_trace: bool,
) -> Result<OracleResult<ConjugatePosterior>, String> {
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(theta));
    let xt_d = x.transpose() * &d;
    let xdx = &xt_d * x;
    let xdx_inv = xdx.clone().try_inverse().ok_or("X'DX is singular")?;
    let beta_hat = &xdx_inv * (&xt_d * y);
    let kappa_bar = kappa0 + &xdx;
    let kappa_bar_inv = kappa_bar.clone().try_inverse().ok_or("posterior precision is singular")?;
    let beta_bar = &kappa_bar_inv * (&xdx * &beta_hat + kappa0 * beta0);
    let ydy = (y.transpose() * &d * y)[(0, 0)];
    let quad = ydy - (beta_bar.transpose() * &kappa_bar * &beta_bar)[(0, 0)]
        + (beta0.transpose() * kappa0 * beta0)[(0, 0)];
    let trace: f64 = d.diagonal().sum();
    Ok(OracleResult {
        quantity: "normal-gamma posterior",
        value: ConjugatePosterior {
            beta_bar,
            kappa_bar,
            alpha_bar: alpha0 + if half_trace { trace / 2.0 } else { trace },
            gamma_bar: gamma0 + quad / 2.0,
        },
        method: "dense conjugate solve",
    })
}

/// OLS coefficients of `y` on the columns of `x` as given (no intercept
/// added), via the explicit normal-equation inverse.
pub fn least_squares(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<OracleResult<DVector<f64>>, String> {
    let inv = (x.transpose() * x).try_inverse().ok_or("X'X is singular")?;
    Ok(OracleResult {
        quantity: "least-squares coefficients",
        value: inv * x.transpose() * y,
        method: "dense normal equations",
    })
}

/// `(variance, skewness, kurtosis)` straight from the defining sums.
pub fn realized_moments(returns: &[f64]) -> OracleResult<(f64, f64, f64)> {
    let k = returns.len() as f64;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let mut s4 = 0.0;
    for r in returns {
        s2 += r * r;
        s3 += r * r * r;
        s4 += r * r * r * r;
    }
    OracleResult {
        quantity: "realized moments",
        value: (s2, k.sqrt() * s3 / s2.powf(1.5), k * s4 / (s2 * s2)),
        method: "direct formula evaluation",
    }
}

/// Trailing mean over the last `width` values (fewer during warm-up).
pub fn trailing_mean(xs: &[f64], width: usize) -> OracleResult<Vec<f64>> {
    let value = (0..xs.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(width);
            xs[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64
        })
        .collect();
    OracleResult {
        quantity: "trailing mean",
        value,
        method: "direct summation per point",
    }
}

/// Portfolio (0-based) for each asset with a loading: rank by `(loading, id)`,
/// then locate the rank among portfolio boundaries where the first
/// `N mod n` portfolios get one extra asset.
pub fn quantile_assignment(loadings: &[Option<f64>], ids: &[String], n: usize) -> OracleResult<Vec<Option<usize>>> {
    let present: Vec<usize> = (0..loadings.len()).filter(|&i| loadings[i].is_some()).collect();
    let total = present.len();
    let value = (0..loadings.len())
        .map(|i| {
            let li = loadings[i]?;
            let rank = present
                .iter()
                .filter(|&&j| {
                    let lj = loadings[j].unwrap();
                    lj < li || (lj == li && ids[j] < ids[i])
                })
                .count();
            let mut upper = 0;
            (0..n).find(|&p| {
                upper += total / n + usize::from(p < total % n);
                rank < upper
            })
        })
        .collect();
    OracleResult {
        quantity: "quantile portfolio assignment",
        value,
        method: "exhaustive rank enumeration",
    }
}
