//! Static two-pass Fama-MacBeth estimation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorMatrix;
use crate::ingest::ReturnPanel;
use crate::linalg::{cholesky_checked, cholesky_inverse, mean, ols, OlsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionConfig {
    /// Minimum share of usable return observations for an asset to enter.
    pub min_coverage: f64,
    /// Errors-in-variables correction of the second-stage covariance.
    pub shanken: bool,
}

impl Default for CrossSectionConfig {
    fn default() -> Self {
        CrossSectionConfig {
            min_coverage: 0.6,
            shanken: false,
        }
    }
}

/// Predictive pairs `(factor row at t, return period t+1)` on the return calendar.
pub(crate) fn predictive_pairs<'a>(
    returns: &ReturnPanel,
    factors: &'a FactorMatrix,
) -> Vec<(usize, &'a [f64])> {
    let index = factors.date_index();
    (1..returns.n_periods())
        .filter_map(|p| {
            index
                .get(&returns.dates[p - 1])
                .map(|&i| (p, factors.values[i].as_slice()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetLoadings {
    pub asset: String,
    pub alpha: f64,
    pub betas: Vec<f64>,
    pub resid_var: f64,
    pub rows: usize,
    /// Mean of the returns used in the regression.
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageLoadings {
    pub factor_names: Vec<String>,
    pub assets: Vec<AssetLoadings>,
    /// Sample covariance of the factor rows used, for the Shanken correction.
    pub factor_cov: Vec<Vec<f64>>,
}

impl FirstStageLoadings {
    pub fn n_factors(&self) -> usize {
        self.factor_names.len()
    }
}

/// Fails with the names of factor columns that are linear combinations of
/// the others (or constant).
pub fn check_collinearity(factors: &FactorMatrix) -> Result<()> {
    let n = factors.n_rows();
    let k = factors.n_factors();
    if n <= k {
        return Err(Error::InsufficientData { needed: k + 1, got: n });
    }
    let x = DMatrix::from_fn(n, k, |i, j| factors.values[i][j]);
    match ols(&x, &DVector::zeros(n)) {
        Err(OlsError::RankDeficient(cols)) => Err(Error::Collinearity {
            columns: cols.into_iter().map(|j| factors.names[j].clone()).collect(),
        }),
        _ => Ok(()),
    }
}

pub fn first_stage(
    returns: &ReturnPanel,
    factors: &FactorMatrix,
    cfg: &CrossSectionConfig,
) -> Result<FirstStageLoadings> {
    returns.check_shape()?;
    check_collinearity(factors)?;
    let k = factors.n_factors();
    let pairs = predictive_pairs(returns, factors);
    if pairs.len() < k + 2 {
        return Err(Error::InsufficientData {
            needed: k + 2,
            got: pairs.len(),
        });
    }
    let fc = {
        let rows: Vec<&[f64]> = pairs.iter().map(|p| p.1).collect();
        let m: Vec<f64> = (0..k).map(|j| mean(&rows.iter().map(|r| r[j]).collect::<Vec<_>>())).collect();
        let t = rows.len() as f64;
        (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| rows.iter().map(|r| (r[a] - m[a]) * (r[b] - m[b])).sum::<f64>() / (t - 1.0))
                    .collect()
            })
            .collect()
    };

    let assets: Vec<Option<AssetLoadings>> = (0..returns.n_assets())
        .into_par_iter()
        .map(|a| {
            let rows: Vec<(&[f64], f64)> = pairs
                .iter()
                .filter_map(|(p, x)| returns.get(*p, a).map(|r| (*x, r)))
                .collect();
            let name = &returns.assets[a];
            if (rows.len() as f64) < cfg.min_coverage * pairs.len() as f64 || rows.len() < k + 2 {
                log::info!("first stage: {name} excluded, {} of {} rows", rows.len(), pairs.len());
                return None;
            }
            let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i].0[j]);
            let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
            match ols(&x, &y) {
                Ok(fit) => Some(AssetLoadings {
                    asset: name.clone(),
                    alpha: fit.intercept(),
                    betas: fit.slopes().to_vec(),
                    resid_var: fit.resid_var(),
                    rows: rows.len(),
                    mean_return: y.mean(),
                }),
                Err(e) => {
                    log::warn!("first stage: {name} dropped: {e:?}");
                    None
                }
            }
        })
        .collect();
    Ok(FirstStageLoadings {
        factor_names: factors.names.clone(),
        assets: assets.into_iter().flatten().collect(),
        factor_cov: fc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPremiaEstimate {
    pub factor_names: Vec<String>,
    pub omega: f64,
    pub omega_t: f64,
    pub lambda: Vec<f64>,
    pub tstats: Vec<f64>,
    /// Unadjusted cross-sectional R².
    pub r2: f64,
    pub n_assets: usize,
}

/// Regresses mean returns on first-stage loadings.
pub fn second_stage(loadings: &FirstStageLoadings, cfg: &CrossSectionConfig) -> Result<RiskPremiaEstimate> {
    let k = loadings.n_factors();
    let n = loadings.assets.len();
    if n < k + 2 {
        return Err(Error::InsufficientData { needed: k + 2, got: n });
    }
    let b = DMatrix::from_fn(n, k, |i, j| loadings.assets[i].betas[j]);
    let rbar = DVector::from_iterator(n, loadings.assets.iter().map(|a| a.mean_return));
    let fit = ols(&b, &rbar).map_err(|e| match e {
        OlsError::RankDeficient(cols) => Error::Collinearity {
            columns: cols.into_iter().map(|j| loadings.factor_names[j].clone()).collect(),
        },
        OlsError::TooFewRows { rows, params } => Error::InsufficientData { needed: params, got: rows },
    })?;
    let s2 = fit.resid_var();
    let mut cov = &fit.cov_unscaled * s2;
    if cfg.shanken {
        let lambda = DVector::from_column_slice(fit.slopes());
        let sf = DMatrix::from_fn(k, k, |i, j| loadings.factor_cov[i][j]);
        let l = cholesky_checked(&sf).map_err(|_| Error::Rank("factor covariance is singular".into()))?;
        let c = lambda.dot(&(cholesky_inverse(&l) * &lambda));
        let t = loadings.assets.iter().map(|a| a.rows).max().unwrap_or(1) as f64;
        cov *= 1.0 + c;
        for i in 0..k {
            for j in 0..k {
                cov[(i + 1, j + 1)] += sf[(i, j)] / t;
            }
        }
    }
    let se: Vec<f64> = (0..=k).map(|j| cov[(j, j)].sqrt()).collect();
    Ok(RiskPremiaEstimate {
        factor_names: loadings.factor_names.clone(),
        omega: fit.intercept(),
        omega_t: fit.intercept() / se[0],
        lambda: fit.slopes().to_vec(),
        tstats: (0..k).map(|j| fit.coef[j + 1] / se[j + 1]).collect(),
        r2: fit.r_squared().clamp(0.0, 1.0),
        n_assets: n,
    })
}

pub fn fama_macbeth(
    returns: &ReturnPanel,
    factors: &FactorMatrix,
    cfg: &CrossSectionConfig,
) -> Result<RiskPremiaEstimate> {
    second_stage(&first_stage(returns, factors, cfg)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::ModelSpec;
    use crate::ingest::Frequency;
    use chrono::NaiveDate;

    fn dates(n: usize) -> Vec<NaiveDate> {
        (0..n)
            .map(|i| NaiveDate::from_ymd_opt(2012, 1, 2).unwrap() + chrono::Days::new(i as u64))
            .collect()
    }

    fn matrix(cols: Vec<Vec<f64>>) -> FactorMatrix {
        let n = cols[0].len();
        FactorMatrix::from_columns(
            Frequency::Daily,
            &dates(n),
            cols.into_iter()
                .enumerate()
                .map(|(j, c)| (format!("f{}", j + 1), c.into_iter().map(Some).collect()))
                .collect(),
            ModelSpec::Custom(vec![]),
        )
        .unwrap()
    }

    fn panel(n: usize, f: impl Fn(usize, usize) -> Option<f64>, n_assets: usize) -> ReturnPanel {
        ReturnPanel {
            frequency: Frequency::Daily,
            dates: dates(n),
            assets: (0..n_assets).map(|a| format!("A{a:03}")).collect(),
            values: (0..n).map(|t| (0..n_assets).map(|a| f(t, a)).collect()).collect(),
        }
    }

    fn wave(t: usize, k: usize) -> f64 {
        ((t as f64) * (0.37 + 0.21 * k as f64)).sin() + 0.1 * ((t * (k + 3)) % 7) as f64
    }

    #[test]
    fn single_factor_exact() {
        let n = 50;
        let x: Vec<f64> = (0..n).map(|t| wave(t, 0)).collect();
        let f = matrix(vec![x.clone()]);
        let p = panel(n, |t, _| (t > 0).then(|| 0.5 * x[t - 1]), 1);
        let fs = first_stage(&p, &f, &CrossSectionConfig::default()).unwrap();
        assert!((fs.assets[0].betas[0] - 0.5).abs() < 1e-12);
        assert!(fs.assets[0].alpha.abs() < 1e-12);
        assert_eq!(fs.assets[0].rows, n - 1);
    }

    #[test]
    fn multi_factor_exact() {
        let n = 64;
        let cols: Vec<Vec<f64>> = (0..3).map(|k| (0..n).map(|t| wave(t, k)).collect()).collect();
        let f = matrix(cols.clone());
        let p = panel(
            n,
            |t, _| (t > 0).then(|| (0..3).map(|j| (j + 1) as f64 * cols[j][t - 1]).sum()),
            1,
        );
        let fs = first_stage(&p, &f, &CrossSectionConfig::default()).unwrap();
        for j in 0..3 {
            assert!((fs.assets[0].betas[j] - (j + 1) as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_returns() {
        let n = 40;
        let f = matrix(vec![(0..n).map(|t| wave(t, 1)).collect()]);
        let p = panel(n, |_, _| Some(0.003), 1);
        let fs = first_stage(&p, &f, &CrossSectionConfig::default()).unwrap();
        assert!(fs.assets[0].betas[0].abs() < 1e-14);
        assert!((fs.assets[0].alpha - 0.003).abs() < 1e-15);
    }

    #[test]
    fn low_coverage_asset_excluded() {
        let n = 40;
        let f = matrix(vec![(0..n).map(|t| wave(t, 1)).collect()]);
        let p = panel(n, |t, a| (a == 0 || t % 2 == 0).then_some(0.001 * t as f64), 2);
        let fs = first_stage(&p, &f, &CrossSectionConfig::default()).unwrap();
        assert_eq!(fs.assets.len(), 1);
        assert_eq!(fs.assets[0].asset, "A000");
    }

    fn synthetic_loadings(betas: Vec<Vec<f64>>, means: Vec<f64>) -> FirstStageLoadings {
        let k = betas[0].len();
        FirstStageLoadings {
            factor_names: (0..k).map(|j| format!("f{j}")).collect(),
            assets: betas
                .into_iter()
                .zip(means)
                .enumerate()
                .map(|(i, (b, m))| AssetLoadings {
                    asset: format!("A{i}"),
                    alpha: 0.0,
                    betas: b,
                    resid_var: 0.0,
                    rows: 100,
                    mean_return: m,
                })
                .collect(),
            factor_cov: (0..k).map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect()).collect(),
        }
    }

    #[test]
    fn exact_linear_means_give_unit_r2() {
        let betas: Vec<Vec<f64>> = (0..20).map(|i| vec![wave(i, 0), wave(i, 2)]).collect();
        let means = betas.iter().map(|b| 0.1 + 0.5 * b[0] - 0.2 * b[1]).collect();
        let est = second_stage(&synthetic_loadings(betas, means), &CrossSectionConfig::default()).unwrap();
        assert!((est.r2 - 1.0).abs() < 1e-12);
        assert!((est.lambda[0] - 0.5).abs() < 1e-12);
        assert!((est.lambda[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_means_give_zero_premium() {
        // Mean returns are ±1 on a pattern orthogonal to the centered loadings.
        let betas: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0].iter().map(|&b| vec![b]).collect();
        let means = vec![1.0, -1.0, -1.0, 1.0];
        let est = second_stage(&synthetic_loadings(betas, means), &CrossSectionConfig::default()).unwrap();
        assert!(est.lambda[0].abs() < 1e-14);
        assert!(est.r2.abs() < 1e-14);
    }

    #[test]
    fn duplicated_factor_is_collinear() {
        let n = 30;
        let x: Vec<f64> = (0..n).map(|t| wave(t, 0)).collect();
        let y: Vec<f64> = (0..n).map(|t| wave(t, 1)).collect();
        let f = matrix(vec![x.clone(), y, x]);
        let p = panel(n, |t, _| Some(t as f64), 1);
        match first_stage(&p, &f, &CrossSectionConfig::default()) {
            Err(Error::Collinearity { columns }) => assert_eq!(columns, ["f1", "f3"]),
            other => panic!("expected collinearity error, got {other:?}"),
        }
    }

    #[test]
    fn rescaling_a_factor() {
        let n = 120;
        let n_assets = 12;
        let cols: Vec<Vec<f64>> = (0..2).map(|k| (0..n).map(|t| wave(t, k)).collect()).collect();
        let ret = |t: usize, a: usize| {
            (t > 0).then(|| {
                let b1 = 0.2 + 0.1 * a as f64;
                let b2 = 1.0 - 0.05 * (a * a % 5) as f64;
                0.01 * a as f64 + b1 * cols[0][t - 1] + b2 * cols[1][t - 1] + 0.01 * wave(t * a, 3)
            })
        };
        let p = panel(n, ret, n_assets);
        let cfg = CrossSectionConfig::default();
        let base = fama_macbeth(&p, &matrix(cols.clone()), &cfg).unwrap();
        let c = 4.0;
        let scaled = matrix(vec![cols[0].iter().map(|v| v * c).collect(), cols[1].clone()]);
        let s = fama_macbeth(&p, &scaled, &cfg).unwrap();
        assert!((s.lambda[0] - c * base.lambda[0]).abs() < 1e-9 * base.lambda[0].abs().max(1.0));
        assert!((s.lambda[1] - base.lambda[1]).abs() < 1e-9);
        assert!((s.r2 - base.r2).abs() < 1e-10);
    }

    #[test]
    fn tstat_grows_as_noise_shrinks() {
        let betas: Vec<Vec<f64>> = (0..30).map(|i| vec![wave(i, 0)]).collect();
        let mut last = 0.0;
        for h in 0..6 {
            let noise = 0.1 / f64::powi(2.0, h);
            let means = betas
                .iter()
                .enumerate()
                .map(|(i, b)| 0.3 * b[0] + noise * wave(i, 4))
                .collect();
            let est = second_stage(&synthetic_loadings(betas.clone(), means), &CrossSectionConfig::default())
                .unwrap();
            assert!(est.tstats[0].abs() > last);
            last = est.tstats[0].abs();
        }
    }
}
