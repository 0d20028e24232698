//! Rolling-exposure quantile portfolio sorts.
//!
//! Each roll estimates per-asset loadings on one factor group over a trailing
//! window, sorts assets into equal-weighted quantile portfolios on the loading
//! of one variable, and records the mean daily portfolio return over the
//! following holding period. The window then moves forward by `step` periods.

use std::collections::HashMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{FactorGroup, FactorMatrix};
use crate::ingest::ReturnPanel;
use crate::linalg::{mean, mean_std_error, ols, OlsError};

/// Which return the window regressions put on the left-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReturnTiming {
    /// `r_{t+1}` on `x_t`.
    #[default]
    Predictive,
    /// `r_t` on `x_t`.
    Contemporaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortConfig {
    /// Estimation window in periods (63 ≈ 3 months of trading days).
    pub window_len: usize,
    pub n_quantiles: usize,
    /// Post-ranking periods averaged per roll.
    pub holding: usize,
    pub step: usize,
    /// Regressor group for loadings; inferred from the sort variable if unset.
    pub group: Option<FactorGroup>,
    pub timing: ReturnTiming,
    /// Minimum share of non-missing returns an asset needs inside a window.
    pub min_coverage: f64,
    /// Newey-West lags for the t-statistics; 0 gives plain `mean / se`.
    pub hac_lags: usize,
}

impl Default for SortConfig {
    fn default() -> Self {
        SortConfig {
            window_len: 63,
            n_quantiles: 5,
            holding: 5,
            step: 5,
            group: None,
            timing: ReturnTiming::Predictive,
            min_coverage: 0.8,
            hac_lags: 0,
        }
    }
}

impl SortConfig {
    pub fn validate(&self, n_regressors: usize) -> Result<()> {
        if self.n_quantiles < 2 {
            return Err(Error::Config("need at least 2 quantiles".into()));
        }
        if self.window_len <= n_regressors + 2 {
            return Err(Error::Config(format!(
                "window of {} periods is too short for {n_regressors} regressors",
                self.window_len
            )));
        }
        if self.holding == 0 || self.step == 0 {
            return Err(Error::Config("holding and step must be positive".into()));
        }
        Ok(())
    }
}

/// Returns and factors on the return panel's calendar.
#[derive(Debug, Clone)]
pub struct SortData<'a> {
    pub returns: &'a ReturnPanel,
    /// Factor row for each return period, if the factor matrix has one.
    pub factor_rows: Vec<Option<&'a [f64]>>,
    pub factor_names: &'a [String],
}

impl<'a> SortData<'a> {
    pub fn new(returns: &'a ReturnPanel, factors: &'a FactorMatrix) -> Self {
        let index = factors.date_index();
        let factor_rows = returns
            .dates
            .iter()
            .map(|d| index.get(d).map(|&i| factors.values[i].as_slice()))
            .collect();
        SortData {
            returns,
            factor_rows,
            factor_names: &factors.names,
        }
    }

    pub fn n_periods(&self) -> usize {
        self.returns.n_periods()
    }

    fn columns(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.factor_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::Config(format!("factor `{n}` not available for sorting")))
            })
            .collect()
    }
}

/// Per-asset slope vectors from window regressions of returns on the factor
/// columns `cols` (intercept included). `None` for assets with too little data
/// or a rank-deficient design.
pub fn estimate_exposures(
    data: &SortData<'_>,
    window: Range<usize>,
    cols: &[usize],
    timing: ReturnTiming,
    min_coverage: f64,
) -> Vec<Option<Vec<f64>>> {
    let lead = match timing {
        ReturnTiming::Predictive => 1,
        ReturnTiming::Contemporaneous => 0,
    };
    // Observation t pairs x_t with r_{t+lead}; both must sit in the window.
    let obs: Vec<(usize, &[f64])> = (window.start..window.end.saturating_sub(lead))
        .filter_map(|t| data.factor_rows[t].map(|row| (t, row)))
        .collect();
    let k = cols.len();
    (0..data.returns.n_assets())
        .map(|a| {
            let rows: Vec<(&[f64], f64)> = obs
                .iter()
                .filter_map(|(t, x)| data.returns.get(t + lead, a).map(|r| (*x, r)))
                .collect();
            if obs.is_empty()
                || (rows.len() as f64) < min_coverage * obs.len() as f64
                || rows.len() < k + 2
            {
                return None;
            }
            let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i].0[cols[j]]);
            let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
            match ols(&x, &y) {
                Ok(fit) => Some(fit.slopes().to_vec()),
                Err(OlsError::RankDeficient(bad)) => {
                    log::debug!(
                        "asset {} window {:?}: rank-deficient columns {bad:?}",
                        data.returns.assets[a],
                        window
                    );
                    None
                }
                Err(OlsError::TooFewRows { .. }) => None,
            }
        })
        .collect()
}

/// Assigns each asset with a loading to one of `n` portfolios (0 = lowest).
///
/// Assets are ranked by loading, ties by identifier. With `N = q n + r`
/// assets, the first `r` portfolios hold `q + 1` assets and the rest `q`.
pub fn form_quantile_portfolios(
    loadings: &[Option<f64>],
    ids: &[String],
    n: usize,
) -> Result<Vec<Option<usize>>> {
    let mut ranked: Vec<(usize, f64)> = loadings
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.filter(|v| v.is_finite()).map(|v| (i, v)))
        .collect();
    if n < 2 || ranked.len() < n {
        return Err(Error::Sort(format!(
            "{} assets with loadings cannot fill {n} portfolios",
            ranked.len()
        )));
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| ids[a.0].cmp(&ids[b.0])));
    let base = ranked.len() / n;
    let extra = ranked.len() % n;
    let mut out = vec![None; loadings.len()];
    let mut pos = 0;
    for p in 0..n {
        let size = base + usize::from(p < extra);
        for &(i, _) in &ranked[pos..pos + size] {
            out[i] = Some(p);
        }
        pos += size;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortReport {
    pub sort_variable: String,
    /// Time-series mean of post-ranking returns per portfolio, in bps.
    pub means_bps: Vec<f64>,
    pub tstats: Vec<f64>,
    pub high_low_bps: f64,
    pub high_low_t: f64,
    pub n_windows: usize,
}

/// Per-roll post-ranking return of each portfolio.
fn holding_returns(
    data: &SortData<'_>,
    holding: Range<usize>,
    assignment: &[Option<usize>],
    n: usize,
) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for p in 0..n {
        let members: Vec<usize> = (0..assignment.len())
            .filter(|&a| assignment[a] == Some(p))
            .collect();
        let daily: Vec<f64> = holding
            .clone()
            .filter_map(|t| {
                let rs: Vec<f64> = members.iter().filter_map(|&a| data.returns.get(t, a)).collect();
                (!rs.is_empty()).then(|| mean(&rs))
            })
            .collect();
        if daily.is_empty() {
            return None;
        }
        out.push(mean(&daily));
    }
    Some(out)
}

fn windows(cfg: &SortConfig, n_periods: usize) -> Vec<usize> {
    (0..)
        .map(|i| i * cfg.step)
        .take_while(|s| s + cfg.window_len + cfg.holding <= n_periods)
        .collect()
}

/// Sorts on each variable in `variables`, sharing window regressions among
/// variables of the same group.
pub fn run_sorts(
    returns: &ReturnPanel,
    factors: &FactorMatrix,
    cfg: &SortConfig,
    variables: &[String],
) -> Result<Vec<SortReport>> {
    let data = SortData::new(returns, factors);
    if data.n_periods() < cfg.window_len + cfg.holding {
        return Err(Error::InsufficientData {
            needed: cfg.window_len + cfg.holding,
            got: data.n_periods(),
        });
    }

    // Group each variable with the regression that supplies its loading.
    let mut groups: Vec<(Vec<usize>, Vec<(usize, usize)>)> = Vec::new();
    let mut group_key: HashMap<Vec<usize>, usize> = HashMap::new();
    for (v, var) in variables.iter().enumerate() {
        let names = match cfg.group.or_else(|| FactorGroup::of(var)) {
            Some(g) => g.names(),
            None => vec![var.clone()],
        };
        let cols = data.columns(&names)?;
        let pos = names
            .iter()
            .position(|n| n == var)
            .ok_or_else(|| Error::Config(format!("`{var}` is not in its regressor group")))?;
        cfg.validate(cols.len())?;
        let g = *group_key.entry(cols.clone()).or_insert_with(|| {
            groups.push((cols, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push((v, pos));
    }

    let starts = windows(cfg, data.n_periods());
    let n = cfg.n_quantiles;
    // roll → variable → portfolio returns
    let per_roll: Vec<Vec<Option<Vec<f64>>>> = starts
        .par_iter()
        .map(|&s| {
            let est = s..s + cfg.window_len;
            let hold = est.end..est.end + cfg.holding;
            let mut out = vec![None; variables.len()];
            for (cols, members) in &groups {
                let loadings =
                    estimate_exposures(&data, est.clone(), cols, cfg.timing, cfg.min_coverage);
                for &(v, pos) in members {
                    let l: Vec<Option<f64>> =
                        loadings.iter().map(|b| b.as_ref().map(|b| b[pos])).collect();
                    match form_quantile_portfolios(&l, &returns.assets, n) {
                        Ok(assign) => out[v] = holding_returns(&data, hold.clone(), &assign, n),
                        Err(e) => log::warn!("roll at period {s}: {e}"),
                    }
                }
            }
            out
        })
        .collect();

    variables
        .iter()
        .enumerate()
        .map(|(v, var)| {
            let rolls: Vec<&Vec<f64>> = per_roll.iter().filter_map(|r| r[v].as_ref()).collect();
            if rolls.len() < 2 {
                return Err(Error::Sort(format!(
                    "`{var}`: only {} usable rolls",
                    rolls.len()
                )));
            }
            let series = |p: usize| -> Vec<f64> { rolls.iter().map(|r| r[p]).collect() };
            let mut means_bps = Vec::with_capacity(n);
            let mut tstats = Vec::with_capacity(n);
            for p in 0..n {
                let s = series(p);
                let m = mean(&s);
                means_bps.push(m * 1e4);
                tstats.push(m / mean_std_error(&s, cfg.hac_lags));
            }
            let hl: Vec<f64> = rolls.iter().map(|r| r[n - 1] - r[0]).collect();
            let hl_mean = mean(&hl);
            Ok(SortReport {
                sort_variable: var.clone(),
                means_bps,
                tstats,
                high_low_bps: hl_mean * 1e4,
                high_low_t: hl_mean / mean_std_error(&hl, cfg.hac_lags),
                n_windows: rolls.len(),
            })
        })
        .collect()
}

pub fn run_sort(
    returns: &ReturnPanel,
    factors: &FactorMatrix,
    cfg: &SortConfig,
    sort_variable: &str,
) -> Result<SortReport> {
    Ok(run_sorts(returns, factors, cfg, &[sort_variable.to_string()])?.remove(0))
}
