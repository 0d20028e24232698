//! Synthetic intraday bars and priced return panels with known truth.
//!
//! Every random stream is a ChaCha8 substream keyed by the seed plus a
//! location (asset, day, or block), so output does not depend on thread count
//! or generation order.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{FactorMatrix, ModelSpec};
use crate::ingest::{BarRecord, Frequency, ReturnPanel, Session};

pub(crate) fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Reserved stream tags so panel blocks never collide with (asset, day) keys.
const FACTOR_STREAM: u64 = u64::MAX;
const BETA_STREAM: u64 = u64::MAX - 1;

/// `n` consecutive weekdays starting at or after `start`.
pub fn weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JumpSign {
    Positive,
    Negative,
    #[default]
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntradaySpec {
    pub n_assets: usize,
    pub n_days: usize,
    /// Intraday returns per day.
    pub k: usize,
    /// Daily diffusion volatility (standard deviation of the open-to-close
    /// diffusive log return).
    pub daily_vol: f64,
    /// Expected jumps per day.
    pub jump_intensity: f64,
    /// Jump magnitudes are `jump_size · |N(0, 1)|`.
    pub jump_size: f64,
    pub jump_sign: JumpSign,
    /// Extra symbol simulated alongside the assets, used as the market index.
    pub index_symbol: Option<String>,
    pub start: NaiveDate,
    pub start_price: f64,
    pub seed: u64,
}

impl Default for IntradaySpec {
    fn default() -> Self {
        IntradaySpec {
            n_assets: 10,
            n_days: 20,
            k: 78,
            daily_vol: 0.01,
            jump_intensity: 0.0,
            jump_size: 0.0,
            jump_sign: JumpSign::Symmetric,
            index_symbol: None,
            start: NaiveDate::from_ymd_opt(2012, 1, 3).unwrap(),
            start_price: 100.0,
            seed: 1,
        }
    }
}

impl IntradaySpec {
    pub fn validate(&self) -> Result<()> {
        let scales = [self.daily_vol, self.jump_intensity, self.jump_size, self.start_price];
        if scales.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.start_price == 0.0 {
            return Err(Error::Config("simulation scales must be finite and non-negative".into()));
        }
        if self.k < 2 {
            return Err(Error::Config("need at least 2 intraday returns".into()));
        }
        Ok(())
    }

    pub fn symbols(&self) -> Vec<String> {
        let mut s: Vec<String> = (0..self.n_assets).map(|i| format!("S{i:04}")).collect();
        if let Some(ix) = &self.index_symbol {
            s.push(ix.clone());
        }
        s
    }

    /// Session matching `k` five-minute returns from 9:30.
    pub fn session(&self) -> Session {
        let open = chrono::NaiveTime::from_hms_opt(9, 30, 0).unwrap();
        Session {
            open,
            close: open + chrono::TimeDelta::minutes(5 * self.k as i64),
            slots: self.k,
            ..Session::default()
        }
    }
}

/// One asset-day of intraday log returns.
pub fn simulate_day_returns(spec: &IntradaySpec, asset: usize, day: usize) -> Vec<f64> {
    let mut rng = substream(spec.seed, ((asset as u64) << 32) | day as u64);
    let sd = spec.daily_vol / (spec.k as f64).sqrt();
    let mut r: Vec<f64> = (0..spec.k)
        .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    if spec.jump_intensity > 0.0 && spec.jump_size > 0.0 {
        let n = Poisson::new(spec.jump_intensity).expect("positive intensity").sample(&mut rng) as usize;
        for _ in 0..n {
            let slot = rng.random_range(0..spec.k);
            let mag = spec.jump_size * Distribution::<f64>::sample(&StandardNormal, &mut rng).abs();
            let sign = match spec.jump_sign {
                JumpSign::Positive => 1.0,
                JumpSign::Negative => -1.0,
                JumpSign::Symmetric => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            r[slot] += sign * mag;
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedBars {
    pub dates: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    /// Sorted by symbol then timestamp; `k + 1` bars per asset-day.
    pub bars: Vec<BarRecord>,
}

/// Bars on the grid boundaries; each day opens at the previous close.
pub fn simulate_intraday(spec: &IntradaySpec) -> Result<SimulatedBars> {
    spec.validate()?;
    let dates = weekdays(spec.start, spec.n_days);
    let symbols = spec.symbols();
    let session = spec.session();
    let per_symbol: Vec<Vec<BarRecord>> = symbols
        .par_iter()
        .enumerate()
        .map(|(a, sym)| {
            let mut out = Vec::with_capacity(dates.len() * (spec.k + 1));
            let mut log_p = 0.0_f64;
            for (d, date) in dates.iter().enumerate() {
                let r = simulate_day_returns(spec, a, d);
                let times = session.boundaries(*date);
                out.push(BarRecord {
                    timestamp: times[0],
                    symbol: sym.clone(),
                    price: spec.start_price * log_p.exp(),
                });
                for (j, rj) in r.iter().enumerate() {
                    log_p += rj;
                    out.push(BarRecord {
                        timestamp: times[j + 1],
                        symbol: sym.clone(),
                        price: spec.start_price * log_p.exp(),
                    });
                }
            }
            out
        })
        .collect();
    Ok(SimulatedBars {
        dates,
        symbols,
        bars: per_symbol.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSpec {
    pub n_assets: usize,
    pub n_periods: usize,
    pub factor_names: Vec<String>,
    pub factor_sd: f64,
    pub beta_mean: f64,
    pub beta_sd: f64,
    /// Constant premia, one per factor.
    pub premia: Vec<f64>,
    /// Optional per-period premia (`n_periods × K`), overriding `premia`.
    pub premia_path: Option<Vec<Vec<f64>>>,
    pub omega: f64,
    pub noise_sd: f64,
    /// Subtract the sample mean of each factor so average returns equal
    /// `ω + β'λ` up to noise.
    pub center_factors: bool,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for PanelSpec {
    fn default() -> Self {
        PanelSpec {
            n_assets: 100,
            n_periods: 2000,
            factor_names: vec!["f1".into(), "f2".into()],
            factor_sd: 1.0,
            beta_mean: 0.0,
            beta_sd: 1.0,
            premia: vec![0.5, -0.2],
            premia_path: None,
            omega: 0.0,
            noise_sd: 0.5,
            center_factors: true,
            start: NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelTruth {
    pub spec: PanelSpec,
    pub assets: Vec<String>,
    /// `betas[i][j]`.
    pub betas: Vec<Vec<f64>>,
    /// Premium applied at each factor period.
    pub premia_path: Vec<Vec<f64>>,
    pub factor_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub returns: ReturnPanel,
    pub factors: FactorMatrix,
    pub truth: PanelTruth,
}

/// `r_{t+1,i} = ω + Σ_j β_{i,j}(λ_{t,j} + x_{t,j} − x̄_j) + e_{t+1,i}`; the
/// first return period is missing since it has no lagged factor.
pub fn simulate_priced_panel(spec: &PanelSpec) -> Result<SimulatedPanel> {
    let k = spec.factor_names.len();
    let t = spec.n_periods;
    if k == 0 || t < 2 || spec.n_assets == 0 {
        return Err(Error::Config("panel needs factors, assets and at least 2 periods".into()));
    }
    if [spec.factor_sd, spec.beta_sd, spec.noise_sd].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Config("panel scales must be non-negative".into()));
    }
    let path: Vec<Vec<f64>> = match &spec.premia_path {
        Some(p) if p.len() == t && p.iter().all(|r| r.len() == k) => p.clone(),
        Some(_) => return Err(Error::Config("premia path must be n_periods × K".into())),
        None if spec.premia.len() == k => vec![spec.premia.clone(); t],
        None => return Err(Error::Config("one premium per factor required".into())),
    };
    let dates = weekdays(spec.start, t);
    let mut frng = substream(spec.seed, FACTOR_STREAM);
    let fdist = Normal::new(0.0, spec.factor_sd).expect("valid sd");
    let x: Vec<Vec<f64>> = (0..t).map(|_| (0..k).map(|_| fdist.sample(&mut frng)).collect()).collect();
    let mut brng = substream(spec.seed, BETA_STREAM);
    let bdist = Normal::new(spec.beta_mean, spec.beta_sd).expect("valid sd");
    let betas: Vec<Vec<f64>> = (0..spec.n_assets)
        .map(|_| (0..k).map(|_| bdist.sample(&mut brng)).collect())
        .collect();
    let factor_means: Vec<f64> = if spec.center_factors {
        (0..k)
            .map(|j| x[..t - 1].iter().map(|r| r[j]).sum::<f64>() / (t - 1) as f64)
            .collect()
    } else {
        vec![0.0; k]
    };
    let edist = Normal::new(0.0, spec.noise_sd).expect("valid sd");
    let columns: Vec<Vec<Option<f64>>> = (0..spec.n_assets)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(spec.seed, i as u64);
            std::iter::once(None)
                .chain((1..t).map(|p| {
                    let s = p - 1;
                    let sys: f64 = (0..k)
                        .map(|j| betas[i][j] * (path[s][j] + x[s][j] - factor_means[j]))
                        .sum();
                    Some(spec.omega + sys + edist.sample(&mut rng))
                }))
                .collect()
        })
        .collect();
    let assets: Vec<String> = (0..spec.n_assets).map(|i| format!("A{i:04}")).collect();
    let returns = ReturnPanel {
        frequency: Frequency::Daily,
        dates: dates.clone(),
        assets: assets.clone(),
        values: (0..t).map(|p| columns.iter().map(|c| c[p]).collect()).collect(),
    };
    let factors = FactorMatrix::from_columns(
        Frequency::Daily,
        &dates,
        spec.factor_names
            .iter()
            .enumerate()
            .map(|(j, n)| (n.clone(), x.iter().map(|r| Some(r[j])).collect()))
            .collect(),
        ModelSpec::Custom(spec.factor_names.clone()),
    )?;
    Ok(SimulatedPanel {
        returns,
        factors,
        truth: PanelTruth {
            spec: spec.clone(),
            assets,
            betas,
            premia_path: path,
            factor_means,
        },
    })
}
