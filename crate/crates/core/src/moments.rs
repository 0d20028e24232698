//! Realized variance, volatility, skewness and kurtosis from intraday returns,
//! and their weekly aggregates.

use std::collections::BTreeMap;

use chrono::{NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{week_anchors, Frequency, IntradayGrid};

/// Sum of squared intraday returns.
pub fn realized_variance(returns: &[f64]) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: returns.len(),
        });
    }
    Ok(returns.iter().map(|r| r * r).sum())
}

/// `sqrt(K) Σ r³ / RDV^{3/2}` with `K` the number of intraday returns.
pub fn realized_skewness(returns: &[f64]) -> Result<f64> {
    let rdv = realized_variance(returns)?;
    if rdv <= 0.0 {
        return Err(Error::UndefinedMoment);
    }
    let k = returns.len() as f64;
    let cubes: f64 = returns.iter().map(|r| r * r * r).sum();
    Ok(k.sqrt() * cubes / (rdv * rdv.sqrt()))
}

/// `K Σ r⁴ / RDV²`.
pub fn realized_kurtosis(returns: &[f64]) -> Result<f64> {
    let rdv = realized_variance(returns)?;
    if rdv <= 0.0 {
        return Err(Error::UndefinedMoment);
    }
    let k = returns.len() as f64;
    let quarts: f64 = returns.iter().map(|r| (r * r) * (r * r)).sum();
    Ok(k * quarts / (rdv * rdv))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyMoments {
    pub symbol: String,
    pub date: NaiveDate,
    pub rdv: f64,
    pub rdvol: f64,
    /// `None` on zero-variance days.
    pub rds: Option<f64>,
    pub rdk: Option<f64>,
}

impl DailyMoments {
    pub fn from_grid(grid: &IntradayGrid) -> Result<Self> {
        let rdv = realized_variance(&grid.returns)?;
        let defined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMoment) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(DailyMoments {
            symbol: grid.symbol.clone(),
            date: grid.date,
            rdv,
            rdvol: rdv.sqrt(),
            rds: defined(realized_skewness(&grid.returns))?,
            rdk: defined(realized_kurtosis(&grid.returns))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Vol,
    Skew,
    Kurt,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Vol, Measure::Skew, Measure::Kurt];

    /// Short factor-name stem: `rvol`, `rs`, `rk`.
    pub fn stem(self) -> &'static str {
        match self {
            Measure::Vol => "rvol",
            Measure::Skew => "rs",
            Measure::Kurt => "rk",
        }
    }
}

/// One measure triple over time, e.g. the market index's own moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MomentSeries {
    pub vol: Vec<Option<f64>>,
    pub skew: Vec<Option<f64>>,
    pub kurt: Vec<Option<f64>>,
}

impl MomentSeries {
    pub fn get(&self, m: Measure) -> &Vec<Option<f64>> {
        match m {
            Measure::Vol => &self.vol,
            Measure::Skew => &self.skew,
            Measure::Kurt => &self.kurt,
        }
    }

    fn get_mut(&mut self, m: Measure) -> &mut Vec<Option<f64>> {
        match m {
            Measure::Vol => &mut self.vol,
            Measure::Skew => &mut self.skew,
            Measure::Kurt => &mut self.kurt,
        }
    }
}

/// Date-indexed realized moments for the asset cross-section plus the market
/// index. Matrices are period × asset.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPanel {
    pub frequency: Frequency,
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub vol: Vec<Vec<Option<f64>>>,
    pub skew: Vec<Vec<Option<f64>>>,
    pub kurt: Vec<Vec<Option<f64>>>,
    pub market: MomentSeries,
}

impl MomentPanel {
    pub fn matrix(&self, m: Measure) -> &Vec<Vec<Option<f64>>> {
        match m {
            Measure::Vol => &self.vol,
            Measure::Skew => &self.skew,
            Measure::Kurt => &self.kurt,
        }
    }

    pub fn n_periods(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn asset_column(&self, m: Measure, asset: usize) -> Vec<Option<f64>> {
        self.matrix(m).iter().map(|row| row[asset]).collect()
    }

    /// Assembles a daily panel. Rows for `index_symbol` become the market
    /// series; every other symbol is an asset column.
    pub fn from_daily(moments: &[DailyMoments], index_symbol: &str) -> Result<Self> {
        if moments.is_empty() {
            return Err(Error::NoData("no daily moments".into()));
        }
        let mut dates = std::collections::BTreeSet::new();
        let mut assets = std::collections::BTreeSet::new();
        let mut by_key: BTreeMap<(&str, NaiveDate), &DailyMoments> = BTreeMap::new();
        for m in moments {
            dates.insert(m.date);
            if m.symbol != index_symbol {
                assets.insert(m.symbol.clone());
            }
            by_key.insert((m.symbol.as_str(), m.date), m);
        }
        let dates: Vec<NaiveDate> = dates.into_iter().collect();
        let assets: Vec<String> = assets.into_iter().collect();
        let cell = |sym: &str, d: NaiveDate, m: Measure| -> Option<f64> {
            by_key.get(&(sym, d)).and_then(|dm| match m {
                Measure::Vol => Some(dm.rdvol),
                Measure::Skew => dm.rds,
                Measure::Kurt => dm.rdk,
            })
        };
        let matrix = |m: Measure| -> Vec<Vec<Option<f64>>> {
            dates
                .iter()
                .map(|d| assets.iter().map(|a| cell(a, *d, m)).collect())
                .collect()
        };
        let series = |m: Measure| -> Vec<Option<f64>> {
            dates.iter().map(|d| cell(index_symbol, *d, m)).collect()
        };
        Ok(MomentPanel {
            frequency: Frequency::Daily,
            vol: matrix(Measure::Vol),
            skew: matrix(Measure::Skew),
            kurt: matrix(Measure::Kurt),
            market: MomentSeries {
                vol: series(Measure::Vol),
                skew: series(Measure::Skew),
                kurt: series(Measure::Kurt),
            },
            dates,
            assets,
        })
    }
}

/// Placement of the `252/5` annualization constant in weekly volatility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Annualization {
    /// `sqrt(252/5 · Σ RDV)`.
    InsideSqrt,
    /// `252/5 · sqrt(Σ RDV)`.
    #[default]
    OutsideSqrt,
    /// `sqrt(Σ RDV)`.
    None,
}

impl Annualization {
    pub fn apply(self, summed_variance: f64) -> f64 {
        const FACTOR: f64 = 252.0 / 5.0;
        match self {
            Annualization::InsideSqrt => (FACTOR * summed_variance).sqrt(),
            Annualization::OutsideSqrt => FACTOR * summed_variance.sqrt(),
            Annualization::None => summed_variance.sqrt(),
        }
    }
}

/// Weekly volatility from one asset's five daily volatilities, or `None` if a
/// day is missing.
fn weekly_vol(days: &[Option<f64>], annualization: Annualization) -> Option<f64> {
    let var = days
        .iter()
        .try_fold(0.0, |acc, v| v.map(|vol| acc + vol * vol))?;
    Some(annualization.apply(var))
}

/// Mean over the defined days of a week. `present` says whether the asset had
/// data on each day; a missing day voids the week, an undefined moment on a
/// zero-variance day is skipped.
fn weekly_mean(days: &[Option<f64>], present: &[bool]) -> Option<f64> {
    if present.iter().any(|p| !p) {
        return None;
    }
    let defined: Vec<f64> = days.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Aggregates a daily panel to weeks labeled by `anchor` (see
/// [`week_anchors`]).
pub fn weekly_aggregate(
    daily: &MomentPanel,
    anchor: Weekday,
    annualization: Annualization,
) -> MomentPanel {
    let anchors = week_anchors(&daily.dates, anchor);
    let week = |t: usize| t - 4..=t;

    let aggregate = |vol: &dyn Fn(usize) -> Option<f64>,
                     other: &dyn Fn(Measure, usize) -> Option<f64>,
                     t: usize,
                     m: Measure|
     -> Option<f64> {
        let vols: Vec<Option<f64>> = week(t).map(vol).collect();
        match m {
            Measure::Vol => weekly_vol(&vols, annualization),
            _ => {
                let present: Vec<bool> = vols.iter().map(Option::is_some).collect();
                let vals: Vec<Option<f64>> = week(t).map(|s| other(m, s)).collect();
                weekly_mean(&vals, &present)
            }
        }
    };

    let matrix = |m: Measure| -> Vec<Vec<Option<f64>>> {
        anchors
            .iter()
            .map(|&t| {
                (0..daily.n_assets())
                    .map(|a| {
                        aggregate(
                            &|s| daily.vol[s][a],
                            &|mm, s| daily.matrix(mm)[s][a],
                            t,
                            m,
                        )
                    })
                    .collect()
            })
            .collect()
    };
    let mut market = MomentSeries::default();
    for m in Measure::ALL {
        *market.get_mut(m) = anchors
            .iter()
            .map(|&t| {
                aggregate(
                    &|s| daily.market.vol[s],
                    &|mm, s| daily.market.get(mm)[s],
                    t,
                    m,
                )
            })
            .collect();
    }

    MomentPanel {
        frequency: Frequency::Weekly,
        dates: anchors.iter().map(|&t| daily.dates[t]).collect(),
        assets: daily.assets.clone(),
        vol: matrix(Measure::Vol),
        skew: matrix(Measure::Skew),
        kurt: matrix(Measure::Kurt),
        market,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_jump(r: f64) -> Vec<f64> {
        let mut v = vec![0.0; 78];
        v[0] = r;
        v
    }

    #[test]
    fn variance_examples() {
        assert_eq!(realized_variance(&[0.0; 78]).unwrap(), 0.0);
        assert!((realized_variance(&[0.001; 78]).unwrap() - 7.8e-5).abs() < 1e-18);
        assert!((realized_variance(&single_jump(0.01)).unwrap() - 1e-4).abs() < 1e-18);
        assert!(matches!(
            realized_variance(&[0.1]),
            Err(Error::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn zero_variance_leaves_higher_moments_undefined() {
        assert!(matches!(
            realized_skewness(&[0.0; 78]),
            Err(Error::UndefinedMoment)
        ));
        assert!(matches!(
            realized_kurtosis(&[0.0; 78]),
            Err(Error::UndefinedMoment)
        ));
        let g = IntradayGrid::from_returns("A", NaiveDate::MIN, vec![0.0; 78]);
        let d = DailyMoments::from_grid(&g).unwrap();
        assert_eq!((d.rdv, d.rds, d.rdk), (0.0, None, None));
    }

    #[test]
    fn symmetric_pair() {
        let mut v = vec![0.0; 78];
        v[3] = 0.01;
        v[40] = -0.01;
        assert_eq!(realized_skewness(&v).unwrap(), 0.0);
        assert!((realized_kurtosis(&v).unwrap() - 39.0).abs() < 1e-12);
    }

    #[test]
    fn weekly_examples() {
        let dates: Vec<NaiveDate> = [10, 11, 12, 13, 16]
            .iter()
            .map(|d| NaiveDate::from_ymd_opt(2015, 3, *d).unwrap())
            .collect();
        let vol = vec![Some(0.0004f64.sqrt()); 5];
        let panel = MomentPanel {
            frequency: Frequency::Daily,
            dates,
            assets: vec!["A".into()],
            vol: vol.iter().map(|v| vec![*v]).collect(),
            skew: (0..5).map(|_| vec![Some(1.0)]).collect(),
            kurt: (1..=5).map(|k| vec![Some(k as f64)]).collect(),
            market: MomentSeries {
                vol: vol.clone(),
                skew: vec![Some(1.0); 5],
                kurt: vec![Some(2.0); 5],
            },
        };
        let w = weekly_aggregate(&panel, Weekday::Mon, Annualization::OutsideSqrt);
        assert_eq!(w.n_periods(), 1);
        let rvol = w.vol[0][0].unwrap();
        assert!((rvol - 50.4 * 0.002f64.sqrt()).abs() < 1e-12);
        assert_eq!((rvol * 1e4).round() / 1e4, 2.2540);
        assert_eq!(w.skew[0][0], Some(1.0));
        assert_eq!(w.kurt[0][0], Some(3.0));
        assert_eq!(w.market.kurt[0], Some(2.0));

        let inside = weekly_aggregate(&panel, Weekday::Mon, Annualization::InsideSqrt);
        assert!((inside.vol[0][0].unwrap() - (50.4 * 0.002f64).sqrt()).abs() < 1e-12);
        let none = weekly_aggregate(&panel, Weekday::Mon, Annualization::None);
        assert!((none.vol[0][0].unwrap() - 0.002f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn weekly_skips_undefined_but_voids_missing() {
        let dates: Vec<NaiveDate> = [10, 11, 12, 13, 16]
            .iter()
            .map(|d| NaiveDate::from_ymd_opt(2015, 3, *d).unwrap())
            .collect();
        let panel = MomentPanel {
            frequency: Frequency::Daily,
            dates,
            assets: vec!["A".into(), "B".into()],
            vol: vec![
                vec![Some(0.01), Some(0.01)],
                vec![Some(0.0), None],
                vec![Some(0.01), Some(0.01)],
                vec![Some(0.01), Some(0.01)],
                vec![Some(0.01), Some(0.01)],
            ],
            skew: vec![
                vec![Some(1.0), Some(1.0)],
                vec![None, None],
                vec![Some(2.0), Some(1.0)],
                vec![Some(3.0), Some(1.0)],
                vec![Some(4.0), Some(1.0)],
            ],
            kurt: vec![vec![Some(3.0), Some(3.0)]; 5],
            market: MomentSeries {
                vol: vec![Some(0.01); 5],
                skew: vec![Some(0.0); 5],
                kurt: vec![Some(3.0); 5],
            },
        };
        let w = weekly_aggregate(&panel, Weekday::Mon, Annualization::None);
        assert_eq!(w.skew[0][0], Some(2.5));
        assert_eq!(w.skew[0][1], None);
        assert_eq!(w.vol[0][1], None);
    }

    proptest! {
        #[test]
        fn scale_invariance(
            rs in proptest::collection::vec(-0.05f64..0.05, 2..120),
            c in 0.01f64..100.0,
        ) {
            let rdv = realized_variance(&rs).unwrap();
            prop_assume!(rdv > 1e-12);
            let scaled: Vec<f64> = rs.iter().map(|r| r * c).collect();
            let rdv_c = realized_variance(&scaled).unwrap();
            prop_assert!((rdv_c - c * c * rdv).abs() <= 1e-12 * c * c * rdv);
            let s = realized_skewness(&rs).unwrap();
            prop_assert!((realized_skewness(&scaled).unwrap() - s).abs() <= 1e-9 * (1.0 + s.abs()));
            let k = realized_kurtosis(&rs).unwrap();
            prop_assert!((realized_kurtosis(&scaled).unwrap() - k).abs() <= 1e-9 * k);
        }

        #[test]
        fn kurtosis_at_least_one(rs in proptest::collection::vec(-0.05f64..0.05, 2..120)) {
            prop_assume!(realized_variance(&rs).unwrap() > 1e-12);
            prop_assert!(realized_kurtosis(&rs).unwrap() >= 1.0 - 1e-12);
        }

        #[test]
        fn jump_sign_drives_skew_sign(
            base in proptest::collection::vec(-0.001f64..0.001, 78),
            jump in 0.05f64..0.2,
            idx in 0usize..78,
        ) {
            let mut up = base.clone();
            up[idx] = jump;
            let mut down = base;
            down[idx] = -jump;
            prop_assert!(realized_skewness(&up).unwrap() > 0.0);
            prop_assert!(realized_skewness(&down).unwrap() < 0.0);
        }
    }

    #[test]
    fn kurtosis_equals_one_iff_constant_magnitude() {
        let v: Vec<f64> = (0..78).map(|i| if i % 3 == 0 { -0.002 } else { 0.002 }).collect();
        assert!((realized_kurtosis(&v).unwrap() - 1.0).abs() < 1e-12);
        let mut w = v.clone();
        w[5] = 0.0021;
        assert!(realized_kurtosis(&w).unwrap() > 1.0);
    }
}
