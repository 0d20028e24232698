//! Causal short-run / long-run split of a time series.
//!
//! The long-run component at `t` is the trailing mean of the last `2^J`
//! observations (an expanding mean while fewer are available); the short-run
//! component is the residual. Both depend only on observations up to `t`, and
//! they add back to the input.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::Frequency;
use crate::moments::{Measure, MomentPanel};

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonComponents {
    pub scale: u32,
    pub short: Vec<f64>,
    pub long: Vec<f64>,
    /// Leading periods whose long-run value used fewer than `2^J` points.
    pub warmup_len: usize,
}

/// Window width `2^J` for scale `J`.
pub fn window(scale: u32) -> Result<usize> {
    if scale == 0 || scale > 30 {
        return Err(Error::Config(format!("scale J must be in 1..=30, got {scale}")));
    }
    Ok(1usize << scale)
}

/// Running sum with compensation, supporting removal.
#[derive(Default, Clone, Copy)]
struct RollingSum {
    sum: f64,
    comp: f64,
}

impl RollingSum {
    fn add(&mut self, x: f64) {
        let (t, err) = two_sum(self.sum, x);
        self.comp += err;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Trailing mean over the defined values among the last `width` positions.
/// Output is `None` wherever the input is.
fn trailing_mean(series: &[Option<f64>], width: usize) -> Vec<Option<f64>> {
    let mut acc = RollingSum::default();
    let mut count = 0usize;
    let mut out = Vec::with_capacity(series.len());
    for t in 0..series.len() {
        if let Some(x) = series[t] {
            acc.add(x);
            count += 1;
        }
        if t >= width {
            if let Some(old) = series[t - width] {
                acc.add(-old);
                count -= 1;
            }
        }
        out.push(match series[t] {
            Some(_) if count > 0 => Some(acc.value() / count as f64),
            _ => None,
        });
    }
    out
}

pub fn decompose(series: &[f64], scale: u32) -> Result<HorizonComponents> {
    if series.is_empty() {
        return Err(Error::NoData("empty series".into()));
    }
    let width = window(scale)?;
    let n = series.len();
    let mut long = Vec::with_capacity(n);
    let mut acc = RollingSum::default();
    let warm = n.min(width);
    for (t, &x) in series[..warm].iter().enumerate() {
        acc.add(x);
        long.push(acc.value() / (t + 1) as f64);
    }
    // Full windows: add the exact pair `x - old` as one increment plus its
    // rounding error; dividing by a power of two is exact as a product.
    let inv = 1.0 / width as f64;
    for (&x, &old) in series[warm..].iter().zip(series) {
        let (d, err) = two_sum(x, -old);
        acc.add(d);
        acc.comp += err;
        long.push(acc.value() * inv);
    }
    let short = series.iter().zip(&long).map(|(x, l)| x - l).collect();
    Ok(HorizonComponents {
        scale,
        short,
        long,
        warmup_len: n.min(width - 1),
    })
}

/// `a + b` and its exact rounding error.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Components of a series with gaps; missing inputs stay missing.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedComponents {
    pub short: Vec<Option<f64>>,
    pub long: Vec<Option<f64>>,
}

pub fn decompose_masked(series: &[Option<f64>], scale: u32) -> Result<MaskedComponents> {
    let width = window(scale)?;
    if let Some(full) = series.iter().copied().collect::<Option<Vec<f64>>>().filter(|v| !v.is_empty()) {
        let c = decompose(&full, scale)?;
        return Ok(MaskedComponents {
            short: c.short.into_iter().map(Some).collect(),
            long: c.long.into_iter().map(Some).collect(),
        });
    }
    let long = trailing_mean(series, width);
    let short = series
        .iter()
        .zip(&long)
        .map(|(x, l)| match (x, l) {
            (Some(x), Some(l)) => Some(x - l),
            _ => None,
        })
        .collect();
    Ok(MaskedComponents { short, long })
}

/// Additive bands for an increasing list of scales `J_1 < … < J_m`:
/// `x − MA(2^J_1)`, `MA(2^J_k) − MA(2^J_{k+1})`, …, `MA(2^J_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bands {
    pub scales: Vec<u32>,
    /// Finest band first; `scales.len() + 1` bands.
    pub bands: Vec<Vec<f64>>,
}

pub fn decompose_bands(series: &[f64], scales: &[u32]) -> Result<Bands> {
    if series.is_empty() {
        return Err(Error::NoData("empty series".into()));
    }
    if scales.is_empty() || scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "scales must be a non-empty strictly increasing list".into(),
        ));
    }
    let smooth: Vec<Vec<f64>> = scales
        .iter()
        .map(|&j| decompose(series, j).map(|c| c.long))
        .collect::<Result<_>>()?;
    let mut bands = Vec::with_capacity(scales.len() + 1);
    bands.push(series.iter().zip(&smooth[0]).map(|(x, m)| x - m).collect());
    for k in 0..scales.len() - 1 {
        bands.push(
            smooth[k]
                .iter()
                .zip(&smooth[k + 1])
                .map(|(a, b)| a - b)
                .collect(),
        );
    }
    bands.push(smooth[scales.len() - 1].clone());
    Ok(Bands {
        scales: scales.to_vec(),
        bands,
    })
}

/// Per-asset and market components of every measure in a moment panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPanel {
    pub scale: u32,
    pub frequency: Frequency,
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    /// Indexed `[measure][asset]`.
    pub by_asset: BTreeMap<Measure, Vec<MaskedComponents>>,
    pub market: BTreeMap<Measure, MaskedComponents>,
    pub warmup_len: usize,
}

pub fn decompose_panel(panel: &MomentPanel, scale: u32) -> Result<ComponentPanel> {
    if panel.n_periods() == 0 {
        return Err(Error::NoData("empty moment panel".into()));
    }
    let width = window(scale)?;
    let mut by_asset = BTreeMap::new();
    let mut market = BTreeMap::new();
    for m in Measure::ALL {
        let cols: Vec<MaskedComponents> = (0..panel.n_assets())
            .into_par_iter()
            .map(|a| decompose_masked(&panel.asset_column(m, a), scale))
            .collect::<Result<_>>()?;
        by_asset.insert(m, cols);
        market.insert(m, decompose_masked(panel.market.get(m), scale)?);
    }
    Ok(ComponentPanel {
        scale,
        frequency: panel.frequency,
        dates: panel.dates.clone(),
        assets: panel.assets.clone(),
        by_asset,
        market,
        warmup_len: panel.n_periods().min(width - 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::MomentSeries;
    use proptest::prelude::*;

    #[test]
    fn constant_series() {
        let c = decompose(&[2.5; 40], 3).unwrap();
        assert!(c.long.iter().all(|&l| l == 2.5));
        assert!(c.short.iter().all(|&s| s == 0.0));
        assert_eq!(c.warmup_len, 7);
    }

    #[test]
    fn linear_trend_two_point_mean() {
        let x: Vec<f64> = (1..=50).map(f64::from).collect();
        let c = decompose(&x, 1).unwrap();
        assert_eq!(c.long[0], 1.0);
        for t in 1..x.len() {
            assert!((c.long[t] - (x[t] - 0.5)).abs() < 1e-12);
            assert!((c.short[t] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn expanding_mean_during_warmup() {
        let x = [4.0, 2.0, 6.0, 0.0, 8.0];
        let c = decompose(&x, 2).unwrap();
        assert_eq!(c.long[..4], [4.0, 3.0, 4.0, 3.0]);
        assert_eq!(c.long[4], 4.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(decompose(&[], 1), Err(Error::NoData(_))));
        assert!(matches!(decompose(&[1.0], 0), Err(Error::Config(_))));
    }

    #[test]
    fn bands_add_up() {
        let x: Vec<f64> = (0..300).map(|t| (t as f64 * 0.1).sin() + 0.01 * t as f64).collect();
        let b = decompose_bands(&x, &[1, 3, 5]).unwrap();
        assert_eq!(b.bands.len(), 4);
        for t in 0..x.len() {
            let s: f64 = b.bands.iter().map(|band| band[t]).sum();
            assert!((s - x[t]).abs() < 1e-12);
        }
        let two = decompose_bands(&x, &[4]).unwrap();
        let c = decompose(&x, 4).unwrap();
        assert_eq!(two.bands[0], c.short);
        assert_eq!(two.bands[1], c.long);
        assert!(decompose_bands(&x, &[3, 3]).is_err());
    }

    #[test]
    fn masked_gaps_propagate() {
        let x = [Some(1.0), None, Some(3.0), Some(5.0)];
        let c = decompose_masked(&x, 1).unwrap();
        assert_eq!(c.long, vec![Some(1.0), None, Some(3.0), Some(4.0)]);
        assert_eq!(c.short, vec![Some(0.0), None, Some(0.0), Some(1.0)]);
    }

    fn panel(cols: Vec<Vec<f64>>) -> MomentPanel {
        let n = cols[0].len();
        let dates: Vec<NaiveDate> = (0..n)
            .map(|i| NaiveDate::from_ymd_opt(2012, 1, 2).unwrap() + chrono::Days::new(i as u64))
            .collect();
        let m: Vec<Vec<Option<f64>>> = (0..n)
            .map(|t| cols.iter().map(|c| Some(c[t])).collect())
            .collect();
        MomentPanel {
            frequency: Frequency::Daily,
            dates,
            assets: (0..cols.len()).map(|i| format!("A{i}")).collect(),
            vol: m.clone(),
            skew: m.clone(),
            kurt: m,
            market: MomentSeries {
                vol: cols[0].iter().map(|v| Some(*v)).collect(),
                skew: cols[0].iter().map(|v| Some(*v)).collect(),
                kurt: cols[0].iter().map(|v| Some(*v)).collect(),
            },
        }
    }

    #[test]
    fn panel_of_constants_and_single_column() {
        let p = panel(vec![vec![3.0; 20], vec![1.0; 20]]);
        let c = decompose_panel(&p, 2).unwrap();
        for comps in c.by_asset.values() {
            for col in comps {
                assert!(col.short.iter().all(|s| *s == Some(0.0)));
            }
        }
        let x: Vec<f64> = (0..200).map(|t| ((t * 37) % 11) as f64).collect();
        let c = decompose_panel(&panel(vec![x.clone()]), 7).unwrap();
        let direct = decompose(&x, 7).unwrap();
        let col = &c.by_asset[&Measure::Skew][0];
        assert_eq!(
            col.long.iter().map(|v| v.unwrap()).collect::<Vec<_>>(),
            direct.long
        );
        // J = 7 on daily data is a trailing 128-day mean.
        let expect: f64 = x[200 - 128..].iter().sum::<f64>() / 128.0;
        assert!((direct.long[199] - expect).abs() < 1e-12);
        assert_eq!(c.warmup_len, 127);
    }

    proptest! {
        #[test]
        fn linearity(
            x in proptest::collection::vec(-10.0f64..10.0, 1..200),
            seed in proptest::collection::vec(-10.0f64..10.0, 200),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            j in 1u32..6,
        ) {
            let y = &seed[..x.len()];
            let mix: Vec<f64> = x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
            let dm = decompose(&mix, j).unwrap();
            let dx = decompose(&x, j).unwrap();
            let dy = decompose(y, j).unwrap();
            for t in 0..x.len() {
                let l = a * dx.long[t] + b * dy.long[t];
                let s = a * dx.short[t] + b * dy.short[t];
                prop_assert!((dm.long[t] - l).abs() < 1e-10);
                prop_assert!((dm.short[t] - s).abs() < 1e-10);
            }
        }

        #[test]
        fn prefix_causality(x in proptest::collection::vec(-5.0f64..5.0, 1..150), j in 1u32..6, cut in 0usize..150) {
            let cut = cut.min(x.len() - 1) + 1;
            let full = decompose(&x, j).unwrap();
            let pre = decompose(&x[..cut], j).unwrap();
            prop_assert_eq!(&pre.long[..], &full.long[..cut]);
            prop_assert_eq!(&pre.short[..], &full.short[..cut]);
        }
    }
}
