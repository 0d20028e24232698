//! Intraday bar ingestion: the five-minute log-price grid, open-to-close
//! excess returns and weekly return aggregation.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, TimeDelta, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Daily,
    Weekly,
}

impl Frequency {
    /// Periods per year used to de-annualize the risk-free rate.
    pub fn periods_per_year(self) -> f64 {
        match self {
            Frequency::Daily => 252.0,
            Frequency::Weekly => 52.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Frequency::Daily => "daily",
            Frequency::Weekly => "weekly",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarRecord {
    pub timestamp: NaiveDateTime,
    pub symbol: String,
    pub price: f64,
}

/// Trading session and grid resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub open: NaiveTime,
    pub close: NaiveTime,
    /// Number of intraday returns `K`; the grid has `K + 1` prices.
    pub slots: usize,
    /// A day whose first bar comes later than `open + max_edge_gap`, or whose
    /// last bar comes earlier than `close - max_edge_gap`, is a short session.
    pub max_edge_gap: TimeDelta,
}

impl Default for Session {
    fn default() -> Self {
        Session {
            open: NaiveTime::from_hms_opt(9, 30, 0).unwrap(),
            close: NaiveTime::from_hms_opt(16, 0, 0).unwrap(),
            slots: 78,
            max_edge_gap: TimeDelta::minutes(30),
        }
    }
}

impl Session {
    pub fn validate(&self) -> Result<()> {
        if self.slots < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 slots, got {}",
                self.slots
            )));
        }
        let span = (self.close - self.open).num_seconds();
        if span <= 0 {
            return Err(Error::Config("session close must follow open".into()));
        }
        if span % self.slots as i64 != 0 {
            return Err(Error::Config(format!(
                "session of {span}s does not divide into {} whole-second slots",
                self.slots
            )));
        }
        Ok(())
    }

    pub fn slot_length(&self) -> TimeDelta {
        TimeDelta::seconds((self.close - self.open).num_seconds() / self.slots as i64)
    }

    /// The `K + 1` grid boundary timestamps for `date`.
    pub fn boundaries(&self, date: NaiveDate) -> Vec<NaiveDateTime> {
        let start = date.and_time(self.open);
        let step = self.slot_length();
        (0..=self.slots).map(|j| start + step * j as i32).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntradayGrid {
    pub symbol: String,
    pub date: NaiveDate,
    pub log_prices: Vec<f64>,
    pub returns: Vec<f64>,
    pub short_session: bool,
}

impl IntradayGrid {
    /// Rebuilds a grid from its intraday returns, anchored at log-price 0.
    pub fn from_returns(symbol: impl Into<String>, date: NaiveDate, returns: Vec<f64>) -> Self {
        let mut log_prices = Vec::with_capacity(returns.len() + 1);
        let mut p = 0.0;
        log_prices.push(p);
        for r in &returns {
            p += r;
            log_prices.push(p);
        }
        IntradayGrid {
            symbol: symbol.into(),
            date,
            log_prices,
            returns,
            short_session: false,
        }
    }

    pub fn open_to_close(&self) -> f64 {
        self.log_prices[self.log_prices.len() - 1] - self.log_prices[0]
    }
}

/// Samples one asset-day of bars onto the session grid.
///
/// Each grid point takes the last price observed at or before it; points
/// preceding the first bar take the first bar's price.
pub fn build_five_minute_grid(bars: &[BarRecord], session: &Session) -> Result<IntradayGrid> {
    let first = bars
        .first()
        .ok_or_else(|| Error::NoData("empty bar sequence".into()))?;
    let date = first.timestamp.date();
    for (i, bar) in bars.iter().enumerate() {
        if !(bar.price > 0.0) || !bar.price.is_finite() {
            return Err(Error::BadRecord {
                timestamp: bar.timestamp,
                reason: format!("non-positive price {}", bar.price),
            });
        }
        if bar.timestamp.date() != date || bar.symbol != first.symbol {
            return Err(Error::BadRecord {
                timestamp: bar.timestamp,
                reason: format!("bar does not belong to {} on {date}", first.symbol),
            });
        }
        if i > 0 && bar.timestamp < bars[i - 1].timestamp {
            return Err(Error::BadRecord {
                timestamp: bar.timestamp,
                reason: "bars out of timestamp order".into(),
            });
        }
    }

    let boundaries = session.boundaries(date);
    let mut log_prices = Vec::with_capacity(boundaries.len());
    let mut cursor = 0usize;
    let mut last = first.price;
    for b in &boundaries {
        while cursor < bars.len() && bars[cursor].timestamp <= *b {
            last = bars[cursor].price;
            cursor += 1;
        }
        log_prices.push(last.ln());
    }
    let returns = log_prices.windows(2).map(|w| w[1] - w[0]).collect();

    let last_bar = bars[bars.len() - 1].timestamp;
    let short_session = first.timestamp > boundaries[0] + session.max_edge_gap
        || last_bar < boundaries[session.slots] - session.max_edge_gap;

    Ok(IntradayGrid {
        symbol: first.symbol.clone(),
        date,
        log_prices,
        returns,
        short_session,
    })
}

/// Annualized 3-month bill rates by date, converted to a per-period rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskFreeCurve {
    pub annualized: BTreeMap<NaiveDate, f64>,
    pub frequency: Frequency,
}

impl RiskFreeCurve {
    pub fn new(annualized: BTreeMap<NaiveDate, f64>, frequency: Frequency) -> Self {
        RiskFreeCurve {
            annualized,
            frequency,
        }
    }

    pub fn per_period_rate(&self, date: NaiveDate) -> Result<f64> {
        self.annualized
            .get(&date)
            .map(|r| r / self.frequency.periods_per_year())
            .ok_or(Error::MissingRate(date))
    }
}

/// `log(close) - log(open) - rf` for one grid.
pub fn period_excess_return(grid: &IntradayGrid, rf: &RiskFreeCurve) -> Result<f64> {
    Ok(grid.open_to_close() - rf.per_period_rate(grid.date)?)
}

/// Period × asset matrix of excess log returns; `None` marks missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub frequency: Frequency,
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl ReturnPanel {
    pub fn n_periods(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn get(&self, period: usize, asset: usize) -> Option<f64> {
        self.values[period][asset]
    }

    pub fn column(&self, asset: usize) -> Vec<Option<f64>> {
        self.values.iter().map(|row| row[asset]).collect()
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.values.len() != self.dates.len()
            || self.values.iter().any(|r| r.len() != self.assets.len())
        {
            return Err(Error::Config("return panel dimensions do not match".into()));
        }
        Ok(())
    }

    /// Long-format rows `(date, asset, value)` → panel, sorted by date and asset.
    pub fn from_long(
        frequency: Frequency,
        rows: impl IntoIterator<Item = (NaiveDate, String, Option<f64>)>,
    ) -> Self {
        let mut cells: BTreeMap<(NaiveDate, String), Option<f64>> = BTreeMap::new();
        let mut dates = std::collections::BTreeSet::new();
        let mut assets = std::collections::BTreeSet::new();
        for (d, a, v) in rows {
            dates.insert(d);
            assets.insert(a.clone());
            cells.insert((d, a), v);
        }
        let dates: Vec<NaiveDate> = dates.into_iter().collect();
        let assets: Vec<String> = assets.into_iter().collect();
        let values = dates
            .iter()
            .map(|d| {
                assets
                    .iter()
                    .map(|a| cells.get(&(*d, a.clone())).copied().flatten())
                    .collect()
            })
            .collect();
        ReturnPanel {
            frequency,
            dates,
            assets,
            values,
        }
    }
}

/// Indices of panel dates that close a complete trailing five-day week.
///
/// A week is labeled by a trading date falling on `anchor`; it spans that date
/// and the four trading dates before it. Anchors without four predecessors are
/// partial weeks and are dropped.
pub fn week_anchors(dates: &[NaiveDate], anchor: Weekday) -> Vec<usize> {
    (0..dates.len())
        .filter(|&i| i >= 4 && dates[i].weekday() == anchor)
        .collect()
}

/// Sums the five trailing daily excess returns at each week anchor. A week
/// with any missing day is missing.
pub fn aggregate_weekly_returns(daily: &ReturnPanel, anchor: Weekday) -> ReturnPanel {
    let anchors = week_anchors(&daily.dates, anchor);
    let values = anchors
        .iter()
        .map(|&t| {
            (0..daily.n_assets())
                .map(|a| {
                    (t - 4..=t)
                        .map(|s| daily.values[s][a])
                        .try_fold(0.0, |acc, v| v.map(|x| acc + x))
                })
                .collect()
        })
        .collect();
    ReturnPanel {
        frequency: Frequency::Weekly,
        dates: anchors.iter().map(|&t| daily.dates[t]).collect(),
        assets: daily.assets.clone(),
        values,
    }
}

/// Applies `(symbol, date) → factor` multiplicative price adjustments.
pub fn apply_adjustments(bars: &mut [BarRecord], factors: &BTreeMap<(String, NaiveDate), f64>) {
    if factors.is_empty() {
        return;
    }
    for bar in bars.iter_mut() {
        if let Some(f) = factors.get(&(bar.symbol.clone(), bar.timestamp.date())) {
            bar.price *= f;
        }
    }
}

/// Groups bars by `(symbol, date)`, each group stably sorted by timestamp.
pub fn group_bars(bars: Vec<BarRecord>) -> BTreeMap<(String, NaiveDate), Vec<BarRecord>> {
    let mut groups: BTreeMap<(String, NaiveDate), Vec<BarRecord>> = BTreeMap::new();
    for bar in bars {
        groups
            .entry((bar.symbol.clone(), bar.timestamp.date()))
            .or_default()
            .push(bar);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|b| b.timestamp);
    }
    groups
}

/// Daily excess-return panel from complete grids; `exclude` lists symbols
/// (such as the market index) kept out of the asset cross-section.
pub fn daily_return_panel(
    grids: &[IntradayGrid],
    rf: &RiskFreeCurve,
    exclude: &[String],
) -> Result<ReturnPanel> {
    let mut all_dates = std::collections::BTreeSet::new();
    let mut rows = Vec::new();
    for g in grids {
        all_dates.insert(g.date);
        if exclude.contains(&g.symbol) {
            continue;
        }
        rows.push((g.date, g.symbol.clone(), Some(period_excess_return(g, rf)?)));
    }
    let mut panel = ReturnPanel::from_long(Frequency::Daily, rows);
    // Dates on which only excluded symbols traded still belong to the calendar.
    if panel.dates.len() != all_dates.len() {
        let n = panel.n_assets();
        let mut filled = Vec::with_capacity(all_dates.len());
        let mut it = panel.dates.iter().zip(panel.values).peekable();
        for d in &all_dates {
            match it.peek() {
                Some((pd, _)) if *pd == d => filled.push(it.next().unwrap().1),
                _ => filled.push(vec![None; n]),
            }
        }
        panel.values = filled;
        panel.dates = all_dates.into_iter().collect();
    }
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2015, 3, 2).unwrap()
    }

    fn at(h: u32, m: u32) -> NaiveDateTime {
        day().and_hms_opt(h, m, 0).unwrap()
    }

    fn bar(h: u32, m: u32, price: f64) -> BarRecord {
        BarRecord {
            timestamp: at(h, m),
            symbol: "AAA".into(),
            price,
        }
    }

    fn on_grid(prices: impl Fn(usize) -> f64) -> Vec<BarRecord> {
        let s = Session::default();
        s.boundaries(day())
            .into_iter()
            .enumerate()
            .map(|(j, ts)| BarRecord {
                timestamp: ts,
                symbol: "AAA".into(),
                price: prices(j),
            })
            .collect()
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let g = build_five_minute_grid(&on_grid(|_| 100.0), &Session::default()).unwrap();
        assert_eq!(g.returns.len(), 78);
        assert!(g.returns.iter().all(|&r| r == 0.0));
        assert!(!g.short_session);
    }

    #[test]
    fn gap_is_forward_filled() {
        let mut bars = on_grid(|j| if j < 10 { 100.0 } else { 100.0 + j as f64 });
        bars.retain(|b| {
            let slot = (b.timestamp - at(9, 30)).num_minutes() / 5;
            !(10..=12).contains(&slot)
        });
        let g = build_five_minute_grid(&bars, &Session::default()).unwrap();
        for j in 10..=12 {
            assert_eq!(g.log_prices[j], 100f64.ln());
        }
        assert_eq!(g.returns[9], 0.0);
        assert_eq!(g.returns[10], 0.0);
        assert_eq!(g.returns[11], 0.0);
    }

    #[test]
    fn last_price_in_window_wins() {
        let bars = vec![bar(9, 30, 100.0), bar(9, 31, 100.0), bar(9, 33, 101.0), bar(16, 0, 101.0)];
        let g = build_five_minute_grid(&bars, &Session::default()).unwrap();
        assert_eq!(g.log_prices[1], 101f64.ln());
    }

    #[test]
    fn slots_before_first_bar_use_first_price() {
        let bars = vec![bar(9, 40, 50.0), bar(16, 0, 55.0)];
        let g = build_five_minute_grid(&bars, &Session::default()).unwrap();
        assert_eq!(g.log_prices[0], 50f64.ln());
        assert_eq!(g.log_prices[1], 50f64.ln());
        assert_eq!(g.log_prices[2], 50f64.ln());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            build_five_minute_grid(&[], &Session::default()),
            Err(Error::NoData(_))
        ));
        let bad = vec![bar(9, 30, 100.0), bar(9, 35, 0.0)];
        match build_five_minute_grid(&bad, &Session::default()) {
            Err(Error::BadRecord { timestamp, .. }) => assert_eq!(timestamp, at(9, 35)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn early_close_is_flagged() {
        let bars = vec![bar(9, 30, 100.0), bar(13, 0, 101.0)];
        let g = build_five_minute_grid(&bars, &Session::default()).unwrap();
        assert!(g.short_session);
    }

    #[test]
    fn excess_return_examples() {
        let rf0 = RiskFreeCurve::new(BTreeMap::from([(day(), 0.0)]), Frequency::Daily);
        let flat = build_five_minute_grid(&on_grid(|_| 100.0), &Session::default()).unwrap();
        assert_eq!(period_excess_return(&flat, &rf0).unwrap(), 0.0);

        let up = build_five_minute_grid(
            &on_grid(|j| if j == 78 { 102.02 } else { 100.0 }),
            &Session::default(),
        )
        .unwrap();
        let r = period_excess_return(&up, &rf0).unwrap();
        assert_eq!((r * 1e4).round() / 1e4, 0.0200);

        let rf = RiskFreeCurve::new(BTreeMap::from([(day(), 0.0252)]), Frequency::Daily);
        assert!((period_excess_return(&flat, &rf).unwrap() + 0.0001).abs() < 1e-15);

        let empty = RiskFreeCurve::new(BTreeMap::new(), Frequency::Daily);
        assert!(matches!(
            period_excess_return(&flat, &empty),
            Err(Error::MissingRate(_))
        ));
    }

    fn daily_panel(values: &[Option<f64>]) -> ReturnPanel {
        // Monday 2015-03-02 onward, weekdays only.
        let mut dates = Vec::new();
        let mut d = NaiveDate::from_ymd_opt(2015, 2, 24).unwrap(); // Tuesday
        while dates.len() < values.len() {
            if d.weekday().num_days_from_monday() < 5 {
                dates.push(d);
            }
            d = d.succ_opt().unwrap();
        }
        ReturnPanel {
            frequency: Frequency::Daily,
            dates,
            assets: vec!["AAA".into()],
            values: values.iter().map(|v| vec![*v]).collect(),
        }
    }

    #[test]
    fn weekly_sum() {
        let w = aggregate_weekly_returns(&daily_panel(&[Some(0.001); 5]), Weekday::Mon);
        assert_eq!(w.n_periods(), 1);
        assert!((w.values[0][0].unwrap() - 0.005).abs() < 1e-15);
        assert_eq!(w.dates[0], NaiveDate::from_ymd_opt(2015, 3, 2).unwrap());

        let w = aggregate_weekly_returns(
            &daily_panel(&[Some(0.01), Some(-0.01), Some(0.0), Some(0.0), Some(0.0)]),
            Weekday::Mon,
        );
        assert_eq!(w.values[0][0], Some(0.0));

        let w = aggregate_weekly_returns(
            &daily_panel(&[Some(0.01), None, Some(0.0), Some(0.0), Some(0.0)]),
            Weekday::Mon,
        );
        assert_eq!(w.values[0][0], None);
    }

    #[test]
    fn partial_weeks_are_dropped() {
        // Tuesday through Friday: no Monday closes a five-day window.
        let w = aggregate_weekly_returns(&daily_panel(&[Some(0.0); 4]), Weekday::Mon);
        assert_eq!(w.n_periods(), 0);
    }
}
