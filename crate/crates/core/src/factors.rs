//! Regressor sets: market and average idiosyncratic moments, their horizon
//! components, and external control factors.
//!
//! Column order is fixed. Aggregate columns are
//! `rvol_m rs_m rk_m rvol_i rs_i rk_i`; horizon columns are
//! `rvol_s_m rvol_l_m rs_s_m rs_l_m rk_s_m rk_l_m` followed by the same six
//! with an `_i` suffix; controls are `mkt smb hml`.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::decompose::ComponentPanel;
use crate::error::{Error, Result};
use crate::ingest::Frequency;
use crate::linalg::correlation;
use crate::moments::{Measure, MomentPanel};

pub const CONTROL_NAMES: [&str; 3] = ["mkt", "smb", "hml"];

/// Source of a moment factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Market,
    Idiosyncratic,
}

impl Source {
    fn suffix(self) -> &'static str {
        match self {
            Source::Market => "m",
            Source::Idiosyncratic => "i",
        }
    }
}

pub fn aggregate_name(m: Measure, src: Source) -> String {
    format!("{}_{}", m.stem(), src.suffix())
}

/// `short = true` for the `(s)` component.
pub fn horizon_name(m: Measure, short: bool, src: Source) -> String {
    format!("{}_{}_{}", m.stem(), if short { "s" } else { "l" }, src.suffix())
}

/// The four regressor groups used to estimate sorting exposures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorGroup {
    MarketAggregate,
    MarketHorizon,
    IdioAggregate,
    IdioHorizon,
}

impl FactorGroup {
    pub const ALL: [FactorGroup; 4] = [
        FactorGroup::MarketAggregate,
        FactorGroup::MarketHorizon,
        FactorGroup::IdioAggregate,
        FactorGroup::IdioHorizon,
    ];

    pub fn source(self) -> Source {
        match self {
            FactorGroup::MarketAggregate | FactorGroup::MarketHorizon => Source::Market,
            _ => Source::Idiosyncratic,
        }
    }

    pub fn names(self) -> Vec<String> {
        let src = self.source();
        match self {
            FactorGroup::MarketAggregate | FactorGroup::IdioAggregate => Measure::ALL
                .iter()
                .map(|&m| aggregate_name(m, src))
                .collect(),
            _ => Measure::ALL
                .iter()
                .flat_map(|&m| [horizon_name(m, true, src), horizon_name(m, false, src)])
                .collect(),
        }
    }

    /// The group a factor name belongs to, if it is a moment factor.
    pub fn of(name: &str) -> Option<FactorGroup> {
        FactorGroup::ALL
            .into_iter()
            .find(|g| g.names().iter().any(|n| n == name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    /// Static/dynamic four-moment model: six aggregate moment factors.
    Sfmm,
    /// Horizon-specific model: twelve component factors.
    Shsm,
    /// Every available moment column (aggregate then horizon).
    All,
    Custom(Vec<String>),
}

impl ModelSpec {
    pub fn needs_components(&self) -> bool {
        match self {
            ModelSpec::Sfmm => false,
            ModelSpec::Shsm | ModelSpec::All => true,
            ModelSpec::Custom(names) => names.iter().any(|n| {
                matches!(
                    FactorGroup::of(n),
                    Some(FactorGroup::MarketHorizon | FactorGroup::IdioHorizon)
                )
            }),
        }
    }

    /// Moment columns of the spec, in fixed order.
    pub fn moment_columns(&self) -> Vec<String> {
        match self {
            ModelSpec::Sfmm => [FactorGroup::MarketAggregate, FactorGroup::IdioAggregate]
                .iter()
                .flat_map(|g| g.names())
                .collect(),
            ModelSpec::Shsm => [FactorGroup::MarketHorizon, FactorGroup::IdioHorizon]
                .iter()
                .flat_map(|g| g.names())
                .collect(),
            ModelSpec::All => FactorGroup::ALL.iter().flat_map(|g| g.names()).collect(),
            ModelSpec::Custom(names) => names.clone(),
        }
    }

    /// Columns of the market-only, idiosyncratic-only and combined variants,
    /// i.e. models [1], [2], [3] of a results table.
    pub fn variants(&self) -> [(String, Vec<String>); 3] {
        let cols = self.moment_columns();
        let pick = |suffix: &str| -> Vec<String> {
            cols.iter().filter(|c| c.ends_with(suffix)).cloned().collect()
        };
        [
            ("market".to_string(), pick("_m")),
            ("idio".to_string(), pick("_i")),
            ("all".to_string(), cols.clone()),
        ]
    }
}

/// Fama-French control factor returns by date.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlFactors {
    pub values: BTreeMap<NaiveDate, [f64; 3]>,
}

/// `RDM^(I)_t`: equal-weighted cross-sectional mean over assets with a defined
/// value, and the number of such assets.
#[derive(Debug, Clone, PartialEq)]
pub struct IdioSeries {
    pub values: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

fn cross_sectional_mean<'a>(rows: impl Iterator<Item = Vec<Option<f64>>> + 'a) -> IdioSeries {
    let mut values = Vec::new();
    let mut counts = Vec::new();
    for row in rows {
        let defined: Vec<f64> = row.into_iter().flatten().collect();
        counts.push(defined.len());
        values.push(if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        });
    }
    IdioSeries { values, counts }
}

pub fn average_idiosyncratic_moment(panel: &MomentPanel, measure: Measure) -> IdioSeries {
    cross_sectional_mean(panel.matrix(measure).iter().cloned())
}

/// Average of the per-asset horizon components (`short = true` for `(s)`).
pub fn average_idiosyncratic_component(
    components: &ComponentPanel,
    measure: Measure,
    short: bool,
) -> IdioSeries {
    let cols = &components.by_asset[&measure];
    let n = components.dates.len();
    cross_sectional_mean((0..n).map(|t| {
        cols.iter()
            .map(|c| if short { c.short[t] } else { c.long[t] })
            .collect()
    }))
}

/// Period × factor regressor matrix with complete rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    pub frequency: Frequency,
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub spec: ModelSpec,
    pub dropped_rows: usize,
}

impl FactorMatrix {
    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_factors(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.values.iter().map(|r| r[j]).collect())
    }

    pub fn date_index(&self) -> HashMap<NaiveDate, usize> {
        self.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect()
    }

    /// Keeps the named columns in the given order.
    pub fn select(&self, names: &[String]) -> Result<FactorMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::Config(format!("factor `{n}` not in matrix")))
            })
            .collect::<Result<_>>()?;
        Ok(FactorMatrix {
            frequency: self.frequency,
            dates: self.dates.clone(),
            names: names.to_vec(),
            values: self
                .values
                .iter()
                .map(|r| idx.iter().map(|&j| r[j]).collect())
                .collect(),
            spec: ModelSpec::Custom(names.to_vec()),
            dropped_rows: self.dropped_rows,
        })
    }

    /// Builds from named, date-aligned columns, dropping incomplete rows.
    pub fn from_columns(
        frequency: Frequency,
        dates: &[NaiveDate],
        columns: Vec<(String, Vec<Option<f64>>)>,
        spec: ModelSpec,
    ) -> Result<FactorMatrix> {
        let mut seen = std::collections::HashSet::new();
        for (n, c) in &columns {
            if !seen.insert(n.clone()) {
                return Err(Error::Config(format!("duplicate factor name `{n}`")));
            }
            if c.len() != dates.len() {
                return Err(Error::Config(format!("factor `{n}` is not date-aligned")));
            }
        }
        let mut out_dates = Vec::new();
        let mut values = Vec::new();
        for (t, d) in dates.iter().enumerate() {
            let row: Option<Vec<f64>> = columns.iter().map(|(_, c)| c[t]).collect();
            if let Some(row) = row {
                out_dates.push(*d);
                values.push(row);
            }
        }
        let dropped_rows = dates.len() - out_dates.len();
        if dropped_rows > 0 {
            log::info!("factor matrix: dropped {dropped_rows} incomplete rows");
        }
        Ok(FactorMatrix {
            frequency,
            dates: out_dates,
            names: columns.into_iter().map(|(n, _)| n).collect(),
            values,
            spec,
            dropped_rows,
        })
    }
}

/// Every moment column derivable from the inputs, keyed by name.
fn available_columns(
    panel: &MomentPanel,
    components: Option<&ComponentPanel>,
) -> Result<BTreeMap<String, Vec<Option<f64>>>> {
    let mut cols = BTreeMap::new();
    for m in Measure::ALL {
        cols.insert(aggregate_name(m, Source::Market), panel.market.get(m).clone());
        cols.insert(
            aggregate_name(m, Source::Idiosyncratic),
            average_idiosyncratic_moment(panel, m).values,
        );
    }
    if let Some(c) = components {
        if c.dates != panel.dates {
            return Err(Error::Config(
                "components and moment panel are not date-aligned".into(),
            ));
        }
        for m in Measure::ALL {
            let mk = &c.market[&m];
            cols.insert(horizon_name(m, true, Source::Market), mk.short.clone());
            cols.insert(horizon_name(m, false, Source::Market), mk.long.clone());
            for short in [true, false] {
                cols.insert(
                    horizon_name(m, short, Source::Idiosyncratic),
                    average_idiosyncratic_component(c, m, short).values,
                );
            }
        }
    }
    Ok(cols)
}

pub fn build_factor_matrix(
    panel: &MomentPanel,
    components: Option<&ComponentPanel>,
    spec: &ModelSpec,
    controls: Option<&ControlFactors>,
) -> Result<FactorMatrix> {
    if spec.needs_components() && components.is_none() {
        return Err(Error::Config(
            "horizon-specific factors requested without a decomposition".into(),
        ));
    }
    let mut available = available_columns(panel, components)?;
    let mut columns = Vec::new();
    for name in spec.moment_columns() {
        let col = available
            .remove(&name)
            .ok_or_else(|| Error::Config(format!("unknown factor `{name}`")))?;
        columns.push((name, col));
    }
    if let Some(ctrl) = controls {
        for (k, name) in CONTROL_NAMES.iter().enumerate() {
            let col = panel
                .dates
                .iter()
                .map(|d| ctrl.values.get(d).map(|v| v[k]))
                .collect();
            columns.push((name.to_string(), col));
        }
    }
    FactorMatrix::from_columns(panel.frequency, &panel.dates, columns, spec.clone())
}

/// Symmetric pairwise correlation table; `None` where a column is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationTable {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        self.values[i][j]
    }
}

pub fn factor_correlations(matrix: &FactorMatrix) -> Result<CorrelationTable> {
    if matrix.n_rows() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: matrix.n_rows(),
        });
    }
    let cols: Vec<Vec<f64>> = matrix
        .names
        .iter()
        .map(|n| matrix.column(n).expect("own column"))
        .collect();
    let k = cols.len();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let c = if i == j {
                correlation(&cols[i], &cols[i]).map(|_| 1.0)
            } else {
                correlation(&cols[i], &cols[j])
            };
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(CorrelationTable {
        names: matrix.names.clone(),
        values,
    })
}
