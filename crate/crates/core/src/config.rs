//! Run configuration.
//!
//! Sources are layered: built-in defaults, then a TOML file, then
//! environment variables, then explicit `key=value` overrides. Environment
//! variables use the `HMOM_` prefix with `__` between table and key, e.g.
//! `HMOM_TVP__DRAWS=500` sets `tvp.draws`.

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime, TimeDelta, Weekday};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::ingest::{Frequency, Session};
use crate::moments::Annualization;
use crate::qbll::{ShapeUpdate, TvpConfig, ZetaMode};
use crate::sim::{IntradaySpec, JumpSign};
use crate::sorts::{ReturnTiming, SortConfig};

pub const ENV_PREFIX: &str = "HMOM_";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Input bars; empty means the simulated bars in `out_dir`.
    pub bars: String,
    pub risk_free: String,
    pub controls: String,
    pub adjustments: String,
    pub index_symbol: String,
    /// Intraday returns per day.
    pub k: usize,
    pub session_open: String,
    pub session_close: String,
    pub max_edge_gap_minutes: i64,
    pub include_short_sessions: bool,
    pub week_anchor: String,
    pub annualization: Annualization,
    pub j_daily: u32,
    pub j_weekly: u32,
    pub frequencies: Vec<Frequency>,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub sort: SortSection,
    pub crosssection: CrossSectionSection,
    pub tvp: TvpSection,
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SortSection {
    pub frequency: Frequency,
    pub window_len: usize,
    pub n_quantiles: usize,
    pub holding: usize,
    pub step: usize,
    pub timing: ReturnTiming,
    pub min_coverage: f64,
    pub hac_lags: usize,
    /// Sort variables; empty means every aggregate and horizon factor.
    pub variables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossSectionSection {
    pub min_coverage: f64,
    pub shanken: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvpSection {
    /// Kernel bandwidth; 0 means `√T`.
    pub bandwidth: f64,
    pub draws: usize,
    pub burn_in: f64,
    pub seed: u64,
    pub zeta: ZetaMode,
    pub shape: ShapeUpdate,
    pub prior_scale: f64,
    pub sampled_loadings: bool,
    pub min_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_assets: usize,
    pub n_days: usize,
    pub start: NaiveDate,
    pub daily_vol: f64,
    pub jump_intensity: f64,
    pub jump_size: f64,
    pub jump_sign: JumpSign,
    pub risk_free_rate: f64,
    pub control_vol: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("out"),
            bars: String::new(),
            risk_free: String::new(),
            controls: String::new(),
            adjustments: String::new(),
            index_symbol: "SPY".into(),
            k: 78,
            session_open: "09:30".into(),
            session_close: "16:00".into(),
            max_edge_gap_minutes: 30,
            include_short_sessions: false,
            week_anchor: "mon".into(),
            annualization: Annualization::default(),
            j_daily: 7,
            j_weekly: 5,
            frequencies: vec![Frequency::Daily, Frequency::Weekly],
            threads: 0,
            sort: SortSection::default(),
            crosssection: CrossSectionSection::default(),
            tvp: TvpSection::default(),
            simulate: SimulateSection::default(),
        }
    }
}

impl Default for SortSection {
    fn default() -> Self {
        let s = SortConfig::default();
        SortSection {
            frequency: Frequency::Daily,
            window_len: s.window_len,
            n_quantiles: s.n_quantiles,
            holding: s.holding,
            step: s.step,
            timing: s.timing,
            min_coverage: s.min_coverage,
            hac_lags: s.hac_lags,
            variables: Vec::new(),
        }
    }
}

impl Default for CrossSectionSection {
    fn default() -> Self {
        let c = crate::crosssection::CrossSectionConfig::default();
        CrossSectionSection {
            min_coverage: c.min_coverage,
            shanken: c.shanken,
        }
    }
}

impl Default for TvpSection {
    fn default() -> Self {
        let t = TvpConfig::default();
        TvpSection {
            bandwidth: 0.0,
            draws: t.draws,
            burn_in: t.burn_in,
            seed: t.seed,
            zeta: t.zeta,
            shape: t.shape,
            prior_scale: t.prior_scale,
            sampled_loadings: t.sampled_loadings,
            min_coverage: t.min_coverage,
        }
    }
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            n_assets: 50,
            n_days: 300,
            start: NaiveDate::from_ymd_opt(2012, 1, 3).unwrap(),
            daily_vol: 0.015,
            jump_intensity: 0.3,
            jump_size: 0.01,
            jump_sign: JumpSign::Symmetric,
            risk_free_rate: 0.02,
            control_vol: 0.01,
            seed: 7,
        }
    }
}

fn parse_time(key: &str, s: &str) -> Result<NaiveTime> {
    NaiveTime::parse_from_str(s, "%H:%M")
        .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M:%S"))
        .map_err(|_| Error::Config(format!("{key}: `{s}` is not a time of day")))
}

impl RunConfig {
    pub fn session(&self) -> Result<Session> {
        let s = Session {
            open: parse_time("session_open", &self.session_open)?,
            close: parse_time("session_close", &self.session_close)?,
            slots: self.k,
            max_edge_gap: TimeDelta::minutes(self.max_edge_gap_minutes),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn anchor(&self) -> Result<Weekday> {
        self.week_anchor
            .parse()
            .map_err(|_| Error::Config(format!("week_anchor: `{}` is not a weekday", self.week_anchor)))
    }

    pub fn scale(&self, f: Frequency) -> u32 {
        match f {
            Frequency::Daily => self.j_daily,
            Frequency::Weekly => self.j_weekly,
        }
    }

    pub fn sort_config(&self) -> SortConfig {
        let s = &self.sort;
        SortConfig {
            window_len: s.window_len,
            n_quantiles: s.n_quantiles,
            holding: s.holding,
            step: s.step,
            group: None,
            timing: s.timing,
            min_coverage: s.min_coverage,
            hac_lags: s.hac_lags,
        }
    }

    pub fn crosssection_config(&self) -> crate::crosssection::CrossSectionConfig {
        crate::crosssection::CrossSectionConfig {
            min_coverage: self.crosssection.min_coverage,
            shanken: self.crosssection.shanken,
        }
    }

    pub fn tvp_config(&self) -> TvpConfig {
        let t = &self.tvp;
        TvpConfig {
            bandwidth: (t.bandwidth > 0.0).then_some(t.bandwidth),
            draws: t.draws,
            burn_in: t.burn_in,
            seed: t.seed,
            zeta: t.zeta,
            shape: t.shape,
            prior_scale: t.prior_scale,
            sampled_loadings: t.sampled_loadings,
            min_coverage: t.min_coverage,
        }
    }

    pub fn intraday_spec(&self) -> IntradaySpec {
        let s = &self.simulate;
        IntradaySpec {
            n_assets: s.n_assets,
            n_days: s.n_days,
            k: self.k,
            daily_vol: s.daily_vol,
            jump_intensity: s.jump_intensity,
            jump_size: s.jump_size,
            jump_sign: s.jump_sign,
            index_symbol: Some(self.index_symbol.clone()),
            start: s.start,
            start_price: 100.0,
            seed: s.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.session()?;
        self.anchor()?;
        for (name, j) in [("j_daily", self.j_daily), ("j_weekly", self.j_weekly)] {
            if !(1..=30).contains(&j) {
                return Err(Error::Config(format!("{name} must be in 1..=30, got {j}")));
            }
        }
        if self.frequencies.is_empty() {
            return Err(Error::Config("at least one frequency is required".into()));
        }
        if self.tvp.draws == 0 {
            return Err(Error::Config("tvp.draws must be positive".into()));
        }
        if !(self.tvp.bandwidth >= 0.0) || !(self.tvp.prior_scale > 0.0) {
            return Err(Error::Config("tvp.bandwidth must be ≥ 0 and tvp.prior_scale > 0".into()));
        }
        for (name, c) in [
            ("sort.min_coverage", self.sort.min_coverage),
            ("crosssection.min_coverage", self.crosssection.min_coverage),
            ("tvp.min_coverage", self.tvp.min_coverage),
        ] {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Config(format!("{name} must be in [0, 1]")));
            }
        }
        self.sort_config().validate(0)?;
        self.intraday_spec().validate()?;
        Ok(())
    }

    /// Resolves defaults < `file` < environment < `overrides`.
    pub fn load(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &[(String, String)],
    ) -> Result<RunConfig> {
        let mut root = match Value::try_from(RunConfig::default()) {
            Ok(Value::Table(t)) => t,
            _ => unreachable!("config serializes to a table"),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            let user: Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut root, user);
        }
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(ENV_PREFIX)
                    .map(|rest| (rest.to_lowercase().replace("__", "."), v))
            })
            .collect();
        env.sort();
        for (k, v) in env.iter().chain(overrides) {
            set_path(&mut root, k, v)?;
        }
        let cfg: RunConfig = Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a scalar as TOML when possible (numbers, booleans, arrays), else
/// takes it as a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(root: &mut Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        table = match table.get_mut(*p) {
            Some(Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("unknown config section in `{key}`"))),
        };
    }
    let leaf = parts[parts.len() - 1];
    if !table.contains_key(leaf) {
        return Err(Error::Config(format!("unknown config key `{key}`")));
    }
    let value = match (&table[leaf], parse_value(raw)) {
        // Keep textual keys textual even when the text looks numeric.
        (Value::String(_), _) => Value::String(raw.to_string()),
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    };
    table.insert(leaf.to_string(), value);
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::load(None, Vec::new(), &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.j_daily, c.j_weekly, c.k), (7, 5, 78));
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.toml");
        std::fs::write(&f, "j_daily = 6\nindex_symbol = \"IDX\"\n[tvp]\ndraws = 10\nseed = 3\n").unwrap();
        let env = vec![
            ("HMOM_TVP__DRAWS".to_string(), "20".to_string()),
            ("HMOM_J_WEEKLY".to_string(), "4".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let flags = vec![("tvp.draws".to_string(), "30".to_string())];
        let c = RunConfig::load(Some(&f), env, &flags).unwrap();
        assert_eq!(c.j_daily, 6);
        assert_eq!(c.j_weekly, 4);
        assert_eq!(c.tvp.draws, 30);
        assert_eq!(c.tvp.seed, 3);
        assert_eq!(c.index_symbol, "IDX");
    }

    #[test]
    fn integer_into_float_and_string_keys() {
        let c = RunConfig::load(
            None,
            Vec::new(),
            &[("tvp.bandwidth".into(), "12".into()), ("index_symbol".into(), "500".into())],
        )
        .unwrap();
        assert_eq!(c.tvp.bandwidth, 12.0);
        assert_eq!(c.index_symbol, "500");
    }

    #[test]
    fn unknown_and_invalid_keys() {
        let e = RunConfig::load(None, Vec::new(), &[("tvp.nope".into(), "1".into())]).unwrap_err();
        assert_eq!(e.exit_class(), crate::ExitClass::Config);
        let e = RunConfig::load(None, Vec::new(), &[("j_daily".into(), "0".into())]).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = RunConfig::load(None, Vec::new(), &[("k".into(), "7".into())]).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
