//! File-based stage orchestration.
//!
//! Each stage reads the artifacts of earlier stages from the output
//! directory and writes its own. Requested stages run in dependency order;
//! a stage whose inputs are missing fails with [`Error::Dependency`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::{RunConfig, RESOLVED_CONFIG};
use crate::crosssection::{fama_macbeth, RiskPremiaEstimate};
use crate::decompose::decompose_panel;
use crate::error::{Error, Result};
use crate::factors::{build_factor_matrix, factor_correlations, ControlFactors, FactorMatrix, ModelSpec, CONTROL_NAMES};
use crate::ingest::{
    aggregate_weekly_returns, apply_adjustments, build_five_minute_grid, daily_return_panel, group_bars, Frequency,
    IntradayGrid, RiskFreeCurve,
};
use crate::io;
use crate::moments::{weekly_aggregate, DailyMoments, MomentPanel};
use crate::qbll::dynamic_fama_macbeth;
use crate::report::{correlation_table, results_table, sort_table, ModelColumn, Rendered};
use crate::sim::{simulate_intraday, substream};
use crate::sorts::run_sorts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Simulate,
    Ingest,
    Moments,
    Decompose,
    Factors,
    Sort,
    Crosssection,
    Tvp,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Simulate,
        Stage::Ingest,
        Stage::Moments,
        Stage::Decompose,
        Stage::Factors,
        Stage::Sort,
        Stage::Crosssection,
        Stage::Tvp,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Ingest => "ingest",
            Stage::Moments => "moments",
            Stage::Decompose => "decompose",
            Stage::Factors => "factors",
            Stage::Sort => "sort",
            Stage::Crosssection => "crosssection",
            Stage::Tvp => "tvp",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Model families in the results tables and their first column number.
const MODEL_FAMILIES: [(&str, usize); 2] = [("sfmm", 1), ("shsm", 7)];

fn family_spec(name: &str) -> ModelSpec {
    match name {
        "sfmm" => ModelSpec::Sfmm,
        _ => ModelSpec::Shsm,
    }
}

/// Artifact paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Layout {
        Layout { root: root.into() }
    }

    fn file(&self, name: String) -> PathBuf {
        self.root.join(name)
    }

    pub fn bars(&self) -> PathBuf {
        self.root.join("bars.csv")
    }
    pub fn risk_free(&self) -> PathBuf {
        self.root.join("risk_free.csv")
    }
    pub fn controls(&self) -> PathBuf {
        self.root.join("controls.csv")
    }
    pub fn truth(&self) -> PathBuf {
        self.root.join("truth.json")
    }
    pub fn intraday(&self) -> PathBuf {
        self.root.join("intraday.csv")
    }
    pub fn returns(&self, f: Frequency) -> PathBuf {
        self.file(format!("returns_{}.csv", f.as_str()))
    }
    pub fn moments(&self, f: Frequency) -> PathBuf {
        self.file(format!("moments_{}.csv", f.as_str()))
    }
    pub fn components(&self, f: Frequency) -> PathBuf {
        self.file(format!("components_{}.csv", f.as_str()))
    }
    pub fn factors(&self, f: Frequency) -> PathBuf {
        self.file(format!("factors_{}.csv", f.as_str()))
    }
    pub fn sorts(&self, f: Frequency) -> PathBuf {
        self.file(format!("sorts_{}.csv", f.as_str()))
    }
    pub fn static_result(&self, f: Frequency, family: &str, model: usize) -> PathBuf {
        self.file(format!("static_{}_{family}_{model}.csv", f.as_str()))
    }
    pub fn dynamic_result(&self, f: Frequency, family: &str, model: usize) -> PathBuf {
        self.file(format!("dynamic_{}_{family}_{model}.csv", f.as_str()))
    }
    pub fn dynamic_path(&self, f: Frequency, family: &str, model: usize) -> PathBuf {
        self.file(format!("dynamic_path_{}_{family}_{model}.csv", f.as_str()))
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn resolved_config(&self) -> PathBuf {
        self.root.join(RESOLVED_CONFIG)
    }
}

fn require(stage: Stage, path: &Path, run_first: Stage) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Dependency {
            stage: stage.name().into(),
            missing: path.to_path_buf(),
            run_first: run_first.name().into(),
        })
    }
}

/// `configured` if set, else the simulated artifact.
fn input_path(configured: &str, simulated: PathBuf) -> PathBuf {
    if configured.is_empty() {
        simulated
    } else {
        PathBuf::from(configured)
    }
}

pub struct Pipeline {
    pub config: RunConfig,
    pub layout: Layout,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Pipeline {
        let layout = Layout::new(&config.out_dir);
        Pipeline { config, layout }
    }

    /// Runs `stages` in dependency order inside a pool of `threads` workers.
    pub fn run(&self, stages: &[Stage]) -> Result<()> {
        self.config.validate()?;
        std::fs::create_dir_all(&self.layout.root).map_err(|e| Error::io(&self.layout.root, e))?;
        io::write_text(&self.layout.resolved_config(), &self.config.to_toml())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let mut ordered = stages.to_vec();
        ordered.sort();
        ordered.dedup();
        pool.install(|| {
            for s in ordered {
                log::info!("stage {s}");
                self.run_stage(s)?;
            }
            Ok(())
        })
    }

    fn run_stage(&self, s: Stage) -> Result<()> {
        match s {
            Stage::Simulate => self.simulate(),
            Stage::Ingest => self.ingest(),
            Stage::Moments => self.moments(),
            Stage::Decompose => self.decompose(),
            Stage::Factors => self.factors(),
            Stage::Sort => self.sort(),
            Stage::Crosssection => self.crosssection(),
            Stage::Tvp => self.tvp(),
            Stage::Report => self.report(),
        }
    }

    fn simulate(&self) -> Result<()> {
        let spec = self.config.intraday_spec();
        let sim = simulate_intraday(&spec)?;
        io::write_bars(&self.layout.bars(), &sim.bars)?;
        let rf: BTreeMap<_, _> = sim.dates.iter().map(|d| (*d, self.config.simulate.risk_free_rate)).collect();
        io::write_risk_free(&self.layout.risk_free(), &rf)?;
        let dist = Normal::new(0.0, self.config.simulate.control_vol)
            .map_err(|e| Error::Config(format!("simulate.control_vol: {e}")))?;
        let mut rng = substream(spec.seed, u64::MAX - 2);
        let controls = ControlFactors {
            values: sim
                .dates
                .iter()
                .map(|d| (*d, [0; 3].map(|_| dist.sample(&mut rng))))
                .collect(),
        };
        io::write_controls(&self.layout.controls(), &controls)?;
        io::write_json(&self.layout.truth(), &spec)
    }

    fn ingest(&self) -> Result<()> {
        let c = &self.config;
        let bars_path = input_path(&c.bars, self.layout.bars());
        require(Stage::Ingest, &bars_path, Stage::Simulate)?;
        let rf_path = input_path(&c.risk_free, self.layout.risk_free());
        require(Stage::Ingest, &rf_path, Stage::Simulate)?;
        let session = c.session()?;
        let mut bars = io::read_bars(&bars_path)?;
        if !c.adjustments.is_empty() {
            apply_adjustments(&mut bars, &io::read_adjustments(Path::new(&c.adjustments))?);
        }
        let groups: Vec<_> = group_bars(bars).into_values().collect();
        let grids: Vec<IntradayGrid> = groups
            .par_iter()
            .map(|g| build_five_minute_grid(g, &session))
            .collect::<Result<_>>()?;
        let (grids, short): (Vec<_>, Vec<_>) =
            grids.into_iter().partition(|g| c.include_short_sessions || !g.short_session);
        for g in &short {
            log::warn!("excluding short session {} {}", g.symbol, g.date);
        }
        io::write_intraday(&self.layout.intraday(), &grids)?;
        let rf = RiskFreeCurve::new(io::read_risk_free(&rf_path)?, Frequency::Daily);
        let daily = daily_return_panel(&grids, &rf, std::slice::from_ref(&c.index_symbol))?;
        io::write_return_panel(&self.layout.returns(Frequency::Daily), &daily)?;
        let weekly = aggregate_weekly_returns(&daily, c.anchor()?);
        io::write_return_panel(&self.layout.returns(Frequency::Weekly), &weekly)
    }

    fn moments(&self) -> Result<()> {
        require(Stage::Moments, &self.layout.intraday(), Stage::Ingest)?;
        let grids = io::read_intraday(&self.layout.intraday())?;
        let daily: Vec<DailyMoments> = grids.par_iter().map(DailyMoments::from_grid).collect::<Result<_>>()?;
        let panel = MomentPanel::from_daily(&daily, &self.config.index_symbol)?;
        io::write_moment_panel(&self.layout.moments(Frequency::Daily), &panel, &self.config.index_symbol)?;
        let weekly = weekly_aggregate(&panel, self.config.anchor()?, self.config.annualization);
        io::write_moment_panel(&self.layout.moments(Frequency::Weekly), &weekly, &self.config.index_symbol)
    }

    fn decompose(&self) -> Result<()> {
        for &f in &self.config.frequencies {
            require(Stage::Decompose, &self.layout.moments(f), Stage::Moments)?;
            let panel = io::read_moment_panel(&self.layout.moments(f))?;
            let comp = decompose_panel(&panel, self.config.scale(f))?;
            io::write_components(&self.layout.components(f), &comp, &self.config.index_symbol)?;
        }
        Ok(())
    }

    fn controls(&self) -> Result<Option<ControlFactors>> {
        let path = input_path(&self.config.controls, self.layout.controls());
        if path.exists() {
            io::read_controls(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    fn factors(&self) -> Result<()> {
        let controls = self.controls()?;
        for &f in &self.config.frequencies {
            require(Stage::Factors, &self.layout.moments(f), Stage::Moments)?;
            require(Stage::Factors, &self.layout.components(f), Stage::Decompose)?;
            let panel = io::read_moment_panel(&self.layout.moments(f))?;
            let comp = io::read_components(&self.layout.components(f))?;
            let m = build_factor_matrix(&panel, Some(&comp), &ModelSpec::All, controls.as_ref())?;
            io::write_factor_matrix(&self.layout.factors(f), &m)?;
        }
        Ok(())
    }

    fn inputs(&self, stage: Stage, f: Frequency) -> Result<(crate::ingest::ReturnPanel, FactorMatrix)> {
        require(stage, &self.layout.factors(f), Stage::Factors)?;
        require(stage, &self.layout.returns(f), Stage::Ingest)?;
        Ok((io::read_return_panel(&self.layout.returns(f))?, io::read_factor_matrix(&self.layout.factors(f))?))
    }

    fn sort(&self) -> Result<()> {
        let f = self.config.sort.frequency;
        let (returns, factors) = self.inputs(Stage::Sort, f)?;
        let vars = if self.config.sort.variables.is_empty() {
            ModelSpec::All.moment_columns()
        } else {
            self.config.sort.variables.clone()
        };
        let cfg = self.config.sort_config();
        let reports = run_sorts(&returns, &factors, &cfg, &vars)?;
        let meta = [
            ("window", cfg.window_len.to_string()),
            ("holding", cfg.holding.to_string()),
            ("step", cfg.step.to_string()),
            ("quantiles", cfg.n_quantiles.to_string()),
        ];
        io::write_sorts(&self.layout.sorts(f), &reports, &meta)
    }

    /// Column sets of the three models in a family; the combined model adds
    /// the controls present in the factor file.
    fn model_columns(family: &str, factors: &FactorMatrix) -> Vec<Vec<String>> {
        let variants = family_spec(family).variants();
        let controls: Vec<String> = CONTROL_NAMES
            .iter()
            .filter(|c| factors.column_index(c).is_some())
            .map(|c| c.to_string())
            .collect();
        let mut out: Vec<Vec<String>> = variants.iter().map(|(_, cols)| cols.clone()).collect();
        out[2].extend(controls);
        out
    }

    fn crosssection(&self) -> Result<()> {
        let cfg = self.config.crosssection_config();
        for &f in &self.config.frequencies {
            let (returns, factors) = self.inputs(Stage::Crosssection, f)?;
            for (family, first) in MODEL_FAMILIES {
                for (i, cols) in Self::model_columns(family, &factors).iter().enumerate() {
                    let est: RiskPremiaEstimate = fama_macbeth(&returns, &factors.select(cols)?, &cfg)?;
                    let meta = [("model", (first + i).to_string()), ("frequency", f.as_str().to_string())];
                    io::write_static(&self.layout.static_result(f, family, first + i), &est, &meta)?;
                }
            }
        }
        Ok(())
    }

    fn tvp(&self) -> Result<()> {
        let cfg = self.config.tvp_config();
        for &f in &self.config.frequencies {
            let (returns, factors) = self.inputs(Stage::Tvp, f)?;
            for (family, first) in MODEL_FAMILIES {
                for (i, cols) in Self::model_columns(family, &factors).iter().enumerate() {
                    let model = first + 3 + i;
                    let est = dynamic_fama_macbeth(&returns, &factors.select(cols)?, &cfg)?;
                    let meta = [("model", model.to_string()), ("frequency", f.as_str().to_string())];
                    io::write_dynamic(&self.layout.dynamic_result(f, family, model), &est, &meta)?;
                    io::write_dynamic_path(&self.layout.dynamic_path(f, family, model), &est)?;
                }
            }
        }
        Ok(())
    }

    fn report(&self) -> Result<()> {
        let dir = self.layout.report_dir();
        let mut wrote = false;
        let emit = |name: &str, r: &Rendered| -> Result<()> {
            io::write_text(&dir.join(format!("{name}.txt")), &r.text)?;
            io::write_text(&dir.join(format!("{name}.csv")), &r.csv)
        };
        for f in [Frequency::Daily, Frequency::Weekly] {
            let fs = f.as_str();
            if self.layout.sorts(f).exists() {
                emit(&format!("sorts_{fs}"), &sort_table(&io::read_sorts(&self.layout.sorts(f))?))?;
                wrote = true;
            }
            if self.layout.factors(f).exists() {
                let m = io::read_factor_matrix(&self.layout.factors(f))?;
                emit(&format!("correlations_{fs}"), &correlation_table(&factor_correlations(&m)?))?;
                wrote = true;
            }
            for (family, first) in MODEL_FAMILIES {
                let statics: Vec<Option<ModelColumn>> = (0..3)
                    .map(|i| {
                        let p = self.layout.static_result(f, family, first + i);
                        p.exists().then(|| io::read_static(&p).map(|e| ModelColumn::from(&e))).transpose()
                    })
                    .collect::<Result<_>>()?;
                let dynamics: Vec<Option<ModelColumn>> = (0..3)
                    .map(|i| {
                        let p = self.layout.dynamic_result(f, family, first + 3 + i);
                        p.exists().then(|| io::read_dynamic(&p).map(|e| ModelColumn::from(&e))).transpose()
                    })
                    .collect::<Result<_>>()?;
                if statics.iter().chain(&dynamics).any(Option::is_some) {
                    emit(&format!("{family}_{fs}"), &results_table(first, &statics, &dynamics))?;
                    wrote = true;
                }
            }
        }
        if wrote {
            Ok(())
        } else {
            require(Stage::Report, &self.layout.sorts(self.config.sort.frequency), Stage::Sort)
        }
    }
}

/// Runs `stages` under `config`.
pub fn run_pipeline(config: RunConfig, stages: &[Stage]) -> Result<()> {
    Pipeline::new(config).run(stages)
}

/// Every file under `dir` (relative path → bytes), for comparing runs.
pub fn snapshot(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                out.insert(p.strip_prefix(dir).expect("under dir").to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}
