//! Experiment configuration files (TOML).
//!
//! Parsing happens in two steps: serde reads the file, then [`ExperimentConfig::validate`]
//! checks every precondition and reports the offending line of the source.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{log_grid, GridBounds, SearchSpace};
use crate::kernels::KernelWidth;
use crate::regression::Hyperparameters;
use crate::systems::{SamplingProtocol, SystemSpec};

pub const MSD_TOML: &str = include_str!("../configs/msd.toml");
pub const PENDULUM_TOML: &str = include_str!("../configs/pendulum.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub initial_conditions: Vec<Vec<f64>>,
    pub h: f64,
    pub t_end: f64,
    pub include_t0: bool,
    pub noise_sigma: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    25
}

impl DataConfig {
    pub fn protocol(&self) -> SamplingProtocol {
        SamplingProtocol { h: self.h, t_end: self.t_end, include_t0: self.include_t0, substeps: self.substeps }
    }

    /// Samples per trajectory implied by the grid convention.
    pub fn points_per_trajectory(&self) -> usize {
        let steps = (self.t_end / self.h + 1e-9).floor() as usize;
        steps + usize::from(self.include_t0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub x0: Vec<f64>,
    pub h: f64,
    pub t_end: f64,
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedHypers {
    pub sigma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl std::str::FromStr for FixedHypers {
    type Err = Error;

    /// `σ,λ1,λ2`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidParameter(format!("expected sigma,lambda1,lambda2, got '{s}'")));
        }
        let parse = |p: &str| p.parse::<f64>().map_err(|e| Error::InvalidParameter(format!("'{p}': {e}")));
        Ok(Self { sigma: parse(parts[0])?, lambda1: parse(parts[1])?, lambda2: parse(parts[2])? })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default)]
    pub fixed: Option<FixedHypers>,
}

fn default_features() -> usize {
    200
}

/// Either explicit values or a log10-spaced range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Values(Vec<f64>),
    Log { from: f64, to: f64, points: usize },
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            GridSpec::Values(v) => v.clone(),
            GridSpec::Log { from, to, points } => log_grid(*from, *to, *points),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_sigma_grid")]
    pub sigma: GridSpec,
    #[serde(default = "default_lambda_grid")]
    pub lambda1: GridSpec,
    #[serde(default = "default_lambda_grid")]
    pub lambda2: GridSpec,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_sigma_grid() -> GridSpec {
    GridSpec::Log { from: -1.0, to: 1.0, points: 13 }
}

fn default_lambda_grid() -> GridSpec {
    GridSpec::Log { from: -8.0, to: 0.0, points: 17 }
}

fn default_folds() -> usize {
    5
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { sigma: default_sigma_grid(), lambda1: default_lambda_grid(), lambda2: default_lambda_grid(), folds: 5 }
    }
}

impl SearchConfig {
    pub fn space(&self) -> SearchSpace {
        SearchSpace {
            sigma: self.sigma.values(),
            lambda1: self.lambda1.values(),
            lambda2: self.lambda2.values(),
            folds: self.folds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_seeds() -> usize {
    10
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 0, seeds: default_seeds(), out: default_out() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub q: (f64, f64),
    pub p: (f64, f64),
    #[serde(default = "default_resolution")]
    pub resolution: (usize, usize),
    #[serde(default = "default_rollout_h")]
    pub rollout_h: f64,
}

fn default_resolution() -> (usize, usize) {
    (25, 25)
}

fn default_rollout_h() -> f64 {
    0.01
}

impl PlotConfig {
    pub fn bounds(&self) -> GridBounds {
        GridBounds { q: self.q, p: self.p }
    }
}

/// Pass criteria for `reproduce`, all on medians over seeds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceConfig {
    pub max_helmholtz_train_mse: Option<f64>,
    pub max_helmholtz_test_mse: Option<f64>,
    /// Required `baseline test MSE / Helmholtz test MSE`.
    pub min_baseline_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemSpec,
    pub data: DataConfig,
    pub test: TestConfig,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub run: RunConfig,
    pub plot: PlotConfig,
    #[serde(default)]
    pub acceptance: AcceptanceConfig,
}

fn default_model() -> ModelConfig {
    ModelConfig { features: default_features(), fixed: None }
}

/// 1-based line of byte `offset` in `src`.
fn line_at(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// 1-based line where `key` is assigned inside `[table]` (or the table
/// header itself when `key` is empty). 0 when not found, e.g. for defaults.
pub fn locate(src: &str, table: &str, key: &str) -> usize {
    let mut current = String::new();
    let mut header_line = 0;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == table {
                header_line = i + 1;
                if key.is_empty() {
                    return header_line;
                }
            }
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return i + 1;
                }
            }
        }
    }
    header_line
}

struct Checker<'a> {
    src: &'a str,
}

impl Checker<'_> {
    fn fail(&self, table: &str, key: &str, message: impl Into<String>) -> Error {
        Error::Config { line: locate(self.src, table, key), message: format!("{table}.{key}: {}", message.into()) }
    }

    fn positive(&self, table: &str, key: &str, v: f64) -> Result<()> {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(self.fail(table, key, format!("must be positive, got {v}")))
        }
    }

    fn non_negative(&self, table: &str, key: &str, v: f64) -> Result<()> {
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(self.fail(table, key, format!("must be non-negative, got {v}")))
        }
    }

    fn sigma(&self, table: &str, key: &str, v: f64) -> Result<()> {
        KernelWidth::new(v).map(|_| ()).map_err(|e| self.fail(table, key, e.to_string()))
    }

    fn state(&self, table: &str, key: &str, x: &[f64]) -> Result<()> {
        if x.len() != 2 || !x.iter().all(|v| v.is_finite()) {
            return Err(self.fail(table, key, format!("expected a finite 2-vector [q, p], got {x:?}")));
        }
        Ok(())
    }

    fn grid(&self, key: &str, grid: &GridSpec, sigma: bool) -> Result<()> {
        let values = grid.values();
        if values.is_empty() {
            return Err(self.fail("search", key, "grid is empty"));
        }
        for v in values {
            if sigma {
                self.sigma("search", key, v)?;
            } else {
                self.positive("search", key, v)?;
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Parses and validates `src`.
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| Error::Config {
            line: e.span().map_or(0, |s| line_at(src, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate_source(src)?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Bundled configuration for `msd` or `pendulum`.
    pub fn bundled(name: &str) -> Result<Self> {
        match name {
            "msd" => Self::from_toml(MSD_TOML),
            "pendulum" => Self::from_toml(PENDULUM_TOML),
            other => Err(Error::InvalidParameter(format!("unknown experiment '{other}' (expected msd or pendulum)"))),
        }
    }

    /// Re-checks preconditions after command-line overrides. Lines are not
    /// meaningful here.
    pub fn validate(&self) -> Result<()> {
        self.validate_source("")
    }

    fn validate_source(&self, src: &str) -> Result<()> {
        let c = Checker { src };
        match self.system {
            SystemSpec::Msd { m, k, d } => {
                c.positive("system", "m", m)?;
                c.positive("system", "k", k)?;
                c.non_negative("system", "d", d)?;
            }
            SystemSpec::Pendulum { m, l, d, g } => {
                c.positive("system", "m", m)?;
                c.positive("system", "l", l)?;
                c.non_negative("system", "d", d)?;
                c.non_negative("system", "g", g)?;
            }
        }

        let data = &self.data;
        if data.initial_conditions.is_empty() {
            return Err(c.fail("data", "initial_conditions", "at least one initial condition is required"));
        }
        for x in &data.initial_conditions {
            c.state("data", "initial_conditions", x)?;
        }
        c.positive("data", "h", data.h)?;
        c.positive("data", "t_end", data.t_end)?;
        if data.t_end < data.h {
            return Err(c.fail("data", "t_end", format!("horizon {} shorter than step {}", data.t_end, data.h)));
        }
        c.non_negative("data", "noise_sigma", data.noise_sigma)?;
        if data.substeps == 0 {
            return Err(c.fail("data", "substeps", "must be at least 1"));
        }

        c.state("test", "x0", &self.test.x0)?;
        c.positive("test", "h", self.test.h)?;
        if !(self.test.t_end.is_finite() && self.test.t_end >= self.test.h) {
            return Err(c.fail(
                "test",
                "t_end",
                format!("horizon {} shorter than step {}", self.test.t_end, self.test.h),
            ));
        }
        if self.test.substeps == 0 {
            return Err(c.fail("test", "substeps", "must be at least 1"));
        }

        let features = self.model.features;
        if features == 0 || !features.is_multiple_of(2) {
            return Err(c.fail("model", "features", format!("must be a positive even number, got {features}")));
        }
        if let Some(f) = self.model.fixed {
            Hyperparameters::new(f.sigma, f.lambda1, f.lambda2, features)
                .map_err(|e| c.fail("model", "fixed", e.to_string()))?;
        }

        c.grid("sigma", &self.search.sigma, true)?;
        c.grid("lambda1", &self.search.lambda1, false)?;
        c.grid("lambda2", &self.search.lambda2, false)?;
        let samples = data.initial_conditions.len() * data.points_per_trajectory();
        if self.search.folds < 2 || self.search.folds > samples {
            return Err(c.fail(
                "search",
                "folds",
                format!("must lie in [2, N = {samples}], got {}", self.search.folds),
            ));
        }

        if self.run.seeds == 0 {
            return Err(c.fail("run", "seeds", "must be at least 1"));
        }

        let plot = &self.plot;
        for (key, (lo, hi)) in [("q", plot.q), ("p", plot.p)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(c.fail("plot", key, format!("bounds must satisfy lo < hi, got ({lo}, {hi})")));
            }
        }
        if plot.resolution.0 < 2 || plot.resolution.1 < 2 {
            return Err(c.fail("plot", "resolution", "need at least 2 points per axis"));
        }
        c.positive("plot", "rollout_h", plot.rollout_h)?;

        let acc = &self.acceptance;
        for (key, v) in [
            ("max_helmholtz_train_mse", acc.max_helmholtz_train_mse),
            ("max_helmholtz_test_mse", acc.max_helmholtz_test_mse),
            ("min_baseline_ratio", acc.min_baseline_ratio),
        ] {
            if let Some(v) = v {
                c.positive("acceptance", key, v)?;
            }
        }
        Ok(())
    }

    /// Fixed hyperparameters as a full [`Hyperparameters`] value, if configured.
    pub fn fixed_hyperparameters(&self) -> Result<Option<Hyperparameters>> {
        self.model.fixed.map(|f| Hyperparameters::new(f.sigma, f.lambda1, f.lambda2, self.model.features)).transpose()
    }
}
