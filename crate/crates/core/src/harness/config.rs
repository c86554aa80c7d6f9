//! Experiment configuration, parsed from TOML with unknown keys rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{SamplingMethod, MIN_PILOT_SIZE};
use crate::simulate::{CoefficientDist, ErrorDist, SimulationConfig};
use crate::tuning::LambdaGrid;

/// A row of the method list: a sampling scheme or the full-data fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "unif")]
    Unif,
    #[serde(rename = "flopt")]
    FLopt,
    #[serde(rename = "faopt")]
    FAopt,
    #[serde(rename = "full")]
    Full,
}

impl Method {
    pub fn sampling(self) -> Option<SamplingMethod> {
        match self {
            Method::Unif => Some(SamplingMethod::Unif),
            Method::FLopt => Some(SamplingMethod::FLopt),
            Method::FAopt => Some(SamplingMethod::FAopt),
            Method::Full => None,
        }
    }

    pub(crate) fn salt(self) -> u64 {
        match self {
            Method::Unif => 1,
            Method::FLopt => 2,
            Method::FAopt => 3,
            Method::Full => 4,
        }
    }
}

impl From<SamplingMethod> for Method {
    fn from(m: SamplingMethod) -> Self {
        match m {
            SamplingMethod::Unif => Method::Unif,
            SamplingMethod::FLopt => Method::FLopt,
            SamplingMethod::FAopt => Method::FAopt,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sampling() {
            Some(m) => m.fmt(f),
            None => f.write_str("Full"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(Method::Full);
        }
        s.parse::<SamplingMethod>().map(Method::from)
    }
}

/// Smoothing level: a fixed value or GACV over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LambdaRaw", into = "LambdaRaw")]
pub enum LambdaSpec {
    Fixed(f64),
    Gacv,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LambdaRaw {
    Value(f64),
    Name(String),
}

impl TryFrom<LambdaRaw> for LambdaSpec {
    type Error = String;

    fn try_from(raw: LambdaRaw) -> std::result::Result<Self, String> {
        match raw {
            LambdaRaw::Value(v) if v.is_finite() && v >= 0.0 => Ok(LambdaSpec::Fixed(v)),
            LambdaRaw::Value(v) => Err(format!("lambda must be finite and >= 0, got {v}")),
            LambdaRaw::Name(s) if s == "gacv" => Ok(LambdaSpec::Gacv),
            LambdaRaw::Name(s) => Err(format!("lambda must be a number or \"gacv\", got {s:?}")),
        }
    }
}

impl From<LambdaSpec> for LambdaRaw {
    fn from(l: LambdaSpec) -> Self {
        match l {
            LambdaSpec::Fixed(v) => LambdaRaw::Value(v),
            LambdaSpec::Gacv => LambdaRaw::Name("gacv".into()),
        }
    }
}

impl FromStr for LambdaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "gacv" {
            return Ok(LambdaSpec::Gacv);
        }
        let v: f64 = s.parse().map_err(|_| {
            Error::Config(format!("lambda must be a number or \"gacv\", got {s:?}"))
        })?;
        LambdaSpec::try_from(LambdaRaw::Value(v)).map_err(Error::Config)
    }
}

/// Where GACV tuning happens when `lambda = "gacv"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GacvScope {
    /// Once per τ on an FLopt subsample of the largest r; every method,
    /// repetition and the full-data reference share the value.
    #[default]
    #[serde(rename = "shared")]
    Shared,
    /// Separately for each repetition on its own subsample; the full-data
    /// reference is tuned on the full data.
    #[serde(rename = "repetition")]
    Repetition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default = "default_grid_lo")]
    pub lo: f64,
    #[serde(default = "default_grid_hi")]
    pub hi: f64,
    #[serde(default = "default_grid_points")]
    pub points: usize,
}

fn default_grid_lo() -> f64 {
    1e-6
}
fn default_grid_hi() -> f64 {
    1e2
}
fn default_grid_points() -> usize {
    17
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            values: None,
            lo: default_grid_lo(),
            hi: default_grid_hi(),
            points: default_grid_points(),
        }
    }
}

impl GridSpec {
    pub fn resolve(&self) -> Result<LambdaGrid> {
        let grid = match &self.values {
            Some(v) => LambdaGrid::new(v.clone()),
            None => LambdaGrid::log_spaced(self.lo, self.hi, self.points),
        };
        grid.map_err(|e| Error::Config(format!("lambda grid: {e}")))
    }
}

/// Simulation settings for `mode = "simulate"`; the seed comes from the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub n: usize,
    #[serde(default = "default_m_test")]
    pub m_test: usize,
    pub coefficients: CoefficientDist,
    pub errors: ErrorDist,
    #[serde(default = "default_generator_basis")]
    pub generator_basis_size: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
}

fn default_m_test() -> usize {
    1000
}
fn default_generator_basis() -> usize {
    10
}
fn default_grid_size() -> usize {
    100
}
fn default_noise_scale() -> f64 {
    1.0
}

impl SimulationSpec {
    pub fn to_config(&self, seed: u64) -> SimulationConfig {
        SimulationConfig {
            n: self.n,
            m_test: self.m_test,
            coefficients: self.coefficients,
            errors: self.errors,
            generator_basis_size: self.generator_basis_size,
            grid_size: self.grid_size,
            seed,
            noise_scale: self.noise_scale,
        }
    }
}

/// Input files for `mode = "real"`.
///
/// Either `curves` (one curve per row on a shared grid) or `raw`
/// (`id,time,value` long format, smoothed with `fourier_basis` terms onto
/// `grid_points` points) must be given. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default)]
    pub curves: Option<PathBuf>,
    #[serde(default)]
    pub raw: Option<PathBuf>,
    pub responses: PathBuf,
    #[serde(default)]
    pub test_curves: Option<PathBuf>,
    #[serde(default)]
    pub test_responses: Option<PathBuf>,
    #[serde(default = "default_fourier_basis")]
    pub fourier_basis: usize,
    #[serde(default = "default_grid_size")]
    pub grid_points: usize,
    /// Observation time span mapped onto [0, 1]; defaults to the observed range.
    #[serde(default)]
    pub time_range: Option<(f64, f64)>,
}

fn default_fourier_basis() -> usize {
    21
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "simulate")]
    Simulate,
    #[serde(rename = "real")]
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub taus: Vec<f64>,
    pub r: Vec<usize>,
    pub methods: Vec<Method>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Interior knots `K`; `⌈n^{1/4}⌉` when absent.
    #[serde(default)]
    pub knots: Option<usize>,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_penalty_order")]
    pub penalty_order: usize,
    pub lambda: LambdaSpec,
    #[serde(default)]
    pub lambda_grid: GridSpec,
    #[serde(default)]
    pub gacv_scope: GacvScope,
    #[serde(default = "default_pilot")]
    pub pilot_size: usize,
    #[serde(default)]
    pub write_plans: bool,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub data: Option<DataSpec>,
}

fn default_repetitions() -> usize {
    1
}
fn default_degree() -> usize {
    3
}
fn default_penalty_order() -> usize {
    2
}
fn default_pilot() -> usize {
    MIN_PILOT_SIZE
}

/// Points in the β evaluation grid written to `beta_curves.csv`.
pub const EVAL_POINTS: usize = 200;

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec file; relative data paths are rebased onto its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut spec = Self::from_toml(&text)?;
        if let (Some(data), Some(dir)) = (spec.data.as_mut(), path.parent()) {
            data.rebase(dir);
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.taus.is_empty() {
            return cfg("taus is empty".into());
        }
        if let Some(t) = self.taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return cfg(format!("tau {t} is outside (0, 1)"));
        }
        if self.methods.is_empty() {
            return cfg("methods is empty".into());
        }
        let subsampling = self.methods.iter().any(|m| m.sampling().is_some());
        if subsampling && self.r.is_empty() {
            return cfg("r is empty".into());
        }
        if self.r.contains(&0) {
            return cfg("subsample sizes must be positive".into());
        }
        if self.repetitions == 0 {
            return cfg("repetitions must be positive".into());
        }
        if self.knots == Some(0) && self.degree == 0 {
            return cfg("a degree-0 basis needs at least one interior knot".into());
        }
        if self.penalty_order > self.degree {
            return cfg(format!(
                "penalty order {} exceeds degree {}",
                self.penalty_order, self.degree
            ));
        }
        if self.pilot_size < MIN_PILOT_SIZE {
            return cfg(format!("pilot_size must be at least {MIN_PILOT_SIZE}"));
        }
        self.lambda_grid.resolve()?;
        match self.mode {
            Mode::Simulate => {
                let Some(sim) = &self.simulation else {
                    return cfg("mode \"simulate\" needs a [simulation] table".into());
                };
                if self.data.is_some() {
                    return cfg("mode \"simulate\" does not take a [data] table".into());
                }
                sim.to_config(self.seed)
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
                self.check_sizes(sim.n)?;
            }
            Mode::Real => {
                let Some(data) = &self.data else {
                    return cfg("mode \"real\" needs a [data] table".into());
                };
                if self.simulation.is_some() {
                    return cfg("mode \"real\" does not take a [simulation] table".into());
                }
                if data.curves.is_some() == data.raw.is_some() {
                    return cfg("[data] needs exactly one of curves or raw".into());
                }
                if data.test_curves.is_some() != data.test_responses.is_some() {
                    return cfg("test_curves and test_responses go together".into());
                }
            }
        }
        Ok(())
    }

    /// Checks subsample and pilot sizes against the training size.
    pub fn check_sizes(&self, n: usize) -> Result<()> {
        if let Some(r) = self.r.iter().find(|r| **r > n) {
            return Err(Error::Config(format!("subsample size {r} exceeds n = {n}")));
        }
        if self.methods.contains(&Method::FAopt) && self.pilot_size > n {
            return Err(Error::Config(format!(
                "pilot size {} exceeds n = {n}",
                self.pilot_size
            )));
        }
        Ok(())
    }

    /// `K` from the config, or `⌈n^{1/4}⌉`.
    pub fn resolved_knots(&self, n: usize) -> usize {
        self.knots
            .unwrap_or_else(|| ((n as f64).powf(0.25) - 1e-9).ceil().max(1.0) as usize)
    }
}

/// Reads a standalone [`SimulationConfig`] TOML file.
pub fn load_simulation_config(path: impl AsRef<Path>) -> Result<SimulationConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: SimulationConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

impl DataSpec {
    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for p in [
            &mut self.curves,
            &mut self.raw,
            &mut self.test_curves,
            &mut self.test_responses,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.responses);
    }
}
