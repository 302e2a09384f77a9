//! TOML run configuration. Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use ntband::engine::PositionMode;
use ntband::experiments::{scenario, SweepSpec, DEFAULT_ROLLING_WINDOW, DEFAULT_SEED};
use ntband::market_data::{ContractMeta, PipelineOptions, SignalSpec};
use ntband::models::ModelSpec;
use ntband::policy::{GammaMode, Gearing};
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_PRECISION: usize = 9;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Significant digits for floats in CSV output.
    pub precision: Option<usize>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub sweep: SyntheticConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub backtest: RealConfig,
    #[serde(default)]
    pub calibrate: CalibrateConfig,
    /// Directory the config was read from; relative inputs resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A scenario, optionally with its pieces replaced. `model` alone defines a
/// custom experiment.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub scenario: Option<String>,
    pub model: Option<ModelSpec>,
    pub costs: Option<Vec<f64>>,
    pub lambdas: Option<Vec<f64>>,
    pub n_steps: Option<usize>,
    pub dt: Option<f64>,
    pub gamma_mode: Option<GammaMode>,
    pub gearing: Option<f64>,
    /// Also write the path-level companion file (sweep only).
    #[serde(default)]
    pub with_path: bool,
    /// Cost of the λ = 1 run shown in the companion file.
    pub path_epsilon: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: Option<String>,
    pub model: Option<ModelSpec>,
    pub n_steps: Option<usize>,
    pub dt: Option<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub scenario: Option<String>,
    pub model: Option<ModelSpec>,
    pub n_steps: Option<usize>,
    pub dt: Option<f64>,
    pub gamma_mode: Option<GammaMode>,
    pub gearing: Option<f64>,
    pub epsilon: Option<f64>,
    /// Constant half-widths to try.
    pub grid: Option<GridConfig>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealConfig {
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    pub point_value: Option<f64>,
    pub tick_size: Option<f64>,
    /// Cost in contract points.
    pub epsilon: Option<f64>,
    pub gearing: Option<f64>,
    pub lambda: Option<f64>,
    #[serde(default)]
    pub signals: Vec<SignalSpec>,
    pub window: Option<usize>,
    pub mode: Option<PositionMode>,
    pub vol_floor: Option<f64>,
    /// Grid for `--lambda-sweep`.
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    pub point_value: Option<f64>,
    pub tick_size: Option<f64>,
    pub epsilon: Option<f64>,
    pub gearing: Option<f64>,
    pub signal: Option<SignalSpec>,
    pub beta_grid: Option<Vec<f64>>,
    pub window: Option<usize>,
    pub mode: Option<PositionMode>,
    pub vol_floor: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingInput {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn precision(&self) -> Result<usize, CliError> {
        match self.precision.unwrap_or(DEFAULT_PRECISION) {
            p @ 1..=17 => Ok(p),
            p => Err(CliError::Config(format!("precision must be in 1..=17, got {p}"))),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn gearing(g: Option<f64>, default: Gearing) -> Result<Gearing, CliError> {
    g.map_or(Ok(default), |g| Gearing::new(g).map_err(CliError::from))
}

/// Builds the sweep spec for `name` (or the custom model) and applies
/// overrides. Returns the label used in file names.
pub fn synthetic_spec(
    section: &SyntheticConfig,
    scenario_flag: Option<&str>,
    seed: u64,
) -> Result<(String, SweepSpec), CliError> {
    let name = scenario_flag.map(str::to_string).or_else(|| section.scenario.clone());
    let (label, mut spec) = match (name, &section.model) {
        (Some(n), _) => {
            let spec = scenario(&n)?;
            (n, spec)
        }
        (None, Some(model)) => {
            let mut spec = scenario("a")?;
            spec.model = model.clone();
            ("custom".to_string(), spec)
        }
        (None, None) => return Err(CliError::Config("no scenario or model given".into())),
    };
    if let (Some(model), true) = (&section.model, label != "custom") {
        spec.model = model.clone();
    }
    if let Some(c) = &section.costs {
        spec.costs = c.clone();
    }
    if let Some(l) = &section.lambdas {
        spec.lambdas = l.clone();
    }
    spec.n_steps = section.n_steps.unwrap_or(spec.n_steps);
    spec.dt = section.dt.unwrap_or(spec.dt);
    spec.gamma_mode = section.gamma_mode.unwrap_or(spec.gamma_mode);
    spec.gearing = gearing(section.gearing, spec.gearing)?;
    spec.seed = seed;
    spec.validate()?;
    Ok((label, spec))
}

impl From<&SimulateConfig> for SyntheticConfig {
    fn from(s: &SimulateConfig) -> Self {
        Self {
            scenario: s.scenario.clone(),
            model: s.model.clone(),
            n_steps: s.n_steps,
            dt: s.dt,
            ..Self::default()
        }
    }
}

impl From<&OracleConfig> for SyntheticConfig {
    fn from(s: &OracleConfig) -> Self {
        Self {
            scenario: s.scenario.clone(),
            model: s.model.clone(),
            n_steps: s.n_steps,
            dt: s.dt,
            gamma_mode: s.gamma_mode,
            gearing: s.gearing,
            ..Self::default()
        }
    }
}

/// Settings shared by `backtest` and `calibrate` once defaults are applied.
pub struct RealSettings {
    pub inputs: Vec<PathBuf>,
    pub meta: ContractMeta,
    pub epsilon: f64,
    pub gearing: Gearing,
    pub options: PipelineOptions,
}

/// Fields `backtest` and `calibrate` have in common.
pub struct RealCommon<'a> {
    pub section: &'static str,
    pub inputs: &'a [PathBuf],
    pub point_value: Option<f64>,
    pub tick_size: Option<f64>,
    pub epsilon: Option<f64>,
    pub gearing: Option<f64>,
    pub window: Option<usize>,
    pub mode: Option<PositionMode>,
    pub vol_floor: Option<f64>,
}

impl RealConfig {
    pub fn common(&self) -> RealCommon<'_> {
        RealCommon {
            section: "backtest",
            inputs: &self.inputs,
            point_value: self.point_value,
            tick_size: self.tick_size,
            epsilon: self.epsilon,
            gearing: self.gearing,
            window: self.window,
            mode: self.mode,
            vol_floor: self.vol_floor,
        }
    }
}

impl CalibrateConfig {
    pub fn common(&self) -> RealCommon<'_> {
        RealCommon {
            section: "calibrate",
            inputs: &self.inputs,
            point_value: self.point_value,
            tick_size: self.tick_size,
            epsilon: self.epsilon,
            gearing: self.gearing,
            window: self.window,
            mode: self.mode,
            vol_floor: self.vol_floor,
        }
    }
}

/// Applies defaults; `--input` flags replace the configured inputs.
pub fn real_settings(cfg: &RunConfig, c: RealCommon<'_>, cli_inputs: &[PathBuf]) -> Result<RealSettings, CliError> {
    let section = c.section;
    let inputs: Vec<PathBuf> = if cli_inputs.is_empty() {
        c.inputs.iter().map(|p| cfg.resolve(p)).collect()
    } else {
        cli_inputs.to_vec()
    };
    if inputs.is_empty() {
        return Err(CliError::Config(format!(
            "{section}.inputs is empty; pass --input or set it in the config"
        )));
    }
    let pv = c
        .point_value
        .ok_or_else(|| CliError::Config(format!("{section}.point_value is required")))?;
    let mut meta = ContractMeta::new(pv)?;
    meta.tick_size = c.tick_size;
    Ok(RealSettings {
        inputs,
        meta,
        // half of a market one hundredth of a point wide
        epsilon: c.epsilon.unwrap_or(0.005),
        gearing: Gearing::new(
            c.gearing
                .ok_or_else(|| CliError::Config(format!("{section}.gearing is required")))?,
        )?,
        options: PipelineOptions {
            window: c.window.unwrap_or(DEFAULT_ROLLING_WINDOW),
            mode: c.mode.unwrap_or(PositionMode::WholeContracts),
            vol_floor: c.vol_floor,
        },
    })
}
