//! λ-sweeps over the theoretical half-width and a brute-force constant-band
//! oracle.
//!
//! One long path is simulated per seed and reused across every `(ε, λ)`
//! cell, so cells differ only in the band, never in the noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banding::CostSpec;
use crate::engine::{backtest_summary, BacktestConfig, BandRule};
use crate::error::{invalid, Error, Result};
use crate::models::{simulate, Coupling, FactorSpec, MarketPath, ModelKind, ModelSpec};
use crate::policy::{model_policy, GammaMode, Gearing, PolicyState};

pub const DEFAULT_SEED: u64 = 20_120_601;
pub const DEFAULT_STEPS: usize = 1 << 20;
pub const DEFAULT_ROLLING_WINDOW: usize = 250;

/// 13 log-spaced multipliers from 1/4 to 4; the middle one is exactly 1.
pub fn default_lambdas() -> Vec<f64> {
    (0..13).map(|k| 4f64.powf((k as f64 - 6.0) / 6.0)).collect()
}

pub fn default_costs() -> Vec<f64> {
    vec![0.02, 0.05, 0.1, 0.2, 0.5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub model: ModelSpec,
    pub costs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub n_steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub gamma_mode: GammaMode,
    pub gearing: Gearing,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.costs.is_empty() {
            return Err(invalid("sweep needs at least one cost and one lambda"));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(invalid("lambdas must be finite and >= 0"));
        }
        if self.lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("lambdas must be strictly ascending"));
        }
        if !self.lambdas.contains(&1.0) {
            return Err(invalid("lambdas must include 1"));
        }
        for &c in &self.costs {
            CostSpec::new(c)?;
        }
        if self.n_steps == 0 {
            return Err(invalid("n_steps must be > 0"));
        }
        self.model.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub lambda: f64,
    pub mean_buffer_width: f64,
    pub v_emp: f64,
    pub turnover: f64,
    pub is_lambda_one: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepCurve {
    /// Ordered by cost, then by lambda.
    pub rows: Vec<SweepRow>,
}

impl SweepCurve {
    pub fn rows_for(&self, epsilon: f64) -> impl Iterator<Item = &SweepRow> + '_ {
        self.rows.iter().filter(move |r| r.epsilon == epsilon)
    }

    pub fn at_lambda_one(&self, epsilon: f64) -> Option<&SweepRow> {
        self.rows_for(epsilon).find(|r| r.is_lambda_one)
    }

    pub fn best(&self, epsilon: f64) -> Option<&SweepRow> {
        self.rows_for(epsilon).max_by(|a, b| a.v_emp.total_cmp(&b.v_emp))
    }
}

/// A sweep together with the path and policy it was run on.
pub struct SweepRun {
    pub curve: SweepCurve,
    pub path: MarketPath,
    pub policy: Vec<PolicyState>,
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepCurve> {
    run_sweep_full(spec).map(|r| r.curve)
}

pub fn run_sweep_full(spec: &SweepSpec) -> Result<SweepRun> {
    spec.validate()?;
    let path = simulate(&spec.model, spec.n_steps, spec.dt, spec.seed)?;
    let policy = model_policy(&spec.model, &path, spec.gearing, spec.gamma_mode)?;
    let curve = sweep_on(&path, &policy, &spec.costs, &spec.lambdas, spec.gearing)?;
    Ok(SweepRun { curve, path, policy })
}

/// Evaluates every `(ε, λ)` cell on a fixed path and policy.
pub fn sweep_on(
    path: &MarketPath,
    policy: &[PolicyState],
    costs: &[f64],
    lambdas: &[f64],
    g: Gearing,
) -> Result<SweepCurve> {
    let cells: Vec<(f64, f64)> = costs
        .iter()
        .flat_map(|&e| lambdas.iter().map(move |&l| (e, l)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(epsilon, lambda)| {
            let cfg = BacktestConfig::new(CostSpec::new(epsilon)?, g, lambda);
            let s = backtest_summary(&path.x, policy, &cfg)?;
            Ok(SweepRow {
                epsilon,
                lambda,
                mean_buffer_width: s.mean_buffer_width,
                v_emp: s.v_emp,
                turnover: s.turnover,
                is_lambda_one: lambda == 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepCurve { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub best_width: f64,
    pub best_v_emp: f64,
    /// `(half_width, v_emp)` for every grid point.
    pub values: Vec<(f64, f64)>,
}

/// Grid search over constant half-widths `[target − w, target + w]`.
/// Ties keep the smaller width.
pub fn brute_force_band_oracle(
    path: &MarketPath,
    policy: &[PolicyState],
    cost: CostSpec,
    g: Gearing,
    width_grid: &[f64],
) -> Result<OracleResult> {
    if width_grid.is_empty() {
        return Err(invalid("width grid is empty"));
    }
    if width_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("width grid must be strictly ascending"));
    }
    let values = width_grid
        .par_iter()
        .map(|&w| {
            let cfg = BacktestConfig {
                rule: BandRule::ConstantHalfWidth(w),
                ..BacktestConfig::new(cost, g, 1.0)
            };
            Ok((w, backtest_summary(&path.x, policy, &cfg)?.v_emp))
        })
        .collect::<Result<Vec<_>>>()?;
    let (best_width, best_v_emp) =
        values.iter().copied().fold(
            (f64::NAN, f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        );
    Ok(OracleResult {
        best_width,
        best_v_emp,
        values,
    })
}

/// Evenly spaced grid `start, start + step, ...` up to `stop` inclusive.
pub fn width_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}

fn diag_corr(dim: usize) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Model of a named synthesized scenario.
pub fn scenario_model(name: &str) -> Result<ModelSpec> {
    let linear = ModelSpec::linear(0.2, 0.02, 0.5, 0.0);
    let stoch_vol = |coupling| ModelSpec {
        kind: ModelKind::StochasticVol,
        beta: vec![0.2],
        sigma_bar: 0.5,
        eta: 0.4,
        factors: vec![FactorSpec::returns(0.02), FactorSpec::volatility(0.005)],
        corr: diag_corr(3),
        coupling: vec![coupling],
    };
    let model = match name {
        "a" => linear,
        "b" => ModelSpec {
            kind: ModelKind::Nonlinear,
            coupling: vec![Coupling::Tanh2],
            ..linear
        },
        "c" => stoch_vol(Coupling::Identity),
        "d" => stoch_vol(Coupling::Tanh2),
        "e" => {
            let mut corr = diag_corr(4);
            corr[1][2] = 0.5;
            corr[2][1] = 0.5;
            ModelSpec {
                kind: ModelKind::TwoFactorStochasticVol,
                beta: vec![0.1, 0.1],
                sigma_bar: 0.5,
                eta: 0.4,
                factors: vec![
                    FactorSpec::returns(0.02),
                    FactorSpec::returns(0.005),
                    FactorSpec::volatility(0.005),
                ],
                corr,
                coupling: vec![Coupling::Tanh2, Coupling::Tanh2],
            }
        }
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(model)
}

/// Fully parameterized sweep for scenarios `a`–`e`.
pub fn scenario(name: &str) -> Result<SweepSpec> {
    let model = scenario_model(name)?;
    let gamma_mode = if name == "e" {
        GammaMode::Rolling {
            window: DEFAULT_ROLLING_WINDOW,
        }
    } else {
        GammaMode::ClosedForm
    };
    Ok(SweepSpec {
        model,
        costs: default_costs(),
        lambdas: default_lambdas(),
        n_steps: DEFAULT_STEPS,
        dt: 1.0,
        seed: DEFAULT_SEED,
        gamma_mode,
        gearing: Gearing::new(1.0)?,
    })
}
