//! DT-NT-DT execution loop.
//!
//! At each step `i` the band is built from the policy state at `t_i`, the
//! held position is clamped into it, and the step earns
//! `ũ(θ_i ΔX_i) − ε |θ_i − θ_{i−1}|`. The cost of a trade is charged at the
//! step where the trade is decided, so the initial trade out of
//! `initial_position` is included and no trade is made at `t_N`.

use serde::{Deserialize, Serialize};

use crate::banding::{displacement, half_width, make_band, Band, CostSpec};
use crate::error::{invalid, Error, Result};
use crate::models::MarketPath;
use crate::policy::{utility, Gearing, PolicyState};

/// Clamp into the band, or hold if already inside.
#[inline]
pub fn apply_band(current: f64, band: &Band) -> f64 {
    if current < band.lower {
        band.lower
    } else if current > band.upper {
        band.upper
    } else {
        current
    }
}

/// Whole-contract variant: trades to the integer nearest the crossed edge
/// that still lies inside the band. A band too narrow to contain an integer
/// rounds the edge to nearest, ties going toward the current position.
pub fn apply_band_whole(current: f64, band: &Band) -> f64 {
    if band.contains(current) {
        return current;
    }
    let below = current < band.lower;
    let inner = if below { band.lower.ceil() } else { band.upper.floor() };
    if band.contains(inner) {
        return inner;
    }
    let edge = if below { band.lower } else { band.upper };
    let (lo, hi) = (edge.floor(), edge.ceil());
    let d_lo = edge - lo;
    let d_hi = hi - edge;
    if d_lo < d_hi || (d_lo == d_hi && below) {
        lo
    } else {
        hi
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionMode {
    #[default]
    Fractional,
    WholeContracts,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BandRule {
    /// `λ δθ` around the target, optionally displaced.
    Formula { lambda: f64, use_displacement: bool },
    /// Fixed half-width around the target, ignoring `Γ̂₀²`.
    ConstantHalfWidth(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct BacktestConfig {
    pub cost: CostSpec,
    pub gearing: Gearing,
    pub rule: BandRule,
    pub initial_position: f64,
    pub mode: PositionMode,
}

impl BacktestConfig {
    pub fn new(cost: CostSpec, gearing: Gearing, lambda: f64) -> Self {
        Self {
            cost,
            gearing,
            rule: BandRule::Formula {
                lambda,
                use_displacement: false,
            },
            initial_position: 0.0,
            mode: PositionMode::Fractional,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.rule {
            BandRule::Formula { lambda, .. } if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(invalid(format!("lambda must be >= 0, got {lambda}")))
            }
            BandRule::ConstantHalfWidth(w) if !(w >= 0.0 && w.is_finite()) => {
                Err(invalid(format!("half-width must be >= 0, got {w}")))
            }
            _ if !self.initial_position.is_finite() => Err(invalid("initial position must be finite")),
            _ => Ok(()),
        }
    }
}

/// Scalar outcome of a backtest.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BacktestSummary {
    pub v_emp: f64,
    pub cost_paid: f64,
    pub turnover: f64,
    pub mean_buffer_width: f64,
    /// `Σ θ_i ΔX_i` before costs.
    pub gross_pnl: f64,
    /// `Σ ũ(θ_i ΔX_i)` before costs.
    pub gross_utility: f64,
    pub n_trades: usize,
}

/// Full per-step record of a backtest.
#[derive(Clone, Debug, PartialEq)]
pub struct BacktestResult {
    /// `positions[0]` is the initial position, `positions[i + 1]` is held over `[t_i, t_{i+1}]`.
    pub positions: Vec<f64>,
    /// `trades[i] = positions[i + 1] − positions[i]`.
    pub trades: Vec<f64>,
    pub targets: Vec<f64>,
    /// Band in force at each decision step; `None` while no band exists yet.
    pub bands: Vec<Option<Band>>,
    pub account_curve: Vec<f64>,
    pub summary: BacktestSummary,
}

impl BacktestResult {
    pub fn v_emp(&self) -> f64 {
        self.summary.v_emp
    }

    pub fn cost_paid(&self) -> f64 {
        self.summary.cost_paid
    }

    pub fn turnover(&self) -> f64 {
        self.summary.turnover
    }

    pub fn mean_buffer_width(&self) -> f64 {
        self.summary.mean_buffer_width
    }
}

struct Recorder {
    positions: Vec<f64>,
    trades: Vec<f64>,
    bands: Vec<Option<Band>>,
    account_curve: Vec<f64>,
}

fn check_aligned(x: &[f64], policy: &[PolicyState]) -> Result<()> {
    if x.len() < 2 {
        return Err(invalid("backtest needs at least two prices"));
    }
    if policy.len() != x.len() {
        return Err(Error::LengthMismatch {
            what: "policy states",
            expected: x.len(),
            actual: policy.len(),
        });
    }
    Ok(())
}

fn band_at(state: &PolicyState, cfg: &BacktestConfig) -> Option<Band> {
    match cfg.rule {
        BandRule::ConstantHalfWidth(w) => Some(make_band(state.target, w, 0.0, 1.0)),
        BandRule::Formula {
            lambda,
            use_displacement,
        } => {
            let gamma_sq = state.gamma_sq?;
            let width = half_width(cfg.cost, cfg.gearing, gamma_sq);
            let shift = match (use_displacement, state.target_drift) {
                (true, Some(drift)) => displacement(
                    cfg.cost,
                    cfg.gearing,
                    gamma_sq,
                    drift,
                    state.sigma_hat * state.sigma_hat,
                ),
                _ => 0.0,
            };
            Some(make_band(state.target, width, shift, lambda))
        }
    }
}

fn run_core(
    x: &[f64],
    policy: &[PolicyState],
    cfg: &BacktestConfig,
    mut rec: Option<&mut Recorder>,
) -> BacktestSummary {
    let eps = cfg.cost.epsilon;
    let scale = match cfg.rule {
        BandRule::Formula { lambda, .. } => lambda,
        BandRule::ConstantHalfWidth(_) => 1.0,
    };
    let mut held = match cfg.mode {
        PositionMode::Fractional => cfg.initial_position,
        PositionMode::WholeContracts => cfg.initial_position.round(),
    };
    if let Some(r) = rec.as_deref_mut() {
        r.positions.push(held);
    }

    let mut s = BacktestSummary::default();
    let mut width_sum = 0.0;
    let mut width_steps = 0usize;
    let mut last_band: Option<Band> = None;
    let mut net = 0.0;

    for i in 0..x.len() - 1 {
        let band = band_at(&policy[i], cfg).or(last_band);
        let next = match &band {
            Some(b) => match cfg.mode {
                PositionMode::Fractional => apply_band(held, b),
                PositionMode::WholeContracts => apply_band_whole(held, b),
            },
            None => held,
        };
        if let Some(b) = &band {
            width_sum += scale * b.half_width;
            width_steps += 1;
        }
        last_band = band;

        let trade = next - held;
        let step_cost = eps * trade.abs();
        let pnl = next * (x[i + 1] - x[i]);
        let u = utility(pnl, cfg.gearing);
        s.gross_pnl += pnl;
        s.gross_utility += u;
        s.cost_paid += step_cost;
        s.turnover += trade.abs();
        s.n_trades += (trade != 0.0) as usize;
        s.v_emp += u - step_cost;
        net += pnl - step_cost;
        held = next;

        if let Some(r) = rec.as_deref_mut() {
            r.positions.push(held);
            r.trades.push(trade);
            r.bands.push(band);
            r.account_curve.push(net);
        }
    }
    s.mean_buffer_width = if width_steps > 0 {
        width_sum / width_steps as f64
    } else {
        0.0
    };
    s
}

/// Backtest over raw price and policy series of equal length `N + 1`.
pub fn backtest(x: &[f64], policy: &[PolicyState], cfg: &BacktestConfig) -> Result<BacktestResult> {
    check_aligned(x, policy)?;
    cfg.validate()?;
    let n = x.len() - 1;
    let mut rec = Recorder {
        positions: Vec::with_capacity(n + 1),
        trades: Vec::with_capacity(n),
        bands: Vec::with_capacity(n),
        account_curve: Vec::with_capacity(n),
    };
    let summary = run_core(x, policy, cfg, Some(&mut rec));
    Ok(BacktestResult {
        positions: rec.positions,
        trades: rec.trades,
        targets: policy.iter().map(|p| p.target).collect(),
        bands: rec.bands,
        account_curve: rec.account_curve,
        summary,
    })
}

/// Same loop as [`backtest`] without per-step storage.
pub fn backtest_summary(x: &[f64], policy: &[PolicyState], cfg: &BacktestConfig) -> Result<BacktestSummary> {
    check_aligned(x, policy)?;
    cfg.validate()?;
    Ok(run_core(x, policy, cfg, None))
}

/// Backtest on a simulated or ingested path.
pub fn run_backtest(
    path: &MarketPath,
    policy: &[PolicyState],
    cost: CostSpec,
    g: Gearing,
    lambda: f64,
    initial_position: f64,
) -> Result<BacktestResult> {
    let cfg = BacktestConfig {
        initial_position,
        ..BacktestConfig::new(cost, g, lambda)
    };
    backtest(&path.x, policy, &cfg)
}
