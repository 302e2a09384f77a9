//! Real price series: CSV ingestion, exponential-kernel momentum, EWMA
//! volatility, β calibration and the causal backtest pipeline.
//!
//! Prices and costs are in contract points, gearing in money. The contract
//! point value converts between the two, so positions come out in
//! contracts. One row is one business day and `dt = 1`.
//!
//! `σ̂` is seeded from the first [`VOL_WARMUP`] returns, so no trade is
//! ever decided before that index. Every other quantity at step `i` uses
//! data with index `≤ i` only.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banding::CostSpec;
use crate::engine::{backtest, backtest_summary, BacktestConfig, BacktestResult, PositionMode};
use crate::error::{invalid, Error, Result};
use crate::experiments::{SweepRow, DEFAULT_ROLLING_WINDOW};
use crate::models::Coupling;
use crate::policy::{gamma_sq_rolling_with, Gearing, PolicyState, Warmup};

/// Returns used to seed the EWMA variance.
pub const VOL_WARMUP: usize = 20;
pub const DEFAULT_DECAY: f64 = 1.0 / 50.0;
pub const DEFAULT_VOL_DECAY: f64 = 1.0 / 33.0;
/// Floor on `σ̂` as a fraction of the warm-up volatility.
pub const VOL_FLOOR_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractMeta {
    /// Money per contract point.
    pub point_value: f64,
    #[serde(default)]
    pub tick_size: Option<f64>,
}

impl ContractMeta {
    pub fn new(point_value: f64) -> Result<Self> {
        let meta = Self {
            point_value,
            tick_size: None,
        };
        meta.validate()?;
        Ok(meta)
    }

    fn validate(&self) -> Result<()> {
        if !(self.point_value > 0.0 && self.point_value.is_finite()) {
            return Err(invalid(format!("point value must be > 0, got {}", self.point_value)));
        }
        Ok(())
    }
}

/// A pre-stitched daily series with strictly increasing dates.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSeries {
    timestamps: Vec<NaiveDate>,
    prices: Vec<f64>,
    meta: ContractMeta,
}

#[derive(Deserialize)]
struct PriceRow {
    date: String,
    price: Option<String>,
}

impl PriceSeries {
    pub fn new(timestamps: Vec<NaiveDate>, prices: Vec<f64>, meta: ContractMeta) -> Result<Self> {
        meta.validate()?;
        if timestamps.len() != prices.len() {
            return Err(Error::LengthMismatch {
                what: "prices",
                expected: timestamps.len(),
                actual: prices.len(),
            });
        }
        if let Some(k) = timestamps.windows(2).position(|w| w[0] >= w[1]) {
            return Err(invalid(format!(
                "dates must be strictly increasing ({} then {})",
                timestamps[k],
                timestamps[k + 1]
            )));
        }
        if let Some(k) = prices.iter().position(|p| !p.is_finite()) {
            return Err(invalid(format!("price {k} is not finite")));
        }
        Ok(Self {
            timestamps,
            prices,
            meta,
        })
    }

    /// Reads a `date,price` CSV. Rows with a missing or unparseable price are
    /// rejected rather than filled.
    pub fn from_csv_reader<R: Read>(reader: R, meta: ContractMeta) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "price" {
            return Err(Error::BadPriceRow {
                line: 1,
                reason: format!(
                    "expected header `date,price`, found `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut timestamps = Vec::new();
        let mut prices = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let row: PriceRow = rec.deserialize(Some(&headers))?;
            let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|e| Error::BadPriceRow {
                line,
                reason: format!("bad date `{}`: {e}", row.date),
            })?;
            let raw = row.price.unwrap_or_default();
            if raw.is_empty() {
                return Err(Error::BadPriceRow {
                    line,
                    reason: "missing price".into(),
                });
            }
            let price: f64 = raw.parse().map_err(|_| Error::BadPriceRow {
                line,
                reason: format!("bad price `{raw}`"),
            })?;
            if !price.is_finite() {
                return Err(Error::BadPriceRow {
                    line,
                    reason: format!("non-finite price `{raw}`"),
                });
            }
            if let Some(prev) = timestamps.last() {
                if date <= *prev {
                    return Err(Error::BadPriceRow {
                        line,
                        reason: format!("date {date} does not follow {prev}"),
                    });
                }
            }
            timestamps.push(date);
            prices.push(price);
        }
        Self::new(timestamps, prices, meta)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, meta: ContractMeta) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(std::io::BufReader::new(file), meta)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "price"])?;
        for (d, p) in self.timestamps.iter().zip(&self.prices) {
            w.write_record([d.format("%Y-%m-%d").to_string(), format!("{p}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn meta(&self) -> ContractMeta {
        self.meta
    }

    /// Same series with prices replaced, dates and metadata kept.
    pub fn with_prices(&self, prices: Vec<f64>) -> Result<Self> {
        Self::new(self.timestamps.clone(), prices, self.meta)
    }
}

/// One momentum factor: kernel speed, coupling, strength, and the EWMA rate
/// of its volatility estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub decay: f64,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default)]
    pub beta: f64,
    pub vol_decay: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            decay: DEFAULT_DECAY,
            coupling: Coupling::Identity,
            beta: 0.0,
            vol_decay: DEFAULT_VOL_DECAY,
        }
    }
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(invalid(format!("decay must be > 0, got {}", self.decay)));
        }
        if !(self.vol_decay > 0.0 && self.vol_decay.is_finite()) {
            return Err(invalid(format!("vol_decay must be > 0, got {}", self.vol_decay)));
        }
        if !self.beta.is_finite() {
            return Err(invalid("beta must be finite"));
        }
        Ok(())
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }
}

/// `S_t = e^{−a} S_{t−1} + ΔX_t`, `S_0 = 0`.
pub fn kernel_sum(x: &[f64], decay: f64) -> Vec<f64> {
    let phi = (-decay).exp();
    let mut s = 0.0;
    let mut out = Vec::with_capacity(x.len());
    out.extend(x.first().map(|_| 0.0));
    for w in x.windows(2) {
        s = phi * s + (w[1] - w[0]);
        out.push(s);
    }
    out
}

/// Kernel momentum normalized to unit variance under Brownian prices:
/// `Z_t = S_t / (σ̂_t √(1/2a))`.
pub fn momentum_signal(prices: &PriceSeries, decay: f64, sigma_hat: &[f64]) -> Result<Vec<f64>> {
    if !(decay > 0.0 && decay.is_finite()) {
        return Err(invalid(format!("decay must be > 0, got {decay}")));
    }
    if sigma_hat.len() != prices.len() {
        return Err(Error::LengthMismatch {
            what: "sigma_hat",
            expected: prices.len(),
            actual: sigma_hat.len(),
        });
    }
    if let Some(k) = sigma_hat.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(invalid(format!(
            "sigma_hat must be > 0, got {} at step {k}",
            sigma_hat[k]
        )));
    }
    let norm = (0.5 / decay).sqrt();
    Ok(kernel_sum(prices.prices(), decay)
        .into_iter()
        .zip(sigma_hat)
        .map(|(s, sig)| s / (sig * norm))
        .collect())
}

fn warmup_variance(x: &[f64]) -> Result<f64> {
    if x.len() <= VOL_WARMUP {
        return Err(invalid(format!(
            "volatility estimate needs at least {} prices, got {}",
            VOL_WARMUP + 1,
            x.len()
        )));
    }
    Ok(x[..=VOL_WARMUP].windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / VOL_WARMUP as f64)
}

/// One percent of the warm-up volatility.
pub fn default_vol_floor(prices: &PriceSeries) -> Result<f64> {
    let floor = VOL_FLOOR_FRACTION * warmup_variance(prices.prices())?.sqrt();
    if floor > 0.0 {
        Ok(floor)
    } else {
        Err(invalid("no price movement during the volatility warm-up"))
    }
}

/// `σ̂²_t = e^{−v} σ̂²_{t−1} + (1 − e^{−v}) ΔX_t²`, seeded with the mean
/// square of the first [`VOL_WARMUP`] returns and held there up to that
/// index, then floored.
pub fn ewma_volatility(prices: &PriceSeries, vol_decay: f64, floor: f64) -> Result<Vec<f64>> {
    if !(vol_decay > 0.0 && vol_decay.is_finite()) {
        return Err(invalid(format!("vol_decay must be > 0, got {vol_decay}")));
    }
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(invalid(format!("volatility floor must be > 0, got {floor}")));
    }
    let x = prices.prices();
    let mut var = warmup_variance(x)?;
    let keep = (-vol_decay).exp();
    let mut out = vec![var.sqrt().max(floor); VOL_WARMUP + 1];
    out.reserve(x.len() - VOL_WARMUP - 1);
    for w in x[VOL_WARMUP..].windows(2) {
        let r = w[1] - w[0];
        var = keep * var + (1.0 - keep) * r * r;
        out.push(var.sqrt().max(floor));
    }
    Ok(out)
}

/// Knobs of the real-data pipeline that are not part of the signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineOptions {
    pub window: usize,
    pub mode: PositionMode,
    /// `None` picks [`default_vol_floor`].
    pub vol_floor: Option<f64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_ROLLING_WINDOW,
            mode: PositionMode::WholeContracts,
            vol_floor: None,
        }
    }
}

/// The tradable in money and the per-step policy, ready for the engine.
#[derive(Clone, Debug, PartialEq)]
pub struct RealPolicy {
    pub x_money: Vec<f64>,
    pub policy: Vec<PolicyState>,
}

struct SignalInputs {
    sigma_points: Vec<f64>,
    coupled: Vec<f64>,
}

fn signal_inputs(prices: &PriceSeries, spec: &SignalSpec, opts: &PipelineOptions) -> Result<SignalInputs> {
    spec.validate()?;
    let floor = match opts.vol_floor {
        Some(f) => f,
        None => default_vol_floor(prices)?,
    };
    let sigma_points = ewma_volatility(prices, spec.vol_decay, floor)?;
    let z = momentum_signal(prices, spec.decay, &sigma_points)?;
    let coupled = z.iter().map(|&z| spec.coupling.apply(z)).collect();
    Ok(SignalInputs { sigma_points, coupled })
}

/// Target in contracts per unit β: `γ(Z_t) G / (σ̂_t · point value)`.
fn unit_targets(inp: &SignalInputs, g: Gearing, pv: f64) -> Vec<f64> {
    inp.coupled
        .iter()
        .zip(&inp.sigma_points)
        .map(|(c, s)| c * g.get() / (s * pv))
        .collect()
}

fn assemble(targets: Vec<f64>, gamma: Vec<Option<f64>>, sigma_money: &[f64]) -> Vec<PolicyState> {
    targets
        .into_iter()
        .zip(gamma)
        .zip(sigma_money)
        .enumerate()
        .map(|(i, ((target, gamma_sq), &sigma_hat))| PolicyState {
            target,
            gamma_sq: if i < VOL_WARMUP { None } else { gamma_sq },
            sigma_hat,
            target_drift: None,
        })
        .collect()
}

fn money(prices: &PriceSeries) -> Vec<f64> {
    let pv = prices.meta().point_value;
    prices.prices().iter().map(|p| p * pv).collect()
}

/// Targets from one or more signals, summed, with rolling `Γ̂₀²` that
/// stays undefined until a full window of past data exists.
pub fn real_policy(
    prices: &PriceSeries,
    specs: &[SignalSpec],
    g: Gearing,
    opts: &PipelineOptions,
) -> Result<RealPolicy> {
    if specs.is_empty() {
        return Err(invalid("at least one signal is required"));
    }
    let pv = prices.meta().point_value;
    let x_money = money(prices);
    let mut targets = vec![0.0; prices.len()];
    let mut sigma_money = Vec::new();
    for spec in specs {
        let inp = signal_inputs(prices, spec, opts)?;
        for (t, u) in targets.iter_mut().zip(unit_targets(&inp, g, pv)) {
            *t += spec.beta * u;
        }
        if sigma_money.is_empty() {
            sigma_money = inp.sigma_points.iter().map(|s| s * pv).collect();
        }
    }
    let gamma = gamma_sq_rolling_with(&targets, &x_money, opts.window, Warmup::NoTrade)?;
    let policy = assemble(targets, gamma, &sigma_money);
    Ok(RealPolicy { x_money, policy })
}

fn real_config(cost: CostSpec, g: Gearing, lambda: f64, pv: f64, opts: &PipelineOptions) -> Result<BacktestConfig> {
    Ok(BacktestConfig {
        mode: opts.mode,
        ..BacktestConfig::new(CostSpec::new(cost.epsilon * pv)?, g, lambda)
    })
}

/// Backtest of a calibrated signal on a price series, with whole-contract
/// positions. `cost` is in contract points.
pub fn build_real_backtest(
    prices: &PriceSeries,
    spec: &SignalSpec,
    cost: CostSpec,
    g: Gearing,
    lambda: f64,
) -> Result<BacktestResult> {
    build_real_backtest_with(
        prices,
        std::slice::from_ref(spec),
        cost,
        g,
        lambda,
        &PipelineOptions::default(),
    )
}

pub fn build_real_backtest_with(
    prices: &PriceSeries,
    specs: &[SignalSpec],
    cost: CostSpec,
    g: Gearing,
    lambda: f64,
    opts: &PipelineOptions,
) -> Result<BacktestResult> {
    let rp = real_policy(prices, specs, g, opts)?;
    let cfg = real_config(cost, g, lambda, prices.meta().point_value, opts)?;
    backtest(&rp.x_money, &rp.policy, &cfg)
}

/// λ-sweep of the theoretical band on one price series. Buffer widths are
/// in contracts; `epsilon` is reported in contract points.
pub fn real_lambda_sweep(
    prices: &PriceSeries,
    specs: &[SignalSpec],
    cost: CostSpec,
    g: Gearing,
    lambdas: &[f64],
    opts: &PipelineOptions,
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(invalid("lambda grid is empty"));
    }
    let rp = real_policy(prices, specs, g, opts)?;
    let pv = prices.meta().point_value;
    lambdas
        .par_iter()
        .map(|&lambda| {
            let cfg = real_config(cost, g, lambda, pv, opts)?;
            let s = backtest_summary(&rp.x_money, &rp.policy, &cfg)?;
            Ok(SweepRow {
                epsilon: cost.epsilon,
                lambda,
                mean_buffer_width: s.mean_buffer_width,
                v_emp: s.v_emp,
                turnover: s.turnover,
                is_lambda_one: lambda == 1.0,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub beta: f64,
    pub v_emp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub rows: Vec<CalibrationRow>,
    pub beta_hat: f64,
    pub best_v_emp: f64,
    /// Least-squares slope of standardized next-step returns on `γ(Z)`.
    pub regression_beta: f64,
}

/// β on the grid maximizing `V_emp` of the full λ = 1 backtest.
pub fn calibrate_beta(
    prices: &PriceSeries,
    spec: &SignalSpec,
    cost: CostSpec,
    g: Gearing,
    beta_grid: &[f64],
) -> Result<f64> {
    calibration_report(prices, spec, cost, g, beta_grid, &PipelineOptions::default()).map(|r| r.beta_hat)
}

/// Grid search keeping every value; ties go to the smaller `|β|`.
pub fn calibration_report(
    prices: &PriceSeries,
    spec: &SignalSpec,
    cost: CostSpec,
    g: Gearing,
    beta_grid: &[f64],
    opts: &PipelineOptions,
) -> Result<CalibrationReport> {
    if beta_grid.is_empty() {
        return Err(invalid("beta grid is empty"));
    }
    if let Some(b) = beta_grid.iter().find(|b| !b.is_finite()) {
        return Err(invalid(format!("beta grid value {b} is not finite")));
    }
    let inp = signal_inputs(prices, spec, opts)?;
    let pv = prices.meta().point_value;
    let x_money = money(prices);
    let unit = unit_targets(&inp, g, pv);
    let unit_gamma = gamma_sq_rolling_with(&unit, &x_money, opts.window, Warmup::NoTrade)?;
    let sigma_money: Vec<f64> = inp.sigma_points.iter().map(|s| s * pv).collect();
    let cfg = real_config(cost, g, 1.0, pv, opts)?;

    let rows = beta_grid
        .par_iter()
        .map(|&beta| {
            let targets = unit.iter().map(|u| beta * u).collect();
            // the rolling ratio is quadratic in β
            let gamma = unit_gamma.iter().map(|v| v.map(|v| beta * beta * v)).collect();
            let policy = assemble(targets, gamma, &sigma_money);
            let s = backtest_summary(&x_money, &policy, &cfg)?;
            Ok(CalibrationRow { beta, v_emp: s.v_emp })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = rows
        .iter()
        .copied()
        .reduce(|best, cur| {
            if cur.v_emp > best.v_emp || (cur.v_emp == best.v_emp && cur.beta.abs() < best.beta.abs()) {
                cur
            } else {
                best
            }
        })
        .expect("grid is nonempty");
    Ok(CalibrationReport {
        rows,
        beta_hat: best.beta,
        best_v_emp: best.v_emp,
        regression_beta: regression_slope(prices, &inp),
    })
}

fn regression_slope(prices: &PriceSeries, inp: &SignalInputs) -> f64 {
    let x = prices.prices();
    let (mut num, mut den) = (0.0, 0.0);
    for t in VOL_WARMUP..x.len() - 1 {
        let r = (x[t + 1] - x[t]) / inp.sigma_points[t];
        num += inp.coupled[t] * r;
        den += inp.coupled[t] * inp.coupled[t];
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Least-squares β from `ΔX_{t+1} / σ̂_t ≈ β γ(Z_t)`.
pub fn regression_beta(prices: &PriceSeries, spec: &SignalSpec, opts: &PipelineOptions) -> Result<f64> {
    let inp = signal_inputs(prices, spec, opts)?;
    Ok(regression_slope(prices, &inp))
}

/// Generator for a series whose drift is its own kernel momentum:
/// `ΔX_t = σ (β γ(Z_{t−1}) + ξ_t)`, `Z` built from `X` with decay `a` and
/// the true `σ`. Identity coupling is stable only when
/// `e^{−a} + β √(2a) < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSeries {
    pub beta: f64,
    pub decay: f64,
    pub sigma: f64,
    #[serde(default)]
    pub coupling: Coupling,
    pub n_steps: usize,
    pub start_price: f64,
    pub seed: u64,
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date range");
    }
    out
}

pub fn synthesize_series(spec: &SyntheticSeries, meta: ContractMeta) -> Result<PriceSeries> {
    if !(spec.decay > 0.0 && spec.sigma > 0.0 && spec.decay.is_finite() && spec.sigma.is_finite()) {
        return Err(invalid("synthetic series needs decay > 0 and sigma > 0"));
    }
    if spec.coupling == Coupling::Identity && (-spec.decay).exp() + spec.beta.abs() * (2.0 * spec.decay).sqrt() >= 1.0 {
        return Err(invalid("synthetic momentum is explosive for this beta and decay"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phi = (-spec.decay).exp();
    let norm = spec.sigma * (0.5 / spec.decay).sqrt();
    let mut prices = Vec::with_capacity(spec.n_steps + 1);
    let (mut x, mut s) = (spec.start_price, 0.0);
    prices.push(x);
    for _ in 0..spec.n_steps {
        let xi: f64 = StandardNormal.sample(&mut rng);
        let dx = spec.sigma * (spec.beta * spec.coupling.apply(s / norm) + xi);
        x += dx;
        s = phi * s + dx;
        prices.push(x);
    }
    let start = NaiveDate::from_ymd_opt(1990, 1, 1).expect("valid date");
    PriceSeries::new(business_days(start, prices.len()), prices, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn meta() -> ContractMeta {
        ContractMeta::new(1.0).unwrap()
    }

    fn series(prices: Vec<f64>) -> PriceSeries {
        let n = prices.len();
        PriceSeries::new(
            business_days(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), n),
            prices,
            meta(),
        )
        .unwrap()
    }

    fn brownian(n: usize, sigma: f64, seed: u64) -> PriceSeries {
        let spec = SyntheticSeries {
            beta: 0.0,
            decay: 0.1,
            sigma,
            coupling: Coupling::Identity,
            n_steps: n,
            start_price: 100.0,
            seed,
        };
        synthesize_series(&spec, meta()).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let s = brownian(50, 0.5, 1);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = PriceSeries::from_csv_reader(buf.as_slice(), meta()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let missing = "date,price\n2020-01-01,1.0\n2020-01-02,\n";
        match PriceSeries::from_csv_reader(missing.as_bytes(), meta()) {
            Err(Error::BadPriceRow { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("missing"));
            }
            other => panic!("{other:?}"),
        }
        let garbage = "date,price\n2020-01-01,abc\n";
        assert!(matches!(
            PriceSeries::from_csv_reader(garbage.as_bytes(), meta()),
            Err(Error::BadPriceRow { line: 2, .. })
        ));
        let unordered = "date,price\n2020-01-02,1\n2020-01-01,2\n";
        assert!(matches!(
            PriceSeries::from_csv_reader(unordered.as_bytes(), meta()),
            Err(Error::BadPriceRow { line: 3, .. })
        ));
        let header = "day,close\n2020-01-01,1\n";
        assert!(matches!(
            PriceSeries::from_csv_reader(header.as_bytes(), meta()),
            Err(Error::BadPriceRow { line: 1, .. })
        ));
        let bad_date = "date,price\n01/02/2020,1\n";
        assert!(PriceSeries::from_csv_reader(bad_date.as_bytes(), meta()).is_err());
    }

    #[test]
    fn constant_prices_give_zero_signal() {
        let s = series(vec![5.0; 40]);
        let z = momentum_signal(&s, 0.1, &vec![1.0; 40]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response() {
        let mut p = vec![0.0; 10];
        p[3..].iter_mut().for_each(|v| *v = 1.0);
        let a = 0.2;
        let z = momentum_signal(&series(p), a, &[1.0; 10]).unwrap();
        assert_eq!(z[2], 0.0);
        for t in 4..10 {
            assert_relative_eq!(z[t] / z[t - 1], (-a).exp(), max_relative = 1e-14);
        }
    }

    #[test]
    fn signal_rejects_nonpositive_vol() {
        let s = series(vec![1.0, 2.0, 3.0]);
        assert!(momentum_signal(&s, 0.1, &[1.0, 0.0, 1.0]).is_err());
        assert!(momentum_signal(&s, 0.1, &[1.0, 1.0]).is_err());
        assert!(momentum_signal(&s, 0.0, &[1.0; 3]).is_err());
    }

    #[test]
    fn normalized_signal_has_unit_variance() {
        let s = brownian(400_000, 0.7, 11);
        let z = momentum_signal(&s, 0.05, &vec![0.7; s.len()]).unwrap();
        let tail = &z[1000..];
        let var = tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64;
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn ewma_tracks_constant_vol() {
        let s = brownian(200_000, 0.5, 3);
        let v = ewma_volatility(&s, DEFAULT_VOL_DECAY, 1e-6).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5).abs() < 0.025, "mean {mean}");
    }

    #[test]
    fn ewma_floor_and_preconditions() {
        let mut p: Vec<f64> = (0..=VOL_WARMUP).map(|k| (k % 2) as f64).collect();
        p.extend(std::iter::repeat_n(1.0, 2000));
        let s = series(p);
        let floor = default_vol_floor(&s).unwrap();
        assert_relative_eq!(floor, 0.01, max_relative = 1e-12);
        let v = ewma_volatility(&s, 0.1, floor).unwrap();
        assert!(v.windows(2).skip(VOL_WARMUP).all(|w| w[1] <= w[0]));
        assert_eq!(*v.last().unwrap(), floor);
        assert!(ewma_volatility(&s, 0.1, 0.0).is_err());
        assert!(ewma_volatility(&series(vec![1.0; VOL_WARMUP]), 0.1, 1.0).is_err());
        assert!(ewma_volatility(&series(vec![1.0; VOL_WARMUP + 1]), 0.1, 1.0).is_ok());
        assert!(default_vol_floor(&series(vec![1.0; 30])).is_err());
    }

    #[test]
    fn singleton_grid() {
        let s = brownian(3000, 1.0, 5);
        let spec = SignalSpec::default();
        let b = calibrate_beta(
            &s,
            &spec,
            CostSpec::new(0.01).unwrap(),
            Gearing::new(50.0).unwrap(),
            &[0.2],
        )
        .unwrap();
        assert_eq!(b, 0.2);
        assert!(calibrate_beta(&s, &spec, CostSpec::new(0.01).unwrap(), Gearing::new(1.0).unwrap(), &[]).is_err());
    }

    #[test]
    fn pure_noise_picks_smallest_beta() {
        let s = brownian(20_000, 1.0, 8);
        let grid = [-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3];
        let r = calibration_report(
            &s,
            &SignalSpec::default(),
            CostSpec::new(0.05).unwrap(),
            Gearing::new(100.0).unwrap(),
            &grid,
            &PipelineOptions::default(),
        )
        .unwrap();
        assert_eq!(r.beta_hat, 0.0);
        assert!(r.best_v_emp <= 0.0);
        assert_eq!(r.rows.len(), grid.len());
    }

    #[test]
    fn calibration_matches_direct_backtest() {
        let s = synthesize_series(
            &SyntheticSeries {
                beta: 0.15,
                decay: 0.3,
                sigma: 1.0,
                coupling: Coupling::Identity,
                n_steps: 5000,
                start_price: 100.0,
                seed: 2,
            },
            meta(),
        )
        .unwrap();
        let spec = SignalSpec {
            decay: 0.3,
            ..SignalSpec::default()
        };
        let (cost, g) = (CostSpec::new(0.02).unwrap(), Gearing::new(40.0).unwrap());
        let r = calibration_report(&s, &spec, cost, g, &[0.1, 0.15], &PipelineOptions::default()).unwrap();
        for row in &r.rows {
            let direct = build_real_backtest(&s, &spec.with_beta(row.beta), cost, g, 1.0).unwrap();
            assert_relative_eq!(row.v_emp, direct.v_emp(), max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn positions_are_whole_contracts_and_warmup_holds() {
        let s = brownian(3000, 1.0, 4);
        let spec = SignalSpec::default().with_beta(0.3);
        let r = build_real_backtest(
            &s,
            &spec,
            CostSpec::new(0.01).unwrap(),
            Gearing::new(200.0).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(r.positions.iter().all(|p| p.fract() == 0.0));
        assert!(r.trades[..DEFAULT_ROLLING_WINDOW].iter().all(|&t| t == 0.0));
        assert!(r.summary.n_trades > 0);
    }

    #[test]
    fn explosive_generator_rejected() {
        let spec = SyntheticSeries {
            beta: 0.2,
            decay: 0.02,
            sigma: 1.0,
            coupling: Coupling::Identity,
            n_steps: 10,
            start_price: 0.0,
            seed: 0,
        };
        assert!(synthesize_series(&spec, meta()).is_err());
        let bounded = SyntheticSeries {
            coupling: Coupling::Tanh2,
            ..spec
        };
        assert!(synthesize_series(&bounded, meta()).is_ok());
    }

    #[test]
    fn business_days_skip_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(
            d,
            vec![
                NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(),
                NaiveDate::from_ymd_opt(2024, 1, 8).unwrap(),
                NaiveDate::from_ymd_opt(2024, 1, 9).unwrap(),
            ]
        );
    }

    proptest! {
        #[test]
        fn kernel_is_linear(incs in proptest::collection::vec(-5.0f64..5.0, 1..60), alpha in -3.0f64..3.0, a in 0.01f64..2.0) {
            let mut x = vec![0.0];
            for d in &incs {
                x.push(x.last().unwrap() + d);
            }
            let scaled: Vec<f64> = x.iter().map(|v| alpha * v).collect();
            let s1 = kernel_sum(&x, a);
            let s2 = kernel_sum(&scaled, a);
            for (u, v) in s1.iter().zip(&s2) {
                prop_assert!((alpha * u - v).abs() <= 1e-9 * (1.0 + u.abs()));
            }
        }
    }
}
