use std::collections::HashSet;
use std::path::{Path, PathBuf};

use log::info;
use ntband::banding::CostSpec;
use ntband::engine::{backtest, BacktestConfig, BacktestResult};
use ntband::experiments::{brute_force_band_oracle, default_lambdas, run_sweep_full, width_grid, SweepRow, SweepSpec};
use ntband::market_data::{
    build_real_backtest_with, calibration_report, real_lambda_sweep, CalibrationReport, PriceSeries, SignalSpec,
};
use ntband::models::{simulate, MarketPath};
use ntband::policy::{model_policy, GammaMode};
use rayon::prelude::*;

use crate::config::{real_settings, synthetic_spec, RealSettings, RunConfig, SyntheticConfig};
use crate::error::CliError;
use crate::output::{Cell, CsvOut};

pub const SCENARIOS: [&str; 5] = ["a", "b", "c", "d", "e"];

/// Resolved global options.
pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub digits: usize,
    pub scenario: Option<String>,
}

impl Ctx {
    fn file(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn announce(&self, path: &Path) {
        println!("wrote {}", path.display());
    }
}

fn gamma_label(mode: GammaMode) -> String {
    match mode {
        GammaMode::ClosedForm => "closed-form".into(),
        GammaMode::Rolling { window } => format!("rolling({window})"),
    }
}

fn factor_columns(spec: &SweepSpec) -> Vec<String> {
    (1..=spec.model.factors.len()).map(|k| format!("z{k}")).collect()
}

fn write_path(ctx: &Ctx, label: &str, spec: &SweepSpec, path: &MarketPath) -> Result<PathBuf, CliError> {
    let zcols = factor_columns(spec);
    let mut header = vec!["t", "x"];
    header.extend(zcols.iter().map(String::as_str));
    header.push("sigma_t");
    let meta = [
        ("scenario", label.to_string()),
        ("n_steps", spec.n_steps.to_string()),
        ("dt", spec.dt.to_string()),
    ];
    let file = ctx.file(&format!("path_{label}.csv"));
    let mut out = CsvOut::create(&file, "ntband.path.v1", ctx.seed, &meta, &header, ctx.digits)?;
    let mut cells = Vec::with_capacity(header.len());
    for i in 0..path.x.len() {
        cells.clear();
        cells.push(Cell::F(i as f64 * path.dt));
        cells.push(Cell::F(path.x[i]));
        cells.extend(path.z.iter().map(|z| Cell::F(z[i])));
        cells.push(Cell::F(path.sigma_t[i]));
        out.row(&cells)?;
    }
    out.finish()
}

pub fn cmd_simulate(ctx: &Ctx) -> Result<(), CliError> {
    let section: SyntheticConfig = (&ctx.cfg.simulate).into();
    let (label, spec) = synthetic_spec(&section, ctx.scenario.as_deref(), ctx.seed)?;
    let path = simulate(&spec.model, spec.n_steps, spec.dt, spec.seed)?;
    let file = write_path(ctx, &label, &spec, &path)?;
    ctx.announce(&file);
    Ok(())
}

const SWEEP_HEADER: [&str; 6] = [
    "epsilon",
    "lambda",
    "mean_buffer_width",
    "v_emp",
    "turnover",
    "is_lambda_one",
];

fn sweep_cells(r: &SweepRow) -> [Cell<'static>; 6] {
    [
        Cell::F(r.epsilon),
        Cell::F(r.lambda),
        Cell::F(r.mean_buffer_width),
        Cell::F(r.v_emp),
        Cell::F(r.turnover),
        Cell::B(r.is_lambda_one),
    ]
}

fn sweep_one(ctx: &Ctx, label: &str, spec: &SweepSpec, section: &SyntheticConfig) -> Result<(), CliError> {
    let run = run_sweep_full(spec)?;
    let meta = [
        ("scenario", label.to_string()),
        ("n_steps", spec.n_steps.to_string()),
        ("gamma", gamma_label(spec.gamma_mode)),
        ("gearing", spec.gearing.get().to_string()),
    ];
    let file = ctx.file(&format!("sweep_{label}.csv"));
    let mut out = CsvOut::create(&file, "ntband.sweep.v1", ctx.seed, &meta, &SWEEP_HEADER, ctx.digits)?;
    for r in &run.curve.rows {
        out.row(&sweep_cells(r))?;
    }
    ctx.announce(&out.finish()?);
    for &e in &spec.costs {
        if let (Some(one), Some(best)) = (run.curve.at_lambda_one(e), run.curve.best(e)) {
            info!(
                "scenario {label} eps {e}: V(1) = {:.4}, best V = {:.4} at lambda {:.4}",
                one.v_emp, best.v_emp, best.lambda
            );
        }
    }

    if section.with_path {
        let eps = section.path_epsilon.unwrap_or(0.2);
        let res = backtest(
            &run.path.x,
            &run.policy,
            &BacktestConfig::new(CostSpec::new(eps)?, spec.gearing, 1.0),
        )?;
        let file = write_sweep_path(ctx, label, spec, &run.path, &res, eps)?;
        ctx.announce(&file);
    }
    Ok(())
}

fn write_sweep_path(
    ctx: &Ctx,
    label: &str,
    spec: &SweepSpec,
    path: &MarketPath,
    res: &BacktestResult,
    eps: f64,
) -> Result<PathBuf, CliError> {
    let zcols = factor_columns(spec);
    let mut header = vec!["t", "x"];
    header.extend(zcols.iter().map(String::as_str));
    header.extend(["vol_multiplier", "target", "position", "account_curve"]);
    let meta = [
        ("scenario", label.to_string()),
        ("epsilon", eps.to_string()),
        ("lambda", "1".to_string()),
    ];
    let file = ctx.file(&format!("sweep_{label}_path.csv"));
    let mut out = CsvOut::create(&file, "ntband.sweep-path.v1", ctx.seed, &meta, &header, ctx.digits)?;
    let n = path.n_steps();
    let mut cells = Vec::with_capacity(header.len());
    for i in 0..=n {
        cells.clear();
        cells.push(Cell::F(i as f64 * path.dt));
        cells.push(Cell::F(path.x[i]));
        cells.extend(path.z.iter().map(|z| Cell::F(z[i])));
        cells.push(Cell::F(path.sigma_t[i] / spec.model.sigma_bar));
        cells.push(Cell::F(res.targets[i]));
        // position decided at t_i; net P&L marked at t_i
        cells.push(Cell::F(res.positions[(i + 1).min(n)]));
        cells.push(Cell::F(if i == 0 { 0.0 } else { res.account_curve[i - 1] }));
        out.row(&cells)?;
    }
    out.finish()
}

pub fn cmd_sweep(ctx: &Ctx, with_path: bool) -> Result<(), CliError> {
    let mut section = ctx.cfg.sweep.clone();
    section.with_path |= with_path;
    let names: Vec<Option<String>> = match ctx.scenario.as_deref() {
        Some("all") => SCENARIOS.iter().map(|s| Some(s.to_string())).collect(),
        other => vec![other.map(str::to_string)],
    };
    for name in names {
        let (label, spec) = synthetic_spec(&section, name.as_deref(), ctx.seed)?;
        sweep_one(ctx, &label, &spec, &section)?;
    }
    Ok(())
}

pub fn cmd_oracle(ctx: &Ctx, epsilon: Option<f64>) -> Result<(), CliError> {
    let oc = &ctx.cfg.oracle;
    let section: SyntheticConfig = oc.into();
    let (label, spec) = synthetic_spec(&section, ctx.scenario.as_deref(), ctx.seed)?;
    let cost = CostSpec::new(epsilon.or(oc.epsilon).unwrap_or(0.2))?;
    let grid = oc
        .grid
        .map_or_else(|| width_grid(0.01, 0.6, 0.01), |g| width_grid(g.start, g.stop, g.step));
    let path = simulate(&spec.model, spec.n_steps, spec.dt, spec.seed)?;
    let policy = model_policy(&spec.model, &path, spec.gearing, spec.gamma_mode)?;
    let oracle = brute_force_band_oracle(&path, &policy, cost, spec.gearing, &grid)?;
    let formula = backtest(&path.x, &policy, &BacktestConfig::new(cost, spec.gearing, 1.0))?;
    let meta = [
        ("scenario", label.clone()),
        ("epsilon", cost.epsilon.to_string()),
        ("n_steps", spec.n_steps.to_string()),
        (
            "formula_mean_half_width",
            crate::output::format_float(formula.mean_buffer_width(), ctx.digits),
        ),
        (
            "formula_v_emp",
            crate::output::format_float(formula.v_emp(), ctx.digits),
        ),
        (
            "best_half_width",
            crate::output::format_float(oracle.best_width, ctx.digits),
        ),
    ];
    let file = ctx.file(&format!("oracle_{label}.csv"));
    let mut out = CsvOut::create(
        &file,
        "ntband.oracle.v1",
        ctx.seed,
        &meta,
        &["half_width", "v_emp", "is_best"],
        ctx.digits,
    )?;
    for &(w, v) in &oracle.values {
        out.row(&[Cell::F(w), Cell::F(v), Cell::B(w == oracle.best_width)])?;
    }
    ctx.announce(&out.finish()?);
    info!(
        "oracle best half-width {:.4} (V = {:.4}); formula mean half-width {:.4} (V = {:.4})",
        oracle.best_width,
        oracle.best_v_emp,
        formula.mean_buffer_width(),
        formula.v_emp()
    );
    Ok(())
}

fn load_series(path: &Path, s: &RealSettings) -> Result<PriceSeries, CliError> {
    if !path.exists() {
        return Err(CliError::MissingInput {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        });
    }
    PriceSeries::from_csv_path(path, s.meta).map_err(|source| match source {
        ntband::Error::Io(e) => CliError::MissingInput {
            path: path.to_path_buf(),
            source: e,
        },
        source => CliError::Data {
            path: path.to_path_buf(),
            source,
        },
    })
}

fn stems(inputs: &[PathBuf]) -> Result<Vec<String>, CliError> {
    let mut seen = HashSet::new();
    inputs
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "input".into());
            if seen.insert(stem.clone()) {
                Ok(stem)
            } else {
                Err(CliError::Config(format!("two inputs share the file name `{stem}`")))
            }
        })
        .collect()
}

fn on_data<T>(path: &Path, r: ntband::Result<T>) -> Result<T, CliError> {
    r.map_err(|source| CliError::Data {
        path: path.to_path_buf(),
        source,
    })
}

struct RealRun {
    series: PriceSeries,
    result: BacktestResult,
    sweep: Option<Vec<SweepRow>>,
}

pub fn cmd_backtest(ctx: &Ctx, cli_inputs: &[PathBuf], lambda_sweep: bool) -> Result<(), CliError> {
    let bc = &ctx.cfg.backtest;
    let s = real_settings(&ctx.cfg, bc.common(), cli_inputs)?;
    if bc.signals.is_empty() {
        return Err(CliError::Config(
            "backtest.signals is empty; add at least one [[backtest.signals]] table".into(),
        ));
    }
    let lambda = bc.lambda.unwrap_or(1.0);
    let lambdas = bc.lambdas.clone().unwrap_or_else(default_lambdas);
    let cost = CostSpec::new(s.epsilon)?;
    let names = stems(&s.inputs)?;

    let runs = s
        .inputs
        .par_iter()
        .map(|path| {
            let series = load_series(path, &s)?;
            let result = on_data(
                path,
                build_real_backtest_with(&series, &bc.signals, cost, s.gearing, lambda, &s.options),
            )?;
            let sweep = if lambda_sweep {
                Some(on_data(
                    path,
                    real_lambda_sweep(&series, &bc.signals, cost, s.gearing, &lambdas, &s.options),
                )?)
            } else {
                None
            };
            Ok(RealRun { series, result, sweep })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    for (run, stem) in runs.iter().zip(&names) {
        let meta = [
            ("input", stem.clone()),
            ("point_value", s.meta.point_value.to_string()),
            ("epsilon_points", s.epsilon.to_string()),
            ("gearing", s.gearing.get().to_string()),
            ("lambda", lambda.to_string()),
        ];
        let file = ctx.file(&format!("backtest_{stem}.csv"));
        let header = ["t", "x", "target", "lower", "upper", "position", "trade", "net_pnl"];
        let mut out = CsvOut::create(&file, "ntband.backtest.v1", ctx.seed, &meta, &header, ctx.digits)?;
        let r = &run.result;
        let dates = run.series.timestamps();
        let prices = run.series.prices();
        for i in 0..r.trades.len() {
            let date = dates[i].format("%Y-%m-%d").to_string();
            let (lo, hi) = match r.bands[i] {
                Some(b) => (Cell::F(b.lower), Cell::F(b.upper)),
                None => (Cell::Empty, Cell::Empty),
            };
            out.row(&[
                Cell::S(&date),
                Cell::F(prices[i]),
                Cell::F(r.targets[i]),
                lo,
                hi,
                Cell::F(r.positions[i + 1]),
                Cell::F(r.trades[i]),
                Cell::F(r.account_curve[i]),
            ])?;
        }
        ctx.announce(&out.finish()?);
        info!(
            "{stem}: V_emp {:.2}, cost {:.2}, turnover {}, trades {}",
            r.v_emp(),
            r.cost_paid(),
            r.turnover(),
            r.summary.n_trades
        );

        if let Some(rows) = &run.sweep {
            let file = ctx.file(&format!("lambda_sweep_{stem}.csv"));
            let mut out = CsvOut::create(
                &file,
                "ntband.real-sweep.v1",
                ctx.seed,
                &meta[..4],
                &SWEEP_HEADER,
                ctx.digits,
            )?;
            for row in rows {
                out.row(&sweep_cells(row))?;
            }
            ctx.announce(&out.finish()?);
        }
    }
    Ok(())
}

fn default_beta_grid() -> Vec<f64> {
    (-25..=25).map(|k| k as f64 * 0.02).collect()
}

pub fn cmd_calibrate(ctx: &Ctx, cli_inputs: &[PathBuf]) -> Result<(), CliError> {
    let cc = &ctx.cfg.calibrate;
    let s = real_settings(&ctx.cfg, cc.common(), cli_inputs)?;
    let spec = cc.signal.unwrap_or_default();
    let grid = cc.beta_grid.clone().unwrap_or_else(default_beta_grid);
    let cost = CostSpec::new(s.epsilon)?;
    let names = stems(&s.inputs)?;

    let reports = s
        .inputs
        .par_iter()
        .map(|path| {
            let series = load_series(path, &s)?;
            on_data(
                path,
                calibration_report(&series, &spec, cost, s.gearing, &grid, &s.options),
            )
        })
        .collect::<Result<Vec<CalibrationReport>, CliError>>()?;

    for (rep, stem) in reports.iter().zip(&names) {
        let meta = [
            ("input", stem.clone()),
            ("point_value", s.meta.point_value.to_string()),
            ("epsilon_points", s.epsilon.to_string()),
            ("gearing", s.gearing.get().to_string()),
            ("signal", signal_label(&spec)),
            ("beta_hat", rep.beta_hat.to_string()),
            (
                "regression_beta",
                crate::output::format_float(rep.regression_beta, ctx.digits),
            ),
        ];
        let file = ctx.file(&format!("calibration_{stem}.csv"));
        let mut out = CsvOut::create(
            &file,
            "ntband.calibration.v1",
            ctx.seed,
            &meta,
            &["beta", "v_emp", "is_best"],
            ctx.digits,
        )?;
        for row in &rep.rows {
            out.row(&[Cell::F(row.beta), Cell::F(row.v_emp), Cell::B(row.beta == rep.beta_hat)])?;
        }
        ctx.announce(&out.finish()?);
        info!(
            "{stem}: beta_hat {} (regression {:.4})",
            rep.beta_hat, rep.regression_beta
        );
    }
    Ok(())
}

fn signal_label(s: &SignalSpec) -> String {
    format!("decay={} vol_decay={} coupling={:?}", s.decay, s.vol_decay, s.coupling)
}
