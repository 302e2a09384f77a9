//! Synthesized market models.
//!
//! The tradable follows `dX = (Σ β_i γ_i(Z_i)) σ_t dt + σ_t dW_0` where each
//! factor `Z_i` is an Ornstein-Uhlenbeck process with unit stationary
//! variance and `σ_t = σ̄ exp(η Z_v − η²/2)` when a volatility factor is
//! present. Factors advance with their exact Gaussian transition; the price
//! line uses an Euler step with the pre-step drift and volatility.
//!
//! Noise layout: dimension 0 drives the price, dimension `1 + k` drives
//! `factors[k]`. Each dimension draws its independent normals from its own
//! ChaCha8 stream (`seed`, stream = dimension index) before correlation, so
//! appending a dimension never perturbs the draws of the others.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Eigenvalues above `-PSD_TOLERANCE` are accepted as non-negative.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorRole {
    Return,
    Volatility,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    pub kappa: f64,
    pub role: FactorRole,
}

impl FactorSpec {
    pub fn returns(kappa: f64) -> Self {
        Self {
            kappa,
            role: FactorRole::Return,
        }
    }

    pub fn volatility(kappa: f64) -> Self {
        Self {
            kappa,
            role: FactorRole::Volatility,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Linear,
    Nonlinear,
    StochasticVol,
    TwoFactorStochasticVol,
}

impl ModelKind {
    pub fn has_stochastic_vol(self) -> bool {
        matches!(self, Self::StochasticVol | Self::TwoFactorStochasticVol)
    }
}

/// Activation applied to a return factor before it enters the drift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    #[default]
    Identity,
    /// `tanh(2z)`
    Tanh2,
}

impl Coupling {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Self::Identity => z,
            Self::Tanh2 => (2.0 * z).tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Tanh2 => {
                let c = (2.0 * z).cosh();
                2.0 / (c * c)
            }
        }
    }
}

/// Full parameterization of a synthesized model.
///
/// `beta` and `coupling` have one entry per return factor. `corr` is indexed
/// over `(W_0, factors[0], factors[1], ...)`; a volatility factor, if any,
/// must come last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub beta: Vec<f64>,
    pub sigma_bar: f64,
    #[serde(default)]
    pub eta: f64,
    pub factors: Vec<FactorSpec>,
    pub corr: Vec<Vec<f64>>,
    pub coupling: Vec<Coupling>,
}

impl ModelSpec {
    /// One return factor, constant volatility, identity coupling.
    pub fn linear(beta: f64, kappa: f64, sigma: f64, rho01: f64) -> Self {
        Self {
            kind: ModelKind::Linear,
            beta: vec![beta],
            sigma_bar: sigma,
            eta: 0.0,
            factors: vec![FactorSpec::returns(kappa)],
            corr: vec![vec![1.0, rho01], vec![rho01, 1.0]],
            coupling: vec![Coupling::Identity],
        }
    }

    pub fn return_factor_count(&self) -> usize {
        self.factors.iter().filter(|f| f.role == FactorRole::Return).count()
    }

    /// Index into `factors` of the volatility factor.
    pub fn vol_factor_index(&self) -> Option<usize> {
        self.factors.iter().position(|f| f.role == FactorRole::Volatility)
    }

    pub fn noise_dim(&self) -> usize {
        1 + self.factors.len()
    }

    /// Correlation between two factors, by index into `factors`.
    pub fn factor_corr(&self, i: usize, j: usize) -> f64 {
        self.corr[1 + i][1 + j]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_bar > 0.0 && self.sigma_bar.is_finite()) {
            return Err(invalid(format!("sigma_bar must be > 0, got {}", self.sigma_bar)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("eta must be >= 0, got {}", self.eta)));
        }
        for (k, f) in self.factors.iter().enumerate() {
            if !(f.kappa > 0.0 && f.kappa.is_finite()) {
                return Err(invalid(format!("factor {k}: kappa must be > 0, got {}", f.kappa)));
            }
        }
        let n_ret = self.return_factor_count();
        if n_ret == 0 {
            return Err(invalid("model needs at least one return factor"));
        }
        let n_vol = self.factors.len() - n_ret;
        if n_vol > 1 {
            return Err(invalid("at most one volatility factor is supported"));
        }
        if n_vol == 1 && self.factors.last().map(|f| f.role) != Some(FactorRole::Volatility) {
            return Err(invalid("the volatility factor must be listed last"));
        }
        if self.beta.len() != n_ret {
            return Err(Error::LengthMismatch {
                what: "beta",
                expected: n_ret,
                actual: self.beta.len(),
            });
        }
        if self.coupling.len() != n_ret {
            return Err(Error::LengthMismatch {
                what: "coupling",
                expected: n_ret,
                actual: self.coupling.len(),
            });
        }
        match self.kind {
            ModelKind::Linear | ModelKind::Nonlinear => {
                if n_vol != 0 || self.eta != 0.0 {
                    return Err(invalid(format!(
                        "{:?} model takes no volatility factor and eta = 0",
                        self.kind
                    )));
                }
            }
            ModelKind::StochasticVol | ModelKind::TwoFactorStochasticVol => {
                if n_vol != 1 {
                    return Err(invalid("stochastic-vol model needs one volatility factor"));
                }
            }
        }
        if self.kind == ModelKind::Linear && self.coupling.iter().any(|c| *c != Coupling::Identity) {
            return Err(invalid("linear model requires identity coupling"));
        }
        if self.kind == ModelKind::StochasticVol && n_ret != 1 {
            return Err(invalid("stochastic-vol model has exactly one return factor"));
        }
        if self.kind == ModelKind::TwoFactorStochasticVol && n_ret != 2 {
            return Err(invalid("two-factor model has exactly two return factors"));
        }
        validate_correlation(&self.corr, self.noise_dim())?;
        Ok(())
    }

    /// Instantaneous volatility for a given volatility-factor value.
    #[inline]
    pub fn sigma_at(&self, z_vol: f64) -> f64 {
        self.sigma_bar * vol_multiplier(self.eta, z_vol)
    }
}

/// `exp(η z − η²/2)`, unit mean under a standard normal `z`.
#[inline]
pub fn vol_multiplier(eta: f64, z: f64) -> f64 {
    (eta * z - 0.5 * eta * eta).exp()
}

fn validate_correlation(corr: &[Vec<f64>], dim: usize) -> Result<()> {
    if corr.len() != dim {
        return Err(Error::LengthMismatch {
            what: "corr rows",
            expected: dim,
            actual: corr.len(),
        });
    }
    for (i, row) in corr.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::LengthMismatch {
                what: "corr columns",
                expected: dim,
                actual: row.len(),
            });
        }
        if (row[i] - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("corr[{i}][{i}] = {} must be 1", row[i])));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || (v - corr[j][i]).abs() > PSD_TOLERANCE {
                return Err(invalid(format!("corr is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Lower-triangular factor `L` with `L Lᵀ = corr` for a PSD correlation
/// matrix, tolerating singular matrices.
#[derive(Clone, Debug)]
pub struct CorrelationFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl CorrelationFactor {
    pub fn new(corr: &[Vec<f64>]) -> Result<Self> {
        let dim = corr.len();
        if dim == 0 {
            return Err(invalid("empty correlation matrix"));
        }
        if corr.iter().any(|r| r.len() != dim) {
            return Err(invalid("correlation matrix must be square"));
        }
        let sym = DMatrix::from_fn(dim, dim, |i, j| 0.5 * (corr[i][j] + corr[j][i]));
        if sym.iter().any(|v| !v.is_finite()) {
            return Err(invalid("correlation matrix has non-finite entries"));
        }
        let min_eigenvalue = SymmetricEigen::new(sym.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eigenvalue < -PSD_TOLERANCE {
            return Err(Error::NotPositiveSemiDefinite { min_eigenvalue });
        }

        // Row-by-row Cholesky; a (near) zero pivot zeroes its column.
        let mut lower = vec![0.0; dim * dim];
        for j in 0..dim {
            let mut d = sym[(j, j)];
            for k in 0..j {
                d -= lower[j * dim + k] * lower[j * dim + k];
            }
            if d <= PSD_TOLERANCE {
                continue;
            }
            let pivot = d.sqrt();
            lower[j * dim + j] = pivot;
            for i in (j + 1)..dim {
                let mut s = sym[(i, j)];
                for k in 0..j {
                    s -= lower[i * dim + k] * lower[j * dim + k];
                }
                lower[i * dim + j] = s / pivot;
            }
        }
        Ok(Self { dim, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `out = L · independent`.
    pub fn correlate(&self, independent: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.dim) {
            let row = &self.lower[r * self.dim..r * self.dim + r + 1];
            *o = row.iter().zip(independent).map(|(l, e)| l * e).sum();
        }
    }
}

/// Streaming source of correlated standard normal vectors.
pub struct CorrelatedNormals {
    factor: CorrelationFactor,
    streams: Vec<ChaCha8Rng>,
    scratch: Vec<f64>,
}

impl CorrelatedNormals {
    pub fn new(corr: &[Vec<f64>], seed: u64) -> Result<Self> {
        let factor = CorrelationFactor::new(corr)?;
        let streams = (0..factor.dim())
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(j as u64);
                rng
            })
            .collect();
        Ok(Self {
            scratch: vec![0.0; factor.dim()],
            factor,
            streams,
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn next_into(&mut self, out: &mut [f64]) {
        for (e, rng) in self.scratch.iter_mut().zip(self.streams.iter_mut()) {
            *e = StandardNormal.sample(rng);
        }
        self.factor.correlate(&self.scratch, out);
    }
}

/// `n_steps × dim` matrix of standard normals; row `i` has cross-correlation
/// `corr`. Deterministic in `(corr, n_steps, seed)`.
pub fn correlated_normals(corr: &[Vec<f64>], n_steps: usize, seed: u64) -> Result<Array2<f64>> {
    let mut source = CorrelatedNormals::new(corr, seed)?;
    let dim = source.dim();
    let mut out = Array2::zeros((n_steps, dim));
    let mut row = vec![0.0; dim];
    for mut target in out.rows_mut() {
        source.next_into(&mut row);
        target.iter_mut().zip(&row).for_each(|(t, v)| *t = *v);
    }
    Ok(out)
}

/// Exact OU transition coefficients for a fixed `(kappa, dt)`.
#[derive(Clone, Copy, Debug)]
pub struct OuTransition {
    pub decay: f64,
    pub scale: f64,
}

impl OuTransition {
    pub fn new(kappa: f64, dt: f64) -> Self {
        Self {
            decay: (-kappa * dt).exp(),
            scale: (-(-2.0 * kappa * dt).exp_m1()).sqrt(),
        }
    }

    #[inline]
    pub fn step(&self, z: f64, xi: f64) -> f64 {
        z * self.decay + self.scale * xi
    }
}

/// One exact step of `dZ = −κ Z dt + √(2κ) dW`.
pub fn ou_step(z: f64, kappa: f64, dt: f64, xi: f64) -> f64 {
    OuTransition::new(kappa, dt).step(z, xi)
}

/// Time-indexed tradable, factors and instantaneous volatility.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketPath {
    pub dt: f64,
    pub x: Vec<f64>,
    /// One series per factor, in model order.
    pub z: Vec<Vec<f64>>,
    pub sigma_t: Vec<f64>,
}

impl MarketPath {
    /// Number of steps `N`; series have `N + 1` points.
    pub fn n_steps(&self) -> usize {
        self.x.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.len();
        if n < 2 {
            return Err(invalid("market path needs at least two points"));
        }
        if self.dt.is_nan() || self.dt <= 0.0 {
            return Err(invalid("dt must be > 0"));
        }
        for z in &self.z {
            if z.len() != n {
                return Err(Error::LengthMismatch {
                    what: "factor series",
                    expected: n,
                    actual: z.len(),
                });
            }
        }
        if self.sigma_t.len() != n {
            return Err(Error::LengthMismatch {
                what: "sigma_t",
                expected: n,
                actual: self.sigma_t.len(),
            });
        }
        Ok(())
    }

    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.x.windows(2).map(|w| w[1] - w[0])
    }
}

/// Simulates `n_steps` steps of `model` from `X_0 = 0`, `Z_0 = 0`.
pub fn simulate(model: &ModelSpec, n_steps: usize, dt: f64, seed: u64) -> Result<MarketPath> {
    model.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be > 0, got {dt}")));
    }
    let mut noise = CorrelatedNormals::new(&model.corr, seed)?;
    let n_factors = model.factors.len();
    let n_ret = model.return_factor_count();
    let vol_idx = model.vol_factor_index();
    let transitions: Vec<OuTransition> = model.factors.iter().map(|f| OuTransition::new(f.kappa, dt)).collect();
    let sqrt_dt = dt.sqrt();

    let mut x = Vec::with_capacity(n_steps + 1);
    let mut z: Vec<Vec<f64>> = (0..n_factors).map(|_| Vec::with_capacity(n_steps + 1)).collect();
    let mut sigma_t = Vec::with_capacity(n_steps + 1);

    let mut xi = vec![0.0; noise.dim()];
    let mut state = vec![0.0; n_factors];
    let mut x_now = 0.0;
    let sigma_of = |state: &[f64]| match vol_idx {
        Some(v) => model.sigma_at(state[v]),
        None => model.sigma_bar,
    };
    let mut sigma_now = sigma_of(&state);

    x.push(x_now);
    sigma_t.push(sigma_now);
    for (series, s) in z.iter_mut().zip(&state) {
        series.push(*s);
    }

    for _ in 0..n_steps {
        noise.next_into(&mut xi);
        let signal: f64 = (0..n_ret)
            .map(|k| model.beta[k] * model.coupling[k].apply(state[k]))
            .sum();
        x_now += signal * sigma_now * dt + sigma_now * sqrt_dt * xi[0];
        for (k, s) in state.iter_mut().enumerate() {
            *s = transitions[k].step(*s, xi[1 + k]);
        }
        sigma_now = sigma_of(&state);

        x.push(x_now);
        sigma_t.push(sigma_now);
        for (series, s) in z.iter_mut().zip(&state) {
            series.push(*s);
        }
    }

    Ok(MarketPath { dt, x, z, sigma_t })
}
