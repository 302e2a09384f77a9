//! Costfree target positions, target-volatility ratio `Γ̂₀²`, and utility.
//!
//! `Γ̂₀²` is the ratio of the instantaneous variance of the target position
//! to that of the tradable. Closed forms exist for the one-return-factor
//! models; anything else goes through the rolling quadratic-variation
//! estimator.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{MarketPath, ModelKind, ModelSpec};

/// Risk-appetite scale `G`, in money. Strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Gearing(f64);

impl Gearing {
    pub fn new(g: f64) -> Result<Self> {
        if g > 0.0 && g.is_finite() {
            Ok(Self(g))
        } else {
            Err(invalid(format!("gearing must be > 0, got {g}")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Gearing {
    type Error = Error;
    fn try_from(g: f64) -> Result<Self> {
        Self::new(g)
    }
}

impl From<Gearing> for f64 {
    fn from(g: Gearing) -> f64 {
        g.0
    }
}

/// Policy inputs at one time step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyState {
    pub target: f64,
    /// `None` when the estimate is undefined at this step.
    pub gamma_sq: Option<f64>,
    pub sigma_hat: f64,
    pub target_drift: Option<f64>,
}

/// Exponential utility `(1 − e^{−x/G}) G`.
#[inline]
pub fn utility(x: f64, g: Gearing) -> f64 {
    let g = g.get();
    -(-x / g).exp_m1() * g
}

/// `μ G / σ²`.
pub fn target_costfree(mu_x: f64, sigma_x: f64, g: Gearing) -> Result<f64> {
    if sigma_x.is_nan() || sigma_x <= 0.0 {
        return Err(invalid(format!("sigma_x must be > 0, got {sigma_x}")));
    }
    Ok(mu_x * g.get() / (sigma_x * sigma_x))
}

/// `2 β² κ₁ G² / σ⁴`.
pub fn gamma_sq_linear(beta: f64, kappa1: f64, sigma: f64, g: Gearing) -> f64 {
    gamma_sq_nonlinear(beta, 1.0, kappa1, sigma, g)
}

/// `2 β² γ'(Z₁)² κ₁ G² / σ⁴`.
pub fn gamma_sq_nonlinear(beta: f64, gamma_prime_at_z: f64, kappa1: f64, sigma: f64, g: Gearing) -> f64 {
    let g = g.get();
    let s2 = sigma * sigma;
    2.0 * beta * beta * gamma_prime_at_z * gamma_prime_at_z * kappa1 * g * g / (s2 * s2)
}

/// Parameters of the one-return-factor stochastic-volatility `Γ̂₀²`.
#[derive(Clone, Copy, Debug)]
pub struct StochVolParams {
    pub beta: f64,
    pub kappa1: f64,
    pub kappa_v: f64,
    pub eta: f64,
    pub rho_1v: f64,
}

/// Stochastic-volatility `Γ̂₀²` with identity coupling.
#[allow(clippy::too_many_arguments)]
pub fn gamma_sq_stochvol(
    beta: f64,
    kappa1: f64,
    kappa_v: f64,
    eta: f64,
    rho_1v: f64,
    sigma_t: f64,
    target: f64,
    g: Gearing,
) -> f64 {
    let p = StochVolParams {
        beta,
        kappa1,
        kappa_v,
        eta,
        rho_1v,
    };
    gamma_sq_stochvol_coupled(&p, 1.0, sigma_t, target, g)
}

/// Stochastic-volatility `Γ̂₀²` where the return factor enters through an
/// activation with slope `gamma_prime_at_z`:
///
/// `2β²γ'²κ₁G²/σ⁴ + 8βγ'η√(κ₁κ_v)ρ₁ᵥ ĝ₀ G/σ³ + 8η²κ_v ĝ₀²/σ²`, clamped at 0.
pub fn gamma_sq_stochvol_coupled(
    p: &StochVolParams,
    gamma_prime_at_z: f64,
    sigma_t: f64,
    target: f64,
    g: Gearing,
) -> f64 {
    let first = gamma_sq_nonlinear(p.beta, gamma_prime_at_z, p.kappa1, sigma_t, g);
    let cross = 8.0 * p.beta * gamma_prime_at_z * p.eta * (p.kappa1 * p.kappa_v).sqrt() * p.rho_1v * target * g.get()
        / (sigma_t * sigma_t * sigma_t);
    let vol = 8.0 * p.eta * p.eta * p.kappa_v * target * target / (sigma_t * sigma_t);
    let total = first + cross + vol;
    if total < 0.0 {
        log::debug!("stochastic-vol gamma_sq {total:.3e} clamped to 0 (target {target})");
        0.0
    } else {
        total
    }
}

/// What to report for steps before the first full window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Warmup {
    /// Repeat the first computed value.
    #[default]
    Backfill,
    /// Leave undefined; the engine then holds its position.
    NoTrade,
}

/// Rolling ratio of realized quadratic variations, back-filled over the
/// warm-up.
pub fn gamma_sq_rolling(target: &[f64], x: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    gamma_sq_rolling_with(target, x, window, Warmup::Backfill)
}

/// At step `i ≥ window`: `Σ Δtarget² / Σ ΔX²` over the increments ending at
/// `i`. A window with no price movement is undefined (`None`).
pub fn gamma_sq_rolling_with(target: &[f64], x: &[f64], window: usize, warmup: Warmup) -> Result<Vec<Option<f64>>> {
    if window < 2 {
        return Err(invalid(format!("rolling window must be >= 2, got {window}")));
    }
    if target.len() != x.len() {
        return Err(Error::LengthMismatch {
            what: "target series",
            expected: x.len(),
            actual: target.len(),
        });
    }
    let n = x.len();
    let mut out = vec![None; n];
    if n <= window {
        return Ok(out);
    }
    let dt2 = |k: usize| (target[k] - target[k - 1]).powi(2);
    let dx2 = |k: usize| (x[k] - x[k - 1]).powi(2);

    let (mut num, mut den) = (0.0, 0.0);
    let (mut num_nz, mut den_nz) = (0usize, 0usize);
    for k in 1..=window {
        let (a, b) = (dt2(k), dx2(k));
        num += a;
        den += b;
        num_nz += (a > 0.0) as usize;
        den_nz += (b > 0.0) as usize;
    }
    for (i, slot) in out.iter_mut().enumerate().skip(window) {
        if i > window {
            let (a_in, b_in) = (dt2(i), dx2(i));
            let (a_out, b_out) = (dt2(i - window), dx2(i - window));
            num_nz = num_nz + (a_in > 0.0) as usize - (a_out > 0.0) as usize;
            den_nz = den_nz + (b_in > 0.0) as usize - (b_out > 0.0) as usize;
            if (i - window).is_multiple_of(window) {
                // refresh to stop rounding drift in the running sums
                num = (i - window + 1..=i).map(dt2).sum();
                den = (i - window + 1..=i).map(dx2).sum();
            } else {
                num += a_in - a_out;
                den += b_in - b_out;
            }
        }
        *slot = if den_nz == 0 {
            None
        } else if num_nz == 0 {
            Some(0.0)
        } else {
            Some((num / den).max(0.0))
        };
    }
    if warmup == Warmup::Backfill {
        if let Some(first) = out[window..].iter().flatten().next().copied() {
            out[..window].iter_mut().for_each(|v| *v = Some(first));
        }
    }
    Ok(out)
}

/// `E_t[dĝ₀]/dt = −κ₁ ĝ₀` for an OU-driven linear target.
#[inline]
pub fn target_drift_linear(target: f64, kappa1: f64) -> f64 {
    -kappa1 * target
}

/// How `Γ̂₀²` is obtained for a synthesized path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum GammaMode {
    ClosedForm,
    Rolling { window: usize },
}

/// Costfree target along a simulated path: `Σ βₖ γₖ(Zₖ) G / σ_t`.
pub fn model_targets(model: &ModelSpec, path: &MarketPath, g: Gearing) -> Vec<f64> {
    let n_ret = model.return_factor_count();
    (0..path.x.len())
        .map(|i| {
            let signal: f64 = (0..n_ret)
                .map(|k| model.beta[k] * model.coupling[k].apply(path.z[k][i]))
                .sum();
            // μ_X = signal σ_t, σ_X = σ_t
            signal * g.get() / path.sigma_t[i]
        })
        .collect()
}

/// Per-step policy for a simulated path.
pub fn model_policy(model: &ModelSpec, path: &MarketPath, g: Gearing, mode: GammaMode) -> Result<Vec<PolicyState>> {
    model.validate()?;
    path.validate()?;
    if path.z.len() != model.factors.len() {
        return Err(Error::LengthMismatch {
            what: "path factors",
            expected: model.factors.len(),
            actual: path.z.len(),
        });
    }
    let targets = model_targets(model, path, g);
    let n_ret = model.return_factor_count();
    let drift_of = |target: f64| match (model.kind, n_ret) {
        (ModelKind::Linear, 1) => Some(target_drift_linear(target, model.factors[0].kappa)),
        _ => None,
    };

    let gamma: Vec<Option<f64>> = match mode {
        GammaMode::Rolling { window } => gamma_sq_rolling(&targets, &path.x, window)?,
        GammaMode::ClosedForm => {
            if n_ret != 1 {
                return Err(invalid(
                    "closed-form gamma_sq needs one return factor; use rolling estimation",
                ));
            }
            let beta = model.beta[0];
            let kappa1 = model.factors[0].kappa;
            let coupling = model.coupling[0];
            let z1 = &path.z[0];
            match model.vol_factor_index() {
                None => (0..targets.len())
                    .map(|i| {
                        let slope = coupling.derivative(z1[i]);
                        Some(gamma_sq_nonlinear(beta, slope, kappa1, model.sigma_bar, g))
                    })
                    .collect(),
                Some(v) => {
                    let p = StochVolParams {
                        beta,
                        kappa1,
                        kappa_v: model.factors[v].kappa,
                        eta: model.eta,
                        rho_1v: model.factor_corr(0, v),
                    };
                    (0..targets.len())
                        .map(|i| {
                            let slope = coupling.derivative(z1[i]);
                            Some(gamma_sq_stochvol_coupled(&p, slope, path.sigma_t[i], targets[i], g))
                        })
                        .collect()
                }
            }
        }
    };

    Ok(targets
        .iter()
        .zip(gamma)
        .zip(&path.sigma_t)
        .map(|((&target, gamma_sq), &sigma_hat)| PolicyState {
            target,
            gamma_sq,
            sigma_hat,
            target_drift: drift_of(target),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate, Coupling, FactorSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g(v: f64) -> Gearing {
        Gearing::new(v).unwrap()
    }

    #[test]
    fn gearing_must_be_positive() {
        assert!(Gearing::new(0.0).is_err());
        assert!(Gearing::new(-1.0).is_err());
        assert!(Gearing::new(f64::NAN).is_err());
    }

    #[test]
    fn utility_values() {
        assert_eq!(utility(0.0, g(1.0)), 0.0);
        assert_relative_eq!(utility(1.0, g(1.0)), 0.632_120_558_8, epsilon = 1e-10);
    }

    #[test]
    fn utility_derivatives_at_origin() {
        for gv in [0.5, 1.0, 75e6] {
            let h = 1e-3 * gv;
            let u = |x| utility(x, g(gv));
            let d1 = (u(h) - u(-h)) / (2.0 * h);
            let d2 = (u(h) - 2.0 * u(0.0) + u(-h)) / (h * h);
            assert_relative_eq!(d1, 1.0, max_relative = 1e-6);
            assert_relative_eq!(d2, -1.0 / gv, max_relative = 1e-6);
        }
    }

    #[test]
    fn target_examples() {
        // linear model, Z1 = 1: mu = beta sigma Z1
        let t = target_costfree(0.2 * 0.5, 0.5, g(1.0)).unwrap();
        assert_relative_eq!(t, 0.4, epsilon = 1e-15);
        assert_eq!(target_costfree(0.0, 0.5, g(1.0)).unwrap(), 0.0);
        assert_relative_eq!(target_costfree(0.1, 0.5, g(2.0)).unwrap(), 2.0 * t, epsilon = 1e-15);
        assert!(target_costfree(0.1, 0.0, g(1.0)).is_err());
    }

    #[test]
    fn gamma_sq_closed_forms() {
        assert_relative_eq!(gamma_sq_linear(0.2, 0.02, 0.5, g(1.0)), 0.0256, epsilon = 1e-15);
        assert_eq!(gamma_sq_linear(0.0, 0.02, 0.5, g(1.0)), 0.0);
        assert_relative_eq!(
            gamma_sq_linear(0.2, 0.02, 1.0, g(1.0)),
            gamma_sq_linear(0.2, 0.02, 0.5, g(1.0)) / 16.0,
            epsilon = 1e-15
        );
        let slope = Coupling::Tanh2.derivative(0.0);
        assert_relative_eq!(
            gamma_sq_nonlinear(0.2, slope, 0.02, 0.5, g(1.0)),
            0.1024,
            epsilon = 1e-15
        );
        let far = Coupling::Tanh2.derivative(30.0);
        assert!(gamma_sq_nonlinear(0.2, far, 0.02, 0.5, g(1.0)) < 1e-40);
    }

    #[test]
    fn gamma_sq_stochvol_examples() {
        // zero target kills the coupling terms
        let v = gamma_sq_stochvol(0.2, 0.02, 0.005, 0.4, -0.7, 0.45, 0.0, g(1.0));
        assert_relative_eq!(v, gamma_sq_linear(0.2, 0.02, 0.45, g(1.0)), epsilon = 1e-15);
        // scenario (a) parameters at Z1 = 1, sigma_t = 0.5, target 0.4
        let v = gamma_sq_stochvol(0.2, 0.02, 0.005, 0.4, 0.0, 0.5, 0.4, g(1.0));
        assert_relative_eq!(v, 0.029_696, epsilon = 1e-12);
    }

    #[test]
    fn gamma_sq_stochvol_clamps_at_zero() {
        // The quadratic in the target has discriminant 4ac(ρ² − 1), so only an
        // out-of-range correlation can push it below zero.
        let v = gamma_sq_stochvol(0.2, 0.02, 0.5, 1.0, -1.5, 0.5, 0.06, g(1.0));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn target_drift_examples() {
        assert_eq!(target_drift_linear(0.0, 0.02), 0.0);
        assert_relative_eq!(target_drift_linear(0.4, 0.02), -0.008, epsilon = 1e-15);
        assert!(target_drift_linear(-0.3, 0.02) > 0.0);
    }

    #[test]
    fn rolling_constant_target_is_zero() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
        let t = vec![0.3; 50];
        let r = gamma_sq_rolling(&t, &x, 10).unwrap();
        assert!(r.iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn rolling_target_equal_to_price_is_one() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).cos() * 3.0).collect();
        let r = gamma_sq_rolling(&x, &x, 25).unwrap();
        for v in r {
            assert_relative_eq!(v.unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rolling_flat_prices_are_undefined() {
        let mut x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        x.extend(std::iter::repeat_n(39.0, 40));
        let t: Vec<f64> = (0..80).map(|i| (i as f64).sqrt()).collect();
        let r = gamma_sq_rolling_with(&t, &x, 10, Warmup::NoTrade).unwrap();
        assert!(r[..10].iter().all(Option::is_none));
        assert!(r[10..49].iter().all(Option::is_some));
        assert!(r[49..].iter().all(Option::is_none));
    }

    #[test]
    fn rolling_rejects_bad_inputs() {
        assert!(gamma_sq_rolling(&[1.0; 5], &[1.0; 5], 1).is_err());
        assert!(gamma_sq_rolling(&[1.0; 5], &[1.0; 6], 2).is_err());
    }

    #[test]
    fn rolling_matches_brute_force() {
        let x: Vec<f64> = (0..3000).map(|i| ((i * 7919) % 113) as f64 * 0.01).collect();
        let t: Vec<f64> = (0..3000).map(|i| ((i * 337) % 71) as f64 * 0.02).collect();
        let w = 37;
        let r = gamma_sq_rolling(&t, &x, w).unwrap();
        for i in (w..3000).step_by(97) {
            let num: f64 = (i + 1 - w..=i).map(|k| (t[k] - t[k - 1]).powi(2)).sum();
            let den: f64 = (i + 1 - w..=i).map(|k| (x[k] - x[k - 1]).powi(2)).sum();
            assert_relative_eq!(r[i].unwrap(), num / den, max_relative = 1e-10);
        }
        assert_eq!(r[0], r[w]);
    }

    #[test]
    fn closed_form_policy_linear_is_constant() {
        let m = ModelSpec::linear(0.2, 0.02, 0.5, 0.0);
        let p = simulate(&m, 500, 1.0, 3).unwrap();
        let states = model_policy(&m, &p, g(1.0), GammaMode::ClosedForm).unwrap();
        let first = states[0].gamma_sq.unwrap();
        assert_relative_eq!(first, 0.0256, epsilon = 1e-15);
        assert!(states.iter().all(|s| s.gamma_sq == Some(first)));
        for (s, z) in states.iter().zip(&p.z[0]) {
            assert_relative_eq!(s.target, 0.2 * z / 0.5, epsilon = 1e-14);
            assert_relative_eq!(s.target_drift.unwrap(), -0.02 * s.target, epsilon = 1e-16);
        }
    }

    #[test]
    fn closed_form_rejected_for_two_factors() {
        let m = ModelSpec {
            kind: ModelKind::TwoFactorStochasticVol,
            beta: vec![0.1, 0.1],
            sigma_bar: 0.5,
            eta: 0.4,
            factors: vec![
                FactorSpec::returns(0.02),
                FactorSpec::returns(0.005),
                FactorSpec::volatility(0.005),
            ],
            corr: vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.5, 0.0],
                vec![0.0, 0.5, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
            coupling: vec![Coupling::Tanh2, Coupling::Tanh2],
        };
        let p = simulate(&m, 400, 1.0, 3).unwrap();
        assert!(model_policy(&m, &p, g(1.0), GammaMode::ClosedForm).is_err());
        let s = model_policy(&m, &p, g(1.0), GammaMode::Rolling { window: 50 }).unwrap();
        assert!(s.iter().all(|s| s.gamma_sq.unwrap() >= 0.0 && s.target_drift.is_none()));
    }

    proptest! {
        #[test]
        fn stochvol_nonnegative_for_valid_correlation(beta in -1.0f64..1.0, kv in 1e-4f64..1.0,
                                                      eta in 0.0f64..2.0, rho in -1.0f64..1.0,
                                                      sigma in 0.05f64..5.0, target in -50.0f64..50.0) {
            prop_assert!(gamma_sq_stochvol(beta, 0.02, kv, eta, rho, sigma, target, g(1.0)) >= 0.0);
        }

        #[test]
        fn identity_coupling_matches_linear(beta in -1.0f64..1.0, kappa in 1e-4f64..1.0,
                                            sigma in 0.05f64..5.0, gv in 0.1f64..100.0) {
            let a = gamma_sq_nonlinear(beta, 1.0, kappa, sigma, g(gv));
            let b = gamma_sq_linear(beta, kappa, sigma, g(gv));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn zero_eta_matches_linear(beta in -1.0f64..1.0, kappa in 1e-4f64..1.0, kv in 1e-4f64..1.0,
                                   rho in -1.0f64..1.0, sigma in 0.05f64..5.0, target in -5.0f64..5.0,
                                   gv in 0.1f64..100.0) {
            let a = gamma_sq_stochvol(beta, kappa, kv, 0.0, rho, sigma, target, g(gv));
            let b = gamma_sq_linear(beta, kappa, sigma, g(gv));
            prop_assert!((a - b).abs() <= 1e-14 * b.max(1e-300));
        }

        #[test]
        fn gearing_scaling(mu in -1.0f64..1.0, sigma in 0.05f64..5.0, beta in -1.0f64..1.0,
                           gv in 0.1f64..100.0, k in 0.1f64..10.0) {
            let t1 = target_costfree(mu, sigma, g(gv)).unwrap();
            let t2 = target_costfree(mu, sigma, g(k * gv)).unwrap();
            prop_assert!((t2 - k * t1).abs() <= 1e-12 * t1.abs().max(1e-300));
            let a = gamma_sq_linear(beta, 0.02, sigma, g(gv));
            let b = gamma_sq_linear(beta, 0.02, sigma, g(k * gv));
            prop_assert!((b - k * k * a).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }
}
