//! No-trade band geometry.
//!
//! Half-width `δθ = (3 ε G Γ̂₀² / 2)^{1/3}`; displacement
//! `dθ = (E[dĝ₀]/V[dX]) (2 ε² G² / 3Γ̂₀²)^{1/3}`. Note `δθ · dθ = (E[dĝ₀]/V[dX]) ε G`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::policy::Gearing;

/// Proportional cost per unit traded, symmetric for buys and sells.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct CostSpec {
    pub epsilon: f64,
}

impl CostSpec {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon >= 0.0 && epsilon.is_finite() {
            Ok(Self { epsilon })
        } else {
            Err(invalid(format!("cost must be >= 0, got {epsilon}")))
        }
    }

    pub fn free() -> Self {
        Self { epsilon: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
    pub half_width: f64,
    pub displacement: f64,
    pub center: f64,
}

impl Band {
    pub fn contains(&self, position: f64) -> bool {
        self.lower <= position && position <= self.upper
    }
}

pub fn half_width(cost: CostSpec, g: Gearing, gamma_sq: f64) -> f64 {
    (1.5 * cost.epsilon * g.get() * gamma_sq.max(0.0)).cbrt()
}

/// Band offset from the target; zero when there is no target variation.
pub fn displacement(cost: CostSpec, g: Gearing, gamma_sq: f64, target_drift: f64, var_dx: f64) -> f64 {
    if gamma_sq.is_nan() || gamma_sq <= 0.0 || target_drift == 0.0 || cost.epsilon == 0.0 {
        return 0.0;
    }
    let gv = g.get();
    let e = cost.epsilon;
    (target_drift / var_dx) * (2.0 * e * e * gv * gv / (3.0 * gamma_sq)).cbrt()
}

/// `λ` scales the half-width only.
pub fn make_band(target: f64, half_width: f64, displacement: f64, lambda: f64) -> Band {
    let center = target + displacement;
    let reach = lambda * half_width;
    Band {
        lower: center - reach,
        upper: center + reach,
        half_width,
        displacement,
        center,
    }
}

/// Linear one-factor model: `(3εκ₁ / σ|β|)^{1/3} G|β| / σ`.
pub fn linear_half_width(cost: CostSpec, g: Gearing, beta: f64, kappa1: f64, sigma: f64) -> f64 {
    let b = beta.abs();
    if b == 0.0 {
        return 0.0;
    }
    (3.0 * cost.epsilon * kappa1 / (sigma * b)).cbrt() * g.get() * b / sigma
}

/// Linear one-factor model: `−θ̂ (ε̂² κ₁² / 3β²)^{1/3}` with `ε̂ = ε/σ`.
pub fn linear_displacement(cost: CostSpec, target: f64, beta: f64, kappa1: f64, sigma: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    let e_hat = cost.epsilon / sigma;
    -target * (e_hat * e_hat * kappa1 * kappa1 / (3.0 * beta * beta)).cbrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{gamma_sq_linear, target_drift_linear};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g1() -> Gearing {
        Gearing::new(1.0).unwrap()
    }

    fn eps(e: f64) -> CostSpec {
        CostSpec::new(e).unwrap()
    }

    #[test]
    fn half_width_examples() {
        let w = half_width(eps(0.2), g1(), 0.0256);
        assert_relative_eq!(w, 0.00768f64.cbrt(), epsilon = 1e-15);
        assert_relative_eq!(w, 0.197_296_966, epsilon = 1e-9);
        assert_eq!(half_width(eps(0.0), g1(), 0.0256), 0.0);
        assert_eq!(half_width(eps(0.2), g1(), 0.0), 0.0);
        let ratio = half_width(eps(0.4), g1(), 0.0256) / w;
        assert_relative_eq!(ratio, 2f64.cbrt(), epsilon = 1e-14);
    }

    #[test]
    fn linear_specialization_agrees() {
        let generic = half_width(eps(0.2), g1(), gamma_sq_linear(0.2, 0.02, 0.5, g1()));
        let special = linear_half_width(eps(0.2), g1(), 0.2, 0.02, 0.5);
        assert_relative_eq!(generic, special, max_relative = 1e-14);
    }

    #[test]
    fn displacement_examples() {
        let g = g1();
        let gamma = gamma_sq_linear(0.2, 0.02, 0.5, g);
        let target = 0.4;
        let generic = displacement(eps(0.2), g, gamma, target_drift_linear(target, 0.02), 0.25);
        let special = linear_displacement(eps(0.2), target, 0.2, 0.02, 0.5);
        assert_relative_eq!(generic, special, max_relative = 1e-13);
        assert_relative_eq!(generic, -0.032_438_41, epsilon = 1e-8);
        assert_eq!(displacement(eps(0.2), g, gamma, 0.0, 0.25), 0.0);
        assert_eq!(displacement(eps(0.2), g, 0.0, -0.008, 0.25), 0.0);
        let small = linear_displacement(eps(0.05), target, 0.2, 0.02, 0.5);
        assert_relative_eq!((small / target).abs(), 0.032_183, epsilon = 1e-6);
    }

    #[test]
    fn make_band_examples() {
        let b = make_band(0.4, 0.2, 0.0, 1.0);
        assert_relative_eq!(b.lower, 0.2, epsilon = 1e-15);
        assert_relative_eq!(b.upper, 0.6, epsilon = 1e-15);
        let b = make_band(0.4, 0.2, 0.0, 0.0);
        assert_eq!((b.lower, b.upper, b.center), (0.4, 0.4, 0.4));
        let b = make_band(0.4, 0.2, 0.0, 2.0);
        assert_relative_eq!(b.lower, 0.0, epsilon = 1e-15);
        assert_relative_eq!(b.upper, 0.8, epsilon = 1e-15);
        let b = make_band(0.4, 0.2, -0.05, 1.0);
        assert_relative_eq!(b.center, 0.35, epsilon = 1e-15);
        assert_relative_eq!(b.upper - b.lower, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn negative_cost_rejected() {
        assert!(CostSpec::new(-0.1).is_err());
    }

    proptest! {
        #[test]
        fn cube_root_homogeneity(e in 0.0f64..10.0, gv in 0.01f64..1e3, gamma in 0.0f64..10.0, k in 0.01f64..10.0) {
            let g = Gearing::new(gv).unwrap();
            let a = half_width(eps(k * k * k * e), g, gamma);
            let b = k * half_width(eps(e), g, gamma);
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        }

        #[test]
        fn width_times_displacement(e in 1e-4f64..1.0, gv in 0.01f64..1e3, gamma in 1e-6f64..10.0,
                                    drift in -1.0f64..1.0, var_dx in 1e-3f64..10.0) {
            let g = Gearing::new(gv).unwrap();
            let c = eps(e);
            let prod = half_width(c, g, gamma) * displacement(c, g, gamma, drift, var_dx);
            let expect = drift / var_dx * e * gv;
            prop_assert!((prod - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
        }

        #[test]
        fn band_contains_center_and_is_monotone(target in -5.0f64..5.0, e1 in 0.0f64..1.0, de in 0.0f64..1.0,
                                                gamma in 0.0f64..1.0, dg in 0.0f64..1.0, lambda in 0.0f64..5.0) {
            let g = Gearing::new(1.0).unwrap();
            let w = half_width(eps(e1), g, gamma);
            let b = make_band(target, w, 0.0, lambda);
            prop_assert!(b.contains(b.center));
            prop_assert!(half_width(eps(e1 + de), g, gamma) >= w);
            prop_assert!(half_width(eps(e1), g, gamma + dg) >= w);
        }
    }
}
