//! Soft thresholding and the side-information proximal operator.
//!
//! The side-information operator is the minimizer of
//! `0.5 (v - u)^2 + mu (|v| + |v - side|)`, written out as five cases whose
//! layout depends on the sign of `side`. Adjacent cases agree in value at
//! their shared boundary; boundaries are resolved by taking the first case
//! (in the order below) whose condition holds, which pins down derivatives.

use num_traits::Float;

use crate::error::{Error, Result};

/// A validated, nonnegative threshold (`gamma` for soft thresholding, `mu`
/// for the side-information operator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxParams<F> {
    threshold: F,
}

impl<F: Float> ProxParams<F> {
    pub fn new(threshold: F) -> Result<Self> {
        if threshold.is_nan() || threshold < F::zero() {
            return Err(Error::InvalidParameter(format!(
                "threshold must be >= 0, got {}",
                threshold.to_f64().unwrap_or(f64::NAN)
            )));
        }
        Ok(Self { threshold })
    }

    pub fn threshold(&self) -> F {
        self.threshold
    }

    pub fn shrink(&self, u: F) -> F {
        shrink(u, self.threshold)
    }

    pub fn side_prox(&self, u: F, side: F) -> F {
        let branch = LesitaBranch::select(u, side, self.threshold);
        branch.value(u, side, self.threshold)
    }
}

/// The ten cases of the side-information operator. `Nonneg*` cases apply
/// when `side >= 0`, `Neg*` when `side < 0`; within each group they are
/// listed in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LesitaBranch {
    /// `u < -2mu`: `u + 2mu`
    NonnegShiftUp,
    /// `-2mu <= u <= 0`: `0`
    NonnegZero,
    /// `0 < u < side`: `u`
    NonnegPass,
    /// `side <= u <= side + 2mu`: `side`
    NonnegClamp,
    /// `u >= side + 2mu`: `u - 2mu`
    NonnegShiftDown,
    /// `u < side - 2mu`: `u + 2mu`
    NegShiftUp,
    /// `side - 2mu <= u <= side`: `side`
    NegClamp,
    /// `side < u < 0`: `u`
    NegPass,
    /// `0 <= u <= 2mu`: `0`
    NegZero,
    /// `u >= 2mu`: `u - 2mu`
    NegShiftDown,
}

impl LesitaBranch {
    pub const ALL: [LesitaBranch; 10] = [
        LesitaBranch::NonnegShiftUp,
        LesitaBranch::NonnegZero,
        LesitaBranch::NonnegPass,
        LesitaBranch::NonnegClamp,
        LesitaBranch::NonnegShiftDown,
        LesitaBranch::NegShiftUp,
        LesitaBranch::NegClamp,
        LesitaBranch::NegPass,
        LesitaBranch::NegZero,
        LesitaBranch::NegShiftDown,
    ];

    /// First case whose condition holds. `mu` is assumed nonnegative.
    pub fn select<F: Float>(u: F, side: F, mu: F) -> Self {
        let two_mu = mu + mu;
        let zero = F::zero();
        if side >= zero {
            if u < -two_mu {
                Self::NonnegShiftUp
            } else if u <= zero {
                Self::NonnegZero
            } else if u < side {
                Self::NonnegPass
            } else if u <= side + two_mu {
                Self::NonnegClamp
            } else {
                Self::NonnegShiftDown
            }
        } else if u < side - two_mu {
            Self::NegShiftUp
        } else if u <= side {
            Self::NegClamp
        } else if u < zero {
            Self::NegPass
        } else if u <= two_mu {
            Self::NegZero
        } else {
            Self::NegShiftDown
        }
    }

    pub fn value<F: Float>(self, u: F, side: F, mu: F) -> F {
        let two_mu = mu + mu;
        match self {
            Self::NonnegShiftUp | Self::NegShiftUp => u + two_mu,
            Self::NonnegShiftDown | Self::NegShiftDown => u - two_mu,
            Self::NonnegZero | Self::NegZero => F::zero(),
            Self::NonnegPass | Self::NegPass => u,
            Self::NonnegClamp | Self::NegClamp => side,
        }
    }

    /// Partial derivatives of the selected case with respect to
    /// `(u, side, mu)`.
    pub fn grads<F: Float>(self) -> ProxGrads<F> {
        let (o, z) = (F::one(), F::zero());
        let two = o + o;
        let (d_du, d_dside, d_dmu) = match self {
            Self::NonnegShiftUp | Self::NegShiftUp => (o, z, two),
            Self::NonnegShiftDown | Self::NegShiftDown => (o, z, -two),
            Self::NonnegZero | Self::NegZero => (z, z, z),
            Self::NonnegPass | Self::NegPass => (o, z, z),
            Self::NonnegClamp | Self::NegClamp => (z, o, z),
        };
        ProxGrads {
            d_du,
            d_dside,
            d_dmu,
        }
    }
}

/// Derivatives of the side-information operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxGrads<F> {
    pub d_du: F,
    pub d_dside: F,
    pub d_dmu: F,
}

fn check_threshold<F: Float>(name: &str, t: F) -> Result<()> {
    if t.is_nan() || t < F::zero() {
        return Err(Error::InvalidParameter(format!(
            "{name} must be >= 0, got {}",
            t.to_f64().unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}

/// Unchecked soft thresholding; `gamma` must be nonnegative.
#[inline]
pub fn shrink<F: Float>(u: F, gamma: F) -> F {
    if u > gamma {
        u - gamma
    } else if u < -gamma {
        u + gamma
    } else {
        F::zero()
    }
}

/// `sign(u) * max(|u| - gamma, 0)`.
pub fn soft_threshold<F: Float>(u: F, gamma: F) -> Result<F> {
    check_threshold("gamma", gamma)?;
    Ok(shrink(u, gamma))
}

/// Derivatives `(d/du, d/dgamma)` of soft thresholding. The dead zone
/// `|u| <= gamma` is closed, so its boundary gets zero derivatives.
pub fn soft_threshold_grad<F: Float>(u: F, gamma: F) -> Result<(F, F)> {
    check_threshold("gamma", gamma)?;
    Ok(shrink_grad(u, gamma))
}

#[inline]
pub(crate) fn shrink_grad<F: Float>(u: F, gamma: F) -> (F, F) {
    if u > gamma {
        (F::one(), -F::one())
    } else if u < -gamma {
        (F::one(), F::one())
    } else {
        (F::zero(), F::zero())
    }
}

/// The side-information proximal operator `xi_mu(u; side)`.
pub fn lesita_prox<F: Float>(u: F, side: F, mu: F) -> Result<F> {
    check_threshold("mu", mu)?;
    Ok(LesitaBranch::select(u, side, mu).value(u, side, mu))
}

/// Piecewise derivatives of [`lesita_prox`] for the branch it selects.
pub fn lesita_prox_grads<F: Float>(u: F, side: F, mu: F) -> Result<ProxGrads<F>> {
    check_threshold("mu", mu)?;
    Ok(LesitaBranch::select(u, side, mu).grads())
}

/// Distance from `u` to the nearest case boundary of the side-information
/// operator.
pub fn lesita_boundary_distance<F: Float>(u: F, side: F, mu: F) -> F {
    let two_mu = mu + mu;
    let z = F::zero();
    let bounds = if side >= z {
        [-two_mu, z, side, side + two_mu]
    } else {
        [side - two_mu, side, z, two_mu]
    };
    bounds
        .iter()
        .map(|&b| (u - b).abs())
        .fold(F::infinity(), F::min)
}

/// Distance from `u` to `+-gamma`.
pub fn shrink_boundary_distance<F: Float>(u: F, gamma: F) -> F {
    (u - gamma).abs().min((u + gamma).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn argmin_grid(u: f64, side: f64, mu: f64, step: f64) -> f64 {
        // the minimizer lies between min(u, side, 0) - 2mu and max(u, side, 0) + 2mu
        let lo = u.min(side).min(0.0) - 2.0 * mu - step;
        let hi = u.max(side).max(0.0) + 2.0 * mu + step;
        let n = ((hi - lo) / step).ceil() as usize;
        let mut best = (f64::INFINITY, lo);
        for i in 0..=n {
            let v = lo + i as f64 * step;
            let f = 0.5 * (v - u).powi(2) + mu * (v.abs() + (v - side).abs());
            if f < best.0 {
                best = (f, v);
            }
        }
        best.1
    }

    #[test]
    fn soft_threshold_examples() {
        assert!((soft_threshold(0.5, 0.15).unwrap() - 0.35).abs() < 1e-15);
        assert_eq!(soft_threshold(0.1, 0.15).unwrap(), 0.0);
        assert!((soft_threshold(-1.0, 0.15).unwrap() + 0.85).abs() < 1e-15);
        assert!(matches!(
            soft_threshold(1.0, -0.1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn soft_threshold_grad_examples() {
        assert_eq!(soft_threshold_grad(0.5, 0.15).unwrap(), (1.0, -1.0));
        assert_eq!(soft_threshold_grad(-0.5, 0.15).unwrap(), (1.0, 1.0));
        assert_eq!(soft_threshold_grad(0.1, 0.15).unwrap(), (0.0, 0.0));
        assert!(soft_threshold_grad(0.1, -1.0).is_err());
    }

    #[test]
    fn lesita_prox_examples() {
        assert_eq!(lesita_prox(1.5, 1.0, 0.5).unwrap(), 1.0);
        assert_eq!(lesita_prox(-0.5, 1.0, 0.5).unwrap(), 0.0);
        assert_eq!(lesita_prox(3.0, 1.0, 0.5).unwrap(), 2.0);
        // u = -2 lies below side - 2mu = -1.5, so the shift case applies
        assert_eq!(lesita_prox(-2.0, -1.0, 0.25).unwrap(), -1.5);
        assert_eq!(lesita_prox(-1.2, -1.0, 0.25).unwrap(), -1.0);
        assert!(lesita_prox(0.0, 0.0, -0.5).is_err());
        assert!(lesita_prox_grads(0.0, 0.0, -0.5).is_err());
    }

    #[test]
    fn lesita_grad_examples() {
        let g = lesita_prox_grads(3.0, 1.0, 0.5).unwrap();
        assert_eq!((g.d_du, g.d_dside, g.d_dmu), (1.0, 0.0, -2.0));
        let g = lesita_prox_grads(1.5, 1.0, 0.5).unwrap();
        assert_eq!((g.d_du, g.d_dside, g.d_dmu), (0.0, 1.0, 0.0));
        let g = lesita_prox_grads(-0.5, 1.0, 0.5).unwrap();
        assert_eq!((g.d_du, g.d_dside, g.d_dmu), (0.0, 0.0, 0.0));
    }

    #[test]
    fn boundaries_use_first_matching_case() {
        // u = 0 with side >= 0 sits on the zero/pass boundary
        assert_eq!(
            LesitaBranch::select(0.0, 1.0, 0.5),
            LesitaBranch::NonnegZero
        );
        // u = side lands in the clamp case, not pass
        assert_eq!(
            LesitaBranch::select(1.0, 1.0, 0.5),
            LesitaBranch::NonnegClamp
        );
        assert_eq!(
            LesitaBranch::select(2.0, 1.0, 0.5),
            LesitaBranch::NonnegClamp
        );
        assert_eq!(
            LesitaBranch::select(-1.5, -1.0, 0.25),
            LesitaBranch::NegClamp
        );
        assert_eq!(LesitaBranch::select(0.0, -1.0, 0.25), LesitaBranch::NegZero);
        assert_eq!(
            LesitaBranch::select(0.5, -1.0, 0.25),
            LesitaBranch::NegZero
        );
    }

    #[test]
    fn zero_side_matches_doubled_soft_threshold() {
        for &mu in &[0.0, 0.15, 0.7] {
            for i in 0..=10_000 {
                let u = -5.0 + i as f64 * 1e-3;
                assert_eq!(
                    lesita_prox(u, 0.0, mu).unwrap(),
                    soft_threshold(u, 2.0 * mu).unwrap()
                );
            }
        }
    }

    #[test]
    fn fixed_point_at_positive_side() {
        for &side in &[0.1, 1.0, 3.7] {
            for &mu in &[0.0, 0.2, 1.5] {
                assert_eq!(lesita_prox(side, side, mu).unwrap(), side);
            }
        }
    }

    #[test]
    fn prox_params_rejects_negative() {
        assert!(ProxParams::new(-1e-9).is_err());
        assert!(ProxParams::new(f64::NAN).is_err());
        let p = ProxParams::new(0.5).unwrap();
        assert_eq!(p.side_prox(3.0, 1.0), 2.0);
        assert_eq!(p.shrink(0.25), 0.0);
    }

    proptest! {
        #[test]
        fn matches_grid_minimizer(u in -5.0f64..5.0, side in -3.0f64..3.0, mu in 0.0f64..1.5) {
            let v = lesita_prox(u, side, mu).unwrap();
            let g = argmin_grid(u, side, mu, 1e-3);
            prop_assert!((v - g).abs() <= 1e-3 + 1e-12);
        }

        #[test]
        fn point_symmetry(u in -5.0f64..5.0, side in -3.0f64..3.0, mu in 0.0f64..1.5) {
            let a = lesita_prox(-u, -side, mu).unwrap();
            let b = lesita_prox(u, side, mu).unwrap();
            prop_assert!((a + b).abs() <= 1e-12);
        }

        #[test]
        fn nonexpansive(u1 in -5.0f64..5.0, u2 in -5.0f64..5.0, side in -3.0f64..3.0, mu in 0.0f64..1.5) {
            let a = lesita_prox(u1, side, mu).unwrap();
            let b = lesita_prox(u2, side, mu).unwrap();
            prop_assert!((a - b).abs() <= (u1 - u2).abs() + 1e-12);
        }

        #[test]
        fn soft_threshold_shrinks(u in -5.0f64..5.0, g in 0.0f64..2.0) {
            let v = soft_threshold(u, g).unwrap();
            prop_assert!(v.abs() <= u.abs());
            prop_assert_eq!(soft_threshold(-u, g).unwrap(), -v);
        }

        #[test]
        fn grads_match_central_differences(u in -5.0f64..5.0, side in -3.0f64..3.0, mu in 0.01f64..1.5) {
            prop_assume!(lesita_boundary_distance(u, side, mu) > 1e-3);
            prop_assume!(side.abs() > 1e-3);
            let h = 1e-6;
            let g = lesita_prox_grads(u, side, mu).unwrap();
            let f = |u: f64, s: f64, m: f64| lesita_prox(u, s, m).unwrap();
            let fd = [
                (f(u + h, side, mu) - f(u - h, side, mu)) / (2.0 * h),
                (f(u, side + h, mu) - f(u, side - h, mu)) / (2.0 * h),
                (f(u, side, mu + h) - f(u, side, mu - h)) / (2.0 * h),
            ];
            for (a, n) in [g.d_du, g.d_dside, g.d_dmu].into_iter().zip(fd) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                prop_assert!(rel <= 1e-6, "analytic {} numeric {}", a, n);
            }
        }
    }
}
