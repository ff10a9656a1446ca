//! Robust M-estimators, their IRLS weights, and the rotation-assisted residual.

use crate::error::{Error, Result};
use crate::graph::{UnitDirection, Vec3};

/// Default Huber transition, on the same scale as the Cauchy width.
pub const DEFAULT_HUBER_DELTA: f64 = 0.1;
pub const DEFAULT_CAUCHY_ALPHA: f64 = 0.1;
pub const DEFAULT_L21_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    SquaredL2,
    Huber { delta: f64 },
    Cauchy { alpha: f64 },
    /// Smoothed l1-of-l2 (group sparse) loss used by LUD-style objectives.
    L21Smooth { floor: f64 },
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Cauchy { alpha: DEFAULT_CAUCHY_ALPHA }
    }
}

impl LossKind {
    pub fn huber(delta: f64) -> Result<Self> {
        check_scale("huber delta", delta)?;
        Ok(LossKind::Huber { delta })
    }

    pub fn cauchy(alpha: f64) -> Result<Self> {
        check_scale("cauchy alpha", alpha)?;
        Ok(LossKind::Cauchy { alpha })
    }

    pub fn l21(floor: f64) -> Result<Self> {
        check_scale("l21 floor", floor)?;
        Ok(LossKind::L21Smooth { floor })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::SquaredL2 => Ok(()),
            LossKind::Huber { delta } => check_scale("huber delta", delta),
            LossKind::Cauchy { alpha } => check_scale("cauchy alpha", alpha),
            LossKind::L21Smooth { floor } => check_scale("l21 floor", floor),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::SquaredL2 => "l2",
            LossKind::Huber { .. } => "huber",
            LossKind::Cauchy { .. } => "cauchy",
            LossKind::L21Smooth { .. } => "l21",
        }
    }

    /// `rho` without the domain check, for hot loops with residuals known to be norms.
    #[inline]
    pub(crate) fn rho_unchecked(&self, eps: f64) -> f64 {
        match *self {
            LossKind::SquaredL2 => eps * eps,
            LossKind::Huber { delta } => {
                if eps <= delta {
                    0.5 * eps * eps
                } else {
                    delta * (eps - 0.5 * delta)
                }
            }
            LossKind::Cauchy { alpha } => (eps * eps / (alpha * alpha)).ln_1p(),
            LossKind::L21Smooth { floor } => eps.max(floor),
        }
    }

    #[inline]
    pub(crate) fn weight_unchecked(&self, eps: f64) -> f64 {
        match *self {
            LossKind::SquaredL2 => 1.0,
            LossKind::Huber { delta } => {
                if eps <= delta {
                    1.0
                } else {
                    delta / eps
                }
            }
            LossKind::Cauchy { alpha } => {
                let a2 = alpha * alpha;
                a2 / (a2 + eps * eps)
            }
            LossKind::L21Smooth { floor } => 1.0 / eps.max(floor),
        }
    }

    /// `rho'(eps) / eps`, the Gauss-Newton weight of a residual vector of norm `eps`
    /// (finite at `eps = 0`).
    #[inline]
    pub fn gradient_weight(&self, eps: f64) -> f64 {
        match *self {
            LossKind::SquaredL2 => 2.0,
            LossKind::Huber { delta } => {
                if eps <= delta {
                    1.0
                } else {
                    delta / eps
                }
            }
            LossKind::Cauchy { alpha } => 2.0 / (alpha * alpha + eps * eps),
            LossKind::L21Smooth { floor } => 1.0 / eps.max(floor),
        }
    }

    /// Derivative of `rho` with respect to the residual.
    #[inline]
    pub fn rho_derivative(&self, eps: f64) -> f64 {
        match *self {
            LossKind::SquaredL2 => 2.0 * eps,
            LossKind::Huber { delta } => eps.min(delta),
            LossKind::Cauchy { alpha } => 2.0 * eps / (alpha * alpha + eps * eps),
            LossKind::L21Smooth { floor } => {
                if eps > floor {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn check_scale(what: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive, got {x}")))
    }
}

fn check_residual(eps: f64) -> Result<()> {
    if eps >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("residual must be non-negative, got {eps}")))
    }
}

/// Robust penalty of a non-negative residual.
pub fn rho(loss: LossKind, eps: f64) -> Result<f64> {
    check_residual(eps)?;
    Ok(loss.rho_unchecked(eps))
}

/// IRLS weight of a non-negative residual.
pub fn weight(loss: LossKind, eps: f64) -> Result<f64> {
    check_residual(eps)?;
    Ok(loss.weight_unchecked(eps))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationAssist {
    pub beta: f64,
}

impl Default for RotationAssist {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

impl RotationAssist {
    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta >= 0.0 {
            Ok(Self { beta })
        } else {
            Err(Error::Config(format!("beta must be non-negative, got {beta}")))
        }
    }

    /// Combines a translation residual norm with the edge's rotation misfit.
    #[inline]
    pub fn combine(&self, translation_residual: f64, rot_residual: f64) -> f64 {
        (translation_residual * translation_residual + self.beta * rot_residual * rot_residual)
            .sqrt()
    }
}

/// `(||(tj - ti) d - v||^2 + beta ||Ri^T Rj - Rij||^2)^(1/2)`.
pub fn combined_residual(
    ti: &Vec3,
    tj: &Vec3,
    d: f64,
    v: &UnitDirection,
    rot_residual: f64,
    assist: RotationAssist,
) -> f64 {
    let r = ((tj - ti) * d - v.as_vec()).norm();
    assist.combine(r, rot_residual)
}
