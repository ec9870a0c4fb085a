//! Bijections between the natural parameter space and the unconstrained space
//! the sampler proposes in, with their log-Jacobians.
//!
//! Bounded coordinates use the scaled logistic map
//! `g(x; lb, ub) = (lb + ub e^x) / (1 + e^x)`; the origin time uses the
//! half-line map `t0 = e^x`. The sampler's acceptance ratio multiplies the
//! natural-space density by `|dg/dx|`, so each block exposes the sum of its
//! coordinates' log-derivatives.

use crate::geo::GeoPoint;
use crate::model::{EarthquakeParams, ModelParams};
use crate::numeric::softplus;
use thiserror::Error;

pub const LAT_BOUNDS: (f64, f64) = (-90.0, 90.0);
pub const LON_BOUNDS: (f64, f64) = (-180.0, 180.0);
/// Operational depth support in km, shared by the prior and the transform.
pub const DEPTH_BOUNDS_KM: (f64, f64) = (5.0, 100.0);
pub const UNIT_BOUNDS: (f64, f64) = (0.0, 1.0);

/// Support of one unconstrained coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoordSupport {
    /// Bounded interval mapped through the scaled logistic.
    Interval { lb: f64, ub: f64 },
    /// `[0, inf)` mapped through exp.
    HalfLine,
}

/// One Metropolis block: its index, dimension and per-coordinate supports.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub index: usize,
    pub dim: usize,
    pub supports: Vec<CoordSupport>,
}

/// The three parameter blocks: (lat, lon, depth, t0), (alpha), (pi).
pub fn block_specs() -> [BlockSpec; 3] {
    [
        BlockSpec {
            index: 0,
            dim: 4,
            supports: vec![
                CoordSupport::Interval { lb: LAT_BOUNDS.0, ub: LAT_BOUNDS.1 },
                CoordSupport::Interval { lb: LON_BOUNDS.0, ub: LON_BOUNDS.1 },
                CoordSupport::Interval { lb: DEPTH_BOUNDS_KM.0, ub: DEPTH_BOUNDS_KM.1 },
                CoordSupport::HalfLine,
            ],
        },
        BlockSpec {
            index: 1,
            dim: 1,
            supports: vec![CoordSupport::Interval { lb: UNIT_BOUNDS.0, ub: UNIT_BOUNDS.1 }],
        },
        BlockSpec {
            index: 2,
            dim: 1,
            supports: vec![CoordSupport::Interval { lb: UNIT_BOUNDS.0, ub: UNIT_BOUNDS.1 }],
        },
    ]
}

#[derive(Debug, Error, PartialEq)]
pub enum ReparamError {
    #[error("value {0} is on or outside the support ({1}, {2}); cannot map to the real line")]
    Boundary(f64, f64, f64),
    #[error("origin time {0} must be strictly positive")]
    NonPositiveTime(f64),
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Scaled logistic `g(x; lb, ub)`, strictly increasing from `lb` to `ub`.
/// For large `x` the algebraically equivalent form in `e^{-x}` avoids
/// inf/inf.
pub fn logistic(x: f64, lb: f64, ub: f64) -> f64 {
    if x > 35.0 {
        let e = (-x).exp();
        (lb * e + ub) / (e + 1.0)
    } else {
        let e = x.exp();
        (lb + ub * e) / (1.0 + e)
    }
}

/// Inverse of [`logistic`]; rejects values on or outside the bounds.
pub fn logistic_inv(v: f64, lb: f64, ub: f64) -> Result<f64, ReparamError> {
    if !v.is_finite() {
        return Err(ReparamError::NonFinite);
    }
    if v <= lb || v >= ub {
        return Err(ReparamError::Boundary(v, lb, ub));
    }
    Ok(((v - lb) / (ub - v)).ln())
}

/// `ln |dg/dx|` for the scaled logistic: `ln(ub - lb) + x - 2 ln(1 + e^x)`.
pub fn ln_logistic_jacobian(x: f64, lb: f64, ub: f64) -> f64 {
    (ub - lb).ln() + x - 2.0 * softplus(x)
}

/// Unconstrained coordinates of the three blocks:
/// `theta = (lat~, lon~, depth~, t0~)`, then `alpha~` and `pi~`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedParams {
    pub theta: [f64; 4],
    pub alpha: f64,
    pub pi: f64,
}

impl TransformedParams {
    pub fn from_flat(x: &[f64]) -> Self {
        assert_eq!(x.len(), 6, "expected 6 unconstrained coordinates");
        Self {
            theta: [x[0], x[1], x[2], x[3]],
            alpha: x[4],
            pi: x[5],
        }
    }

    pub fn to_flat(&self) -> [f64; 6] {
        [
            self.theta[0],
            self.theta[1],
            self.theta[2],
            self.theta[3],
            self.alpha,
            self.pi,
        ]
    }
}

/// Maps unconstrained coordinates into the natural space. Total on finite
/// inputs: the logistic saturates at its bounds and exp saturates at
/// `f64::MAX`, leaving rejection of such proposals to the prior.
pub fn to_natural(x: &TransformedParams) -> ModelParams {
    let lat = logistic(x.theta[0], LAT_BOUNDS.0, LAT_BOUNDS.1);
    let lon = logistic(x.theta[1], LON_BOUNDS.0, LON_BOUNDS.1);
    let depth = logistic(x.theta[2], DEPTH_BOUNDS_KM.0, DEPTH_BOUNDS_KM.1);
    let t0 = x.theta[3].exp().min(f64::MAX);
    ModelParams {
        theta: EarthquakeParams {
            epicentre: GeoPoint::new(lat, lon).expect("logistic output lies inside bounds"),
            depth_km: depth,
            origin_time_s: t0,
        },
        alpha: logistic(x.alpha, UNIT_BOUNDS.0, UNIT_BOUNDS.1),
        pi: logistic(x.pi, UNIT_BOUNDS.0, UNIT_BOUNDS.1),
    }
}

/// Exact inverse of [`to_natural`] for parameters strictly inside their
/// supports; boundary values signal an invalid initialisation.
pub fn to_unconstrained(phi: &ModelParams) -> Result<TransformedParams, ReparamError> {
    let t0 = phi.theta.origin_time_s;
    if !(t0 > 0.0) || !t0.is_finite() {
        return Err(ReparamError::NonPositiveTime(t0));
    }
    Ok(TransformedParams {
        theta: [
            logistic_inv(phi.theta.epicentre.lat(), LAT_BOUNDS.0, LAT_BOUNDS.1)?,
            logistic_inv(phi.theta.epicentre.lon(), LON_BOUNDS.0, LON_BOUNDS.1)?,
            logistic_inv(phi.theta.depth_km, DEPTH_BOUNDS_KM.0, DEPTH_BOUNDS_KM.1)?,
            t0.ln(),
        ],
        alpha: logistic_inv(phi.alpha, UNIT_BOUNDS.0, UNIT_BOUNDS.1)?,
        pi: logistic_inv(phi.pi, UNIT_BOUNDS.0, UNIT_BOUNDS.1)?,
    })
}

/// Sum of `ln |dg/dx|` over the coordinates of block `k` (0-based).
pub fn log_abs_jacobian(x: &TransformedParams, k: usize) -> f64 {
    match k {
        0 => {
            ln_logistic_jacobian(x.theta[0], LAT_BOUNDS.0, LAT_BOUNDS.1)
                + ln_logistic_jacobian(x.theta[1], LON_BOUNDS.0, LON_BOUNDS.1)
                + ln_logistic_jacobian(x.theta[2], DEPTH_BOUNDS_KM.0, DEPTH_BOUNDS_KM.1)
                + x.theta[3]
        }
        1 => ln_logistic_jacobian(x.alpha, UNIT_BOUNDS.0, UNIT_BOUNDS.1),
        2 => ln_logistic_jacobian(x.pi, UNIT_BOUNDS.0, UNIT_BOUNDS.1),
        _ => panic!("block index {k} out of range"),
    }
}

/// Sum of the log-Jacobians over all three blocks.
pub fn log_abs_jacobian_total(x: &TransformedParams) -> f64 {
    log_abs_jacobian(x, 0) + log_abs_jacobian(x, 1) + log_abs_jacobian(x, 2)
}
