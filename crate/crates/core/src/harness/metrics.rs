//! Error metrics. Aggregation order: per-step error → per-node RMSE → mean
//! over nodes → mean over trials.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::liegroup::GroupElement;
use crate::linalg::unskew;

pub fn position_error(est: &GroupElement, truth: &GroupElement) -> f64 {
    let p = est.position().expect("state with position");
    let q = truth.position().expect("state with position");
    (p - q).norm()
}

/// Angle of `R₁ R₂ᵀ` in radians.
pub fn relative_angle(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let m = r1 * r2.transpose();
    let s: Vector3<f64> = unskew(&(m - m.transpose())) * 0.5;
    let c = 0.5 * (m.trace() - 1.0);
    s.norm().atan2(c)
}

pub fn orientation_error_deg(est: &GroupElement, truth: &GroupElement) -> f64 {
    relative_angle(est.rotation(), truth.rotation()).to_degrees()
}

pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Position RMSE (m) and orientation RMSE (deg) of an aligned sequence.
pub fn metrics(truth: &[GroupElement], estimates: &[GroupElement]) -> Result<(f64, f64)> {
    if truth.len() != estimates.len() {
        return Err(Error::InvalidArgument(format!("{} true states but {} estimates", truth.len(), estimates.len())));
    }
    let pos: Vec<f64> = estimates.iter().zip(truth).map(|(e, t)| position_error(e, t)).collect();
    let ori: Vec<f64> = estimates.iter().zip(truth).map(|(e, t)| orientation_error_deg(e, t)).collect();
    Ok((rmse(&pos), rmse(&ori)))
}
