//! Invariant extended Kalman filter used as the baseline local filter.
//!
//! Shares the right-invariant error convention of the unscented filter but
//! propagates and corrects with analytic error-state Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::dise::LocalFilter;
use crate::error::{Error, Result};
use crate::liegroup::TangentVector;
use crate::liegroup::GroupElement;
use crate::linalg::{condition, symmetrize};
use crate::unscented::{Dynamics, Estimate, Observation, UpdateArtifacts};

/// Dynamics with error-state Jacobians `ξ⁺ ≈ F ξ + G n`.
pub trait LinearizedDynamics: Dynamics {
    fn error_jacobians(&self, x: &GroupElement, u: &Self::Input) -> (DMatrix<f64>, DMatrix<f64>);
}

/// Observation with Jacobian with respect to the left-perturbation coordinates.
pub trait LinearizedObservation: Observation {
    fn jacobian(&self, x: &GroupElement) -> DMatrix<f64>;
}

pub fn iekf_propagate<D: LinearizedDynamics>(prev: &Estimate, u: &D::Input, noise_cov: &DMatrix<f64>, f: &D) -> Result<Estimate> {
    let zero = vec![0.0; f.noise_dim()];
    let mean = f.propagate(&prev.mean, u, &zero);
    let (fm, gm) = f.error_jacobians(&prev.mean, u);
    let cov = &fm * &prev.cov * fm.transpose() + &gm * noise_cov * gm.transpose();
    let (cov, _) = condition(&cov, "propagated covariance")?;
    Ok(Estimate { mean, cov })
}

/// Joseph-form update. The returned artifacts carry the model Jacobian as `h`
/// and the measurement noise as `r`.
pub fn iekf_update<H: LinearizedObservation>(pred: &Estimate, z: &DVector<f64>, meas_cov: &DMatrix<f64>, h: &H) -> Result<(Estimate, UpdateArtifacts)> {
    if z.len() != h.dim() {
        return Err(Error::InvalidArgument(format!("measurement has {} entries, model expects {}", z.len(), h.dim())));
    }
    let d = pred.dim();
    let hm = h.jacobian(&pred.mean);
    let z_pred = h.observe(&pred.mean);
    let p_xz = &pred.cov * hm.transpose();
    let s = symmetrize(&(&hm * &p_xz + meas_cov));
    let chol = nalgebra::Cholesky::new(s.clone()).ok_or(Error::SingularInnovation)?;
    let gain = chol.solve(&p_xz.transpose()).transpose();
    let innovation = z - &z_pred;
    let xi = TangentVector::new(pred.mean.kind(), &gain * &innovation)?;
    let mean = xi.exp().compose_unchecked(&pred.mean).renormalized();
    let a = DMatrix::identity(d, d) - &gain * &hm;
    let cov = &a * &pred.cov * a.transpose() + &gain * meas_cov * gain.transpose();
    let (cov, _) = condition(&cov, "updated covariance").map_err(|_| Error::Divergence("posterior covariance lost positive definiteness".into()))?;
    Ok((
        Estimate { mean, cov },
        UpdateArtifacts { z_pred, innovation, p_zz: s, p_xz, h: hm, r: symmetrize(meas_cov) },
    ))
}

#[derive(Clone, Debug)]
pub struct IekfFilter<D, H> {
    pub dynamics: D,
    pub observation: H,
    pub process_noise: DMatrix<f64>,
    pub measurement_noise: DMatrix<f64>,
}

impl<D, H> IekfFilter<D, H> {
    pub fn new(dynamics: D, observation: H, process_noise: DMatrix<f64>, measurement_noise: DMatrix<f64>) -> Self {
        Self { dynamics, observation, process_noise, measurement_noise }
    }
}

impl<D: LinearizedDynamics, H: LinearizedObservation> LocalFilter for IekfFilter<D, H> {
    type Input = D::Input;

    fn predict(&self, est: &Estimate, u: &Self::Input) -> Result<Estimate> {
        iekf_propagate(est, u, &self.process_noise, &self.dynamics)
    }

    fn correct(&self, est: &Estimate, z: &DVector<f64>) -> Result<(Estimate, UpdateArtifacts)> {
        iekf_update(est, z, &self.measurement_noise, &self.observation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::linear::{LinearObservation, LinearTranslation};
    use crate::models::{ImuDynamics, RangeObservation};
    use crate::simworld::ImuReading;
    use crate::unscented::UkfFilter;
    use nalgebra::{Matrix3, Vector3};

    #[test]
    fn linear_models_reduce_to_kalman_filter() {
        let a = Matrix3::new(1.0, 0.2, 0.0, 0.0, 1.0, 0.0, 0.1, 0.0, 0.9);
        let hm = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.5]);
        let o = DMatrix::identity(3, 3) * 0.02;
        let q = DMatrix::from_element(1, 1, 0.3);
        let filt = IekfFilter::new(LinearTranslation::new(a), LinearObservation::new(hm.clone()), o.clone(), q.clone());
        let est = Estimate::new(GroupElement::translation(Vector3::new(1.0, 2.0, 3.0)), DMatrix::identity(3, 3)).unwrap();
        let u = Vector3::new(0.1, 0.0, -0.1);
        let pred = filt.predict(&est, &u).unwrap();
        let ad = DMatrix::from_column_slice(3, 3, a.as_slice());
        let p_kf = &ad * &est.cov * ad.transpose() + &o;
        assert!((&pred.cov - &p_kf).amax() < 1e-12);
        let z = DVector::from_element(1, 0.7);
        let (post, _) = filt.correct(&pred, &z).unwrap();
        let s = (&hm * &p_kf * hm.transpose())[(0, 0)] + 0.3;
        let k = &p_kf * hm.transpose() / s;
        let p_post = &p_kf - &k * &hm * &p_kf;
        assert!((&post.cov - &p_post).amax() < 1e-12);
    }

    #[test]
    fn agrees_with_unscented_filter_for_small_uncertainty() {
        let r0 = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        let x = GroupElement::se23(r0, Vector3::new(0.5, 0.5, 0.0), Vector3::new(-2.0, 2.0, 0.8)).unwrap();
        let est = Estimate::new(x, DMatrix::identity(9, 9) * 1e-6).unwrap();
        let o = DMatrix::identity(6, 6) * 1e-8;
        let q = DMatrix::from_element(1, 1, 0.01);
        let h = RangeObservation::new(Vector3::new(-5.0, -5.0, 0.0));
        let iekf = IekfFilter::new(ImuDynamics::new(0.01), h, o.clone(), q.clone());
        let ukf = UkfFilter::new(9, ImuDynamics::new(0.01), h, o, q);
        let u = ImuReading { t: 0.0, gyro: Vector3::new(0.0, 0.0, 0.5), accel: Vector3::new(0.1, 0.0, -9.81) };
        let a = iekf.predict(&est, &u).unwrap();
        let b = ukf.predict(&est, &u).unwrap();
        assert!((&a.cov - &b.cov).amax() < 1e-10);
        let z = DVector::from_element(1, 7.0);
        let (a, _) = iekf.correct(&a, &z).unwrap();
        let (b, _) = ukf.correct(&b, &z).unwrap();
        assert!((a.mean.position().unwrap() - b.mean.position().unwrap()).amax() < 1e-8);
        assert!((&a.cov - &b.cov).amax() < 1e-10);
    }
}
