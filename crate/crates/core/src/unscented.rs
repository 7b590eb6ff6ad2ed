//! Invariant unscented Kalman filter on matrix Lie groups.
//!
//! Sigma points live in exponential coordinates and perturb the state on the
//! left, `exp(ζ)·X`, so every covariance in this crate describes the
//! right-invariant error. Propagation pushes the augmented `(state, process
//! noise)` sigma set through the dynamics and re-expresses each result
//! relative to the noiseless prediction; the update augments with the
//! measurement noise and adds a zero-weighted-by-κ center point.
//!
//! Besides the corrected estimate, the update returns the pseudo-measurement
//! matrix `H = P_xzᵀ P⁻¹` and effective noise `R = P_zz − H P_xz`, which let
//! neighbours fuse this agent's measurement in information form.

use nalgebra::{DMatrix, DVector};

use crate::dise::LocalFilter;
use crate::error::{Error, Result};
use crate::liegroup::{GroupElement, TangentVector};
use crate::linalg::{block_diag, condition, symmetrize};

/// A group-valued state estimate with its right-invariant error covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub mean: GroupElement,
    pub cov: DMatrix<f64>,
}

impl Estimate {
    /// Checks dimensions and positive definiteness; the covariance is symmetrized.
    pub fn new(mean: GroupElement, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.kind().dim();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::InvalidArgument(format!("covariance must be {d}x{d} for {:?}", mean.kind())));
        }
        let (cov, _) = condition(&cov, "estimate covariance")?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.kind().dim()
    }
}

/// Scaling and weights of the classical Julier sigma-point scheme for an
/// augmented dimension `dim`: `κ = max(3 − L, 0.1)`, `γ = L + κ`,
/// `w_k = 1/(2γ)` and center weight `w₀ = κ/γ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnscentedParams {
    pub dim: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub center_weight: f64,
    pub weight: f64,
}

impl UnscentedParams {
    pub const KAPPA_FLOOR: f64 = 0.1;

    pub fn julier(dim: usize) -> Self {
        let kappa = (3.0 - dim as f64).max(Self::KAPPA_FLOOR);
        let gamma = dim as f64 + kappa;
        Self { dim, kappa, gamma, center_weight: kappa / gamma, weight: 0.5 / gamma }
    }
}

/// Symmetric sigma offsets `±col_k(chol(γ·P))`, positives first.
pub fn sigma_points(cov_aug: &DMatrix<f64>, gamma: f64) -> Result<Vec<DVector<f64>>> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma-point scaling must be positive, got {gamma}")));
    }
    let chol = nalgebra::Cholesky::new(symmetrize(cov_aug) * gamma).ok_or(Error::NotPositiveDefinite("augmented covariance"))?;
    let l = chol.l();
    let n = l.ncols();
    let mut pts = Vec::with_capacity(2 * n);
    for k in 0..n {
        pts.push(l.column(k).into_owned());
    }
    for k in 0..n {
        pts.push(-l.column(k).into_owned());
    }
    Ok(pts)
}

/// Group-valued process model `X⁺ = f(X, u, n)`.
pub trait Dynamics {
    type Input;
    fn noise_dim(&self) -> usize;
    fn propagate(&self, x: &GroupElement, u: &Self::Input, noise: &[f64]) -> GroupElement;
}

/// Measurement model `z = h(X)`; measurement noise is additive.
pub trait Observation {
    fn dim(&self) -> usize;
    fn observe(&self, x: &GroupElement) -> DVector<f64>;
}

/// Quantities produced by a measurement update, reused by the incremental step.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateArtifacts {
    /// Predicted measurement mean `z̄`.
    pub z_pred: DVector<f64>,
    /// `z − z̄`.
    pub innovation: DVector<f64>,
    pub p_zz: DMatrix<f64>,
    pub p_xz: DMatrix<f64>,
    /// Pseudo-measurement matrix.
    pub h: DMatrix<f64>,
    /// Effective measurement noise.
    pub r: DMatrix<f64>,
}

fn split(alpha: &DVector<f64>, d: usize) -> (DVector<f64>, &[f64]) {
    (alpha.rows(0, d).into_owned(), &alpha.as_slice()[d..])
}

/// Unscented propagation through `f`.
pub fn propagate<D: Dynamics>(
    prev: &Estimate,
    u: &D::Input,
    noise_cov: &DMatrix<f64>,
    f: &D,
    params: &UnscentedParams,
) -> Result<Estimate> {
    let d = prev.dim();
    let q = f.noise_dim();
    if params.dim != d + q {
        return Err(Error::InvalidArgument(format!("propagation params built for L={}, need {}", params.dim, d + q)));
    }
    if noise_cov.nrows() != q || noise_cov.ncols() != q {
        return Err(Error::InvalidArgument(format!("process noise must be {q}x{q}")));
    }
    let kind = prev.mean.kind();
    let zero_noise = vec![0.0; q];
    let mean = f.propagate(&prev.mean, u, &zero_noise);
    let mean_inv = mean.inverse();

    let aug = if q == 0 { prev.cov.clone() } else { block_diag(&prev.cov, noise_cov) };
    let mut cov = DMatrix::zeros(d, d);
    for alpha in sigma_points(&aug, params.gamma)? {
        let (zeta, noise) = split(&alpha, d);
        let start = TangentVector::new(kind, zeta)?.exp().compose_unchecked(&prev.mean);
        let moved = f.propagate(&start, u, noise);
        let z = moved.compose_unchecked(&mean_inv).log()?.into_coords();
        cov.ger(params.weight, &z, &z, 1.0);
    }
    let (cov, _) = condition(&cov, "propagated covariance")?;
    Ok(Estimate { mean, cov })
}

/// Unscented measurement update with left-applied correction.
pub fn update<H: Observation>(
    pred: &Estimate,
    z: &DVector<f64>,
    meas_cov: &DMatrix<f64>,
    h: &H,
    params: &UnscentedParams,
) -> Result<(Estimate, UpdateArtifacts)> {
    let d = pred.dim();
    let m = h.dim();
    if z.len() != m {
        return Err(Error::InvalidArgument(format!("measurement has {} entries, model expects {m}", z.len())));
    }
    if params.dim != d + m {
        return Err(Error::InvalidArgument(format!("update params built for L={}, need {}", params.dim, d + m)));
    }
    let kind = pred.mean.kind();
    let z0 = h.observe(&pred.mean);
    let aug = block_diag(&pred.cov, meas_cov);
    let pts = sigma_points(&aug, params.gamma)?;

    let mut zs = Vec::with_capacity(pts.len());
    for alpha in &pts {
        let (zeta, noise) = split(alpha, d);
        let x = TangentVector::new(kind, zeta)?.exp().compose_unchecked(&pred.mean);
        zs.push(h.observe(&x) + DVector::from_column_slice(noise));
    }
    let mut z_bar = &z0 * params.center_weight;
    for zk in &zs {
        z_bar.axpy(params.weight, zk, 1.0);
    }

    // Second moments about the center point: a Gram sum, so the joint
    // state/measurement covariance stays PSD for any center weight. This
    // omits the squared mean shift (z̄ − z₀)(z̄ − z₀)ᵀ, which vanishes for
    // linear models.
    let mut p_zz = DMatrix::zeros(m, m);
    let mut p_xz = DMatrix::zeros(d, m);
    for (alpha, zk) in pts.iter().zip(&zs) {
        let dz = zk - &z0;
        p_zz.ger(params.weight, &dz, &dz, 1.0);
        p_xz.ger(params.weight, &alpha.rows(0, d), &dz, 1.0);
    }
    let p_zz = symmetrize(&p_zz);
    let chol_zz = nalgebra::Cholesky::new(p_zz.clone()).ok_or(Error::SingularInnovation)?;

    // K = P_xz P_zz⁻¹
    let gain = chol_zz.solve(&p_xz.transpose()).transpose();
    let innovation = z - &z_bar;
    let xi = TangentVector::new(kind, &gain * &innovation)?;
    let mean = xi.exp().compose_unchecked(&pred.mean).renormalized();
    let cov = &pred.cov - &gain * p_xz.transpose();
    let (cov, _) = condition(&cov, "updated covariance").map_err(|_| Error::Divergence("posterior covariance lost positive definiteness".into()))?;

    let chol_pred = nalgebra::Cholesky::new(pred.cov.clone()).ok_or(Error::NotPositiveDefinite("predicted covariance"))?;
    let h_mat = chol_pred.solve(&p_xz).transpose();
    let r = symmetrize(&(&p_zz - &h_mat * &p_xz));

    Ok((
        Estimate { mean, cov },
        UpdateArtifacts { z_pred: z_bar, innovation, p_zz, p_xz, h: h_mat, r },
    ))
}

/// Invariant UKF bound to one dynamics and one observation model.
#[derive(Clone, Debug)]
pub struct UkfFilter<D, H> {
    pub dynamics: D,
    pub observation: H,
    pub process_noise: DMatrix<f64>,
    pub measurement_noise: DMatrix<f64>,
    propagation: UnscentedParams,
    correction: UnscentedParams,
}

impl<D: Dynamics, H: Observation> UkfFilter<D, H> {
    pub fn new(state_dim: usize, dynamics: D, observation: H, process_noise: DMatrix<f64>, measurement_noise: DMatrix<f64>) -> Self {
        let propagation = UnscentedParams::julier(state_dim + dynamics.noise_dim());
        let correction = UnscentedParams::julier(state_dim + observation.dim());
        Self { dynamics, observation, process_noise, measurement_noise, propagation, correction }
    }
}

impl<D: Dynamics, H: Observation> LocalFilter for UkfFilter<D, H> {
    type Input = D::Input;

    fn predict(&self, est: &Estimate, u: &Self::Input) -> Result<Estimate> {
        propagate(est, u, &self.process_noise, &self.dynamics, &self.propagation)
    }

    fn correct(&self, est: &Estimate, z: &DVector<f64>) -> Result<(Estimate, UpdateArtifacts)> {
        update(est, z, &self.measurement_noise, &self.observation, &self.correction)
    }
}
