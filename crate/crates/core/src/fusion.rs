//! Covariance-intersection style fusion of estimates on a Lie group.
//!
//! Inverse covariance intersection (ICI) fuses `n` estimates with unknown
//! cross-correlations as
//!
//! ```text
//! Γ   = Σ ω_j P_j
//! P̂⁻¹ = Σ P_j⁻¹ − (n−1) Γ⁻¹
//! ξ̂   = P̂ Σ (P_j⁻¹ − (n−1) ω_j Γ⁻¹) log(X_j X_a⁻¹)
//! X̂   = exp(ξ̂) X_a
//! ```
//!
//! where `X_a` is the anchor (the receiving agent). Weights minimize
//! `trace(P̂)` over the simplex with `ω_j ≤ 1/(n−1)`; inside that box `P̂` is
//! positive definite and no larger than the largest input covariance.
//! Classical covariance intersection is provided for comparison.

use nalgebra::{Cholesky, DMatrix, DVector, SMatrix};

use crate::error::{Error, Result};
use crate::liegroup::{GroupElement, TangentVector};
use crate::linalg::{condition, symmetrize};
use crate::unscented::Estimate;

/// Golden-section bracket width at which a line search stops.
const LINE_TOL: f64 = 1e-3;
/// Maximum number of coordinate sweeps.
const MAX_SWEEPS: usize = 50;
/// A sweep that improves the objective by less than this ends the search.
const SWEEP_TOL: f64 = 1e-6;
/// Relative improvement a move must exceed to be accepted.
const ACCEPT_REL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionRule {
    Ici,
    Ci,
}

/// Estimates to fuse; `anchor` indexes the one whose mean is the base point.
#[derive(Clone, Debug)]
pub struct FusionInput {
    pub estimates: Vec<Estimate>,
    pub anchor: usize,
}

impl FusionInput {
    pub fn new(estimates: Vec<Estimate>, anchor: usize) -> Result<Self> {
        let input = Self { estimates, anchor };
        input.validate()?;
        Ok(input)
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let first = self.estimates.first().ok_or_else(|| Error::InvalidArgument("nothing to fuse".into()))?;
        if self.anchor >= self.estimates.len() {
            return Err(Error::InvalidArgument(format!("anchor {} out of range", self.anchor)));
        }
        let kind = first.mean.kind();
        if self.estimates.iter().any(|e| e.mean.kind() != kind || e.cov.nrows() != kind.dim()) {
            return Err(Error::InvalidArgument("estimates live on different groups".into()));
        }
        Ok(())
    }

    fn covariances(&self) -> Vec<&DMatrix<f64>> {
        self.estimates.iter().map(|e| &e.cov).collect()
    }
}

/// Simplex weights together with the trace they achieve.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights {
    pub omega: Vec<f64>,
    pub trace: f64,
}

/// Upper bound on each ICI weight for `n` inputs.
pub fn ici_weight_cap(n: usize) -> f64 {
    if n <= 2 {
        1.0
    } else {
        1.0 / (n - 1) as f64
    }
}

/// `log(x_j · x_i⁻¹)`.
pub fn relative_log(xj: &GroupElement, xi: &GroupElement) -> Result<TangentVector> {
    if xj.kind() != xi.kind() {
        return Err(Error::InvalidArgument(format!("cannot relate {:?} to {:?}", xj.kind(), xi.kind())));
    }
    xj.compose_unchecked(&xi.inverse()).log()
}

/// `log(X_j X_a⁻¹)` for every input (zero at the anchor).
pub fn relative_logs(input: &FusionInput) -> Result<Vec<DVector<f64>>> {
    input.validate()?;
    let anchor_inv = input.estimates[input.anchor].mean.inverse();
    input
        .estimates
        .iter()
        .enumerate()
        .map(|(j, e)| {
            if j == input.anchor {
                Ok(DVector::zeros(e.dim()))
            } else {
                Ok(e.mean.compose_unchecked(&anchor_inv).log()?.into_coords())
            }
        })
        .collect()
}

fn inverses(covs: &[&DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    covs.iter()
        .map(|p| Cholesky::new(symmetrize(p)).map(|c| c.inverse()).ok_or(Error::NotPositiveDefinite("fusion input covariance")))
        .collect()
}

fn weighted_sum(mats: &[&DMatrix<f64>], w: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
    for (m, &wj) in mats.iter().zip(w) {
        if wj != 0.0 {
            out += *m * wj;
        }
    }
    out
}

fn trace_of_inverse(m: DMatrix<f64>) -> Option<f64> {
    let ch = Cholesky::new(m)?;
    let t = ch.inverse().trace();
    t.is_finite().then_some(t)
}

/// ICI information matrix `Σ P_j⁻¹ − (n−1) Γ⁻¹` and `Γ⁻¹`.
fn ici_information(covs: &[&DMatrix<f64>], info_sum: &DMatrix<f64>, w: &[f64]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = covs.len() as f64;
    let gamma_inv = Cholesky::new(weighted_sum(covs, w))?.inverse();
    Some((info_sum - &gamma_inv * (n - 1.0), gamma_inv))
}

fn ici_trace(covs: &[&DMatrix<f64>], info_sum: &DMatrix<f64>, w: &[f64]) -> f64 {
    ici_information(covs, info_sum, w).and_then(|(m, _)| trace_of_inverse(m)).unwrap_or(f64::INFINITY)
}

/// `ici_trace` on stack matrices of size `N`.
fn fixed_ici_trace<const N: usize>(covs: &[&DMatrix<f64>], info_sum: &DMatrix<f64>) -> impl Fn(&[f64]) -> f64 {
    let fixed = |m: &DMatrix<f64>| SMatrix::<f64, N, N>::from_column_slice(m.as_slice());
    let ps: Vec<_> = covs.iter().map(|p| fixed(p)).collect();
    let s = fixed(info_sum);
    let c = (covs.len() - 1) as f64;
    move |w| {
        let gamma = ps.iter().zip(w).fold(SMatrix::<f64, N, N>::zeros(), |acc, (p, &wj)| acc + p * wj);
        gamma
            .cholesky()
            .and_then(|g| (s - g.inverse() * c).cholesky())
            .map(|m| m.inverse().trace())
            .filter(|t| t.is_finite())
            .unwrap_or(f64::INFINITY)
    }
}

/// The ICI weight objective, specialized for common state sizes.
fn ici_objective<'a>(covs: &'a [&DMatrix<f64>], info_sum: &'a DMatrix<f64>) -> Box<dyn Fn(&[f64]) -> f64 + 'a> {
    match info_sum.nrows() {
        3 => Box::new(fixed_ici_trace::<3>(covs, info_sum)),
        9 => Box::new(fixed_ici_trace::<9>(covs, info_sum)),
        _ => Box::new(|w| ici_trace(covs, info_sum, w)),
    }
}

fn ci_trace(infos: &[&DMatrix<f64>], w: &[f64]) -> f64 {
    trace_of_inverse(weighted_sum(infos, w)).unwrap_or(f64::INFINITY)
}

/// Writes `w` with weight `j` moved to `t` into `out`, rescaling the others
/// to keep the sum at one.
fn moved(w: &[f64], j: usize, t: f64, out: &mut [f64]) {
    let rest = 1.0 - w[j];
    let n = w.len();
    for (k, (o, &wk)) in out.iter_mut().zip(w).enumerate() {
        *o = if k == j {
            t
        } else if rest > 1e-15 {
            wk * (1.0 - t) / rest
        } else {
            (1.0 - t) / (n - 1) as f64
        };
    }
}

/// Minimizer of `g` on `[lo, hi]` and its value.
fn golden_section(lo: f64, hi: f64, mut g: impl FnMut(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    while b - a > LINE_TOL {
        if gc <= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d);
        }
    }
    if gc <= gd {
        (c, gc)
    } else {
        (d, gd)
    }
}

/// Projected coordinate descent on `{ω ≥ 0, Σω = 1, ω ≤ cap}` starting from
/// uniform weights. A move changes one weight and rescales the rest.
fn minimize_on_simplex(n: usize, cap: f64, mut f: impl FnMut(&[f64]) -> f64) -> FusionWeights {
    let mut w = vec![1.0 / n as f64; n];
    let mut fw = f(&w);
    if n == 1 {
        return FusionWeights { omega: w, trace: fw };
    }
    let coords = if n == 2 { 1 } else { n };
    let mut cand = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        let before = fw;
        for j in 0..coords {
            let others_max = w.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &v)| v).fold(0.0, f64::max);
            let lo = if others_max > 0.0 { (1.0 - cap * (1.0 - w[j]) / others_max).max(0.0) } else { 0.0 };
            let hi = cap.min(1.0);
            if hi - lo <= LINE_TOL {
                continue;
            }
            let (mut t, mut ft) = golden_section(lo, hi, |t| {
                moved(&w, j, t, &mut cand);
                f(&cand)
            });
            // Optima on the box boundary are common: the search stops short
            // of them, so try the nearby end point.
            for end in [lo, hi] {
                if (t - end).abs() <= 2.0 * LINE_TOL {
                    moved(&w, j, end, &mut cand);
                    let fe = f(&cand);
                    if fe < ft {
                        (t, ft) = (end, fe);
                    }
                }
            }
            if ft < fw - ACCEPT_REL * fw.abs() {
                moved(&w, j, t, &mut cand);
                std::mem::swap(&mut w, &mut cand);
                fw = ft;
            }
        }
        if !(before - fw > SWEEP_TOL * fw.abs()) {
            break;
        }
    }
    FusionWeights { omega: w, trace: fw }
}

fn inverse_trace_weights(covs: &[&DMatrix<f64>]) -> Vec<f64> {
    let raw: Vec<f64> = covs.iter().map(|p| 1.0 / p.trace()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

/// Trace-minimizing ICI weights.
pub fn ici_weights(covs: &[&DMatrix<f64>]) -> Result<FusionWeights> {
    if covs.is_empty() {
        return Err(Error::InvalidArgument("no covariances".into()));
    }
    let infos = inverses(covs)?;
    let info_sum = infos.iter().fold(DMatrix::zeros(covs[0].nrows(), covs[0].ncols()), |acc, m| acc + m);
    let n = covs.len();
    let best = minimize_on_simplex(n, ici_weight_cap(n), ici_objective(covs, &info_sum));
    if best.trace.is_finite() {
        return Ok(best);
    }
    log::warn!("ICI weight search found no admissible point; using inverse-trace weights");
    let weights = inverse_trace_weights(covs);
    let trace = ici_trace(covs, &info_sum, &weights);
    if trace.is_finite() {
        Ok(FusionWeights { omega: weights, trace })
    } else {
        Err(Error::Fusion("no weights give a positive-definite ICI covariance".into()))
    }
}

/// Trace-minimizing CI weights.
pub fn ci_weights(covs: &[&DMatrix<f64>]) -> Result<FusionWeights> {
    if covs.is_empty() {
        return Err(Error::InvalidArgument("no covariances".into()));
    }
    let infos = inverses(covs)?;
    let refs: Vec<&DMatrix<f64>> = infos.iter().collect();
    let best = minimize_on_simplex(covs.len(), 1.0, |w| ci_trace(&refs, w));
    if best.trace.is_finite() {
        Ok(best)
    } else {
        Err(Error::Fusion("CI objective is not finite".into()))
    }
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::InvalidArgument(format!("{} weights for {n} estimates", w.len())));
    }
    if w.iter().any(|&v| !(v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("weights must be non-negative and sum to one".into()));
    }
    Ok(())
}

/// Fused ICI covariance for given weights.
pub fn ici_fuse_covariance(covs: &[&DMatrix<f64>], weights: &[f64]) -> Result<DMatrix<f64>> {
    check_weights(weights, covs.len())?;
    let infos = inverses(covs)?;
    let info_sum = infos.iter().fold(DMatrix::zeros(covs[0].nrows(), covs[0].ncols()), |acc, m| acc + m);
    let (m, _) = ici_information(covs, &info_sum, weights).ok_or_else(|| Error::Fusion("weighted covariance sum is singular".into()))?;
    let ch = Cholesky::new(symmetrize(&m)).ok_or_else(|| Error::Fusion("ICI information matrix is not positive definite".into()))?;
    Ok(symmetrize(&ch.inverse()))
}

/// ICI fusion with the given weights.
pub fn ici_fuse(input: &FusionInput, weights: &[f64]) -> Result<Estimate> {
    input.validate()?;
    let n = input.len();
    if n == 1 {
        return Ok(input.estimates[0].clone());
    }
    check_weights(weights, n)?;
    let covs = input.covariances();
    let infos = inverses(&covs)?;
    let info_sum = infos.iter().fold(DMatrix::zeros(covs[0].nrows(), covs[0].ncols()), |acc, m| acc + m);
    let (m, gamma_inv) = ici_information(&covs, &info_sum, weights).ok_or_else(|| Error::Fusion("weighted covariance sum is singular".into()))?;
    let ch = Cholesky::new(symmetrize(&m)).ok_or_else(|| Error::Fusion("ICI information matrix is not positive definite".into()))?;

    let logs = relative_logs(input)?;
    let c = (n - 1) as f64;
    let mut rhs = DVector::zeros(m.nrows());
    for (j, r) in logs.iter().enumerate() {
        if j == input.anchor {
            continue;
        }
        rhs += (&infos[j] - &gamma_inv * (c * weights[j])) * r;
    }
    finish(input, ch, rhs)
}

/// Covariance intersection with the given weights.
pub fn ci_fuse(input: &FusionInput, weights: &[f64]) -> Result<Estimate> {
    input.validate()?;
    let n = input.len();
    if n == 1 {
        return Ok(input.estimates[0].clone());
    }
    check_weights(weights, n)?;
    let infos = inverses(&input.covariances())?;
    let refs: Vec<&DMatrix<f64>> = infos.iter().collect();
    let m = weighted_sum(&refs, weights);
    let ch = Cholesky::new(symmetrize(&m)).ok_or_else(|| Error::Fusion("CI information matrix is not positive definite".into()))?;
    let logs = relative_logs(input)?;
    let mut rhs = DVector::zeros(m.nrows());
    for (j, r) in logs.iter().enumerate() {
        if j != input.anchor {
            rhs += &infos[j] * r * weights[j];
        }
    }
    finish(input, ch, rhs)
}

fn finish(input: &FusionInput, info: Cholesky<f64, nalgebra::Dyn>, rhs: DVector<f64>) -> Result<Estimate> {
    let anchor = &input.estimates[input.anchor].mean;
    let xi = info.solve(&rhs);
    let cov = info.inverse();
    let (cov, _) = condition(&cov, "fused covariance")?;
    let mean = TangentVector::new(anchor.kind(), xi)?.exp().compose_unchecked(anchor).renormalized();
    Ok(Estimate { mean, cov })
}

/// Optimizes weights for `rule` and fuses.
pub fn fuse(input: &FusionInput, rule: FusionRule) -> Result<(Estimate, FusionWeights)> {
    input.validate()?;
    if input.len() == 1 {
        let est = input.estimates[0].clone();
        let trace = est.cov.trace();
        return Ok((est, FusionWeights { omega: vec![1.0], trace }));
    }
    let covs = input.covariances();
    let weights = match rule {
        FusionRule::Ici => ici_weights(&covs)?,
        FusionRule::Ci => ci_weights(&covs)?,
    };
    let est = match rule {
        FusionRule::Ici => ici_fuse(input, &weights.omega)?,
        FusionRule::Ci => ci_fuse(input, &weights.omega)?,
    };
    Ok((est, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::GroupKind;
    use crate::linalg::{max_eigenvalue, min_eigenvalue};
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_spd(rng: &mut impl Rng, n: usize, scale: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&a * a.transpose() + DMatrix::identity(n, n) * 0.05) * scale
    }

    fn diag2(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&[a, b]))
    }

    #[test]
    fn fixed_size_objective_matches_dynamic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in [3, 9] {
            let owned: Vec<DMatrix<f64>> = (0..4).map(|_| random_spd(&mut rng, dim, 0.3)).collect();
            let covs: Vec<&DMatrix<f64>> = owned.iter().collect();
            let info_sum = inverses(&covs).unwrap().iter().fold(DMatrix::zeros(dim, dim), |acc, m| acc + m);
            let f = ici_objective(&covs, &info_sum);
            for w in [[0.25; 4], [0.3, 0.3, 0.3, 0.1], [0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]] {
                let a = f(&w);
                let b = ici_trace(&covs, &info_sum, &w);
                assert!((a - b).abs() <= 1e-9 * b.abs(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn two_input_weights_match_grid_scan() {
        let a = diag2(1.0, 1.0);
        let b = diag2(4.0, 4.0);
        let w = ici_weights(&[&a, &b]).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=10_000 {
            let t = k as f64 / 10_000.0;
            let tr = ici_fuse_covariance(&[&a, &b], &[t, 1.0 - t]).map(|p| p.trace()).unwrap_or(f64::INFINITY);
            if tr < best.0 {
                best = (tr, t);
            }
        }
        assert!((w.omega[0] - best.1).abs() < 1e-2, "{:?} vs {}", w.omega, best.1);
        assert!((w.trace - best.0).abs() < 1e-6);
    }

    #[test]
    fn identical_inputs_keep_uniform_weights() {
        let p = diag2(2.0, 3.0);
        for n in 2..6 {
            let covs: Vec<&DMatrix<f64>> = (0..n).map(|_| &p).collect();
            let w = ici_weights(&covs).unwrap();
            assert!(w.omega.iter().all(|&v| (v - 1.0 / n as f64).abs() < 1e-12));
            let fused = ici_fuse_covariance(&covs, &w.omega).unwrap();
            assert!((&fused - &p).amax() < 1e-12);
        }
    }

    #[test]
    fn translation_group_matches_flat_space_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ests: Vec<Estimate> = (0..4)
            .map(|_| {
                let p = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                Estimate::new(GroupElement::translation(p), random_spd(&mut rng, 3, 0.5)).unwrap()
            })
            .collect();
        let input = FusionInput::new(ests.clone(), 2).unwrap();
        let w = [0.2, 0.3, 0.25, 0.25];
        let out = ici_fuse(&input, &w).unwrap();

        let infos: Vec<DMatrix<f64>> = ests.iter().map(|e| e.cov.clone().try_inverse().unwrap()).collect();
        let gamma: DMatrix<f64> = ests.iter().zip(w).map(|(e, wj)| &e.cov * wj).fold(DMatrix::zeros(3, 3), |a, b| a + b);
        let gi = gamma.try_inverse().unwrap();
        let info = infos.iter().fold(DMatrix::zeros(3, 3), |a, b| a + b) - &gi * 3.0;
        let p = info.clone().try_inverse().unwrap();
        let mut acc = DVector::zeros(3);
        for (j, e) in ests.iter().enumerate() {
            let x = DVector::from_column_slice(e.mean.position().unwrap().as_slice());
            acc += (&infos[j] - &gi * (3.0 * w[j])) * x;
        }
        let x = &p * acc;
        let got = out.mean.position().unwrap();
        assert!((DVector::from_column_slice(got.as_slice()) - x).amax() < 1e-10);
        assert!((&out.cov - &p).amax() < 1e-10);
    }

    #[test]
    fn fusion_of_a_single_estimate_is_identity() {
        let e = Estimate::new(GroupElement::translation(Vector3::new(1.0, 2.0, 3.0)), DMatrix::identity(3, 3)).unwrap();
        let input = FusionInput::new(vec![e.clone()], 0).unwrap();
        for rule in [FusionRule::Ici, FusionRule::Ci] {
            assert_eq!(fuse(&input, rule).unwrap().0, e);
        }
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let a = Estimate::new(GroupElement::translation(Vector3::zeros()), DMatrix::identity(3, 3)).unwrap();
        let b = Estimate::new(GroupElement::identity(GroupKind::SO3), DMatrix::identity(3, 3)).unwrap();
        assert!(FusionInput::new(vec![a.clone(), b], 0).is_err());
        assert!(FusionInput::new(vec![a.clone()], 1).is_err());
        let input = FusionInput::new(vec![a.clone(), a], 0).unwrap();
        assert!(ici_fuse(&input, &[0.7, 0.7]).is_err());
    }

    /// Two estimates of one state sharing a common error component with
    /// unknown correlation; the fused error must pass a χ² consistency test.
    #[test]
    fn fused_estimate_is_consistent_under_unknown_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 1000;
        let d = 3;
        let common = random_spd(&mut rng, d, 0.4);
        let own_a = random_spd(&mut rng, d, 0.3);
        let own_b = random_spd(&mut rng, d, 0.2);
        let pa = &common + &own_a;
        let pb = &common + &own_b;
        let lc = common.clone().cholesky().unwrap().l();
        let la = own_a.clone().cholesky().unwrap().l();
        let lb = own_b.clone().cholesky().unwrap().l();
        let mut normal = || DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let mut nees = 0.0;
        for _ in 0..draws {
            let c = &lc * normal();
            let ea = &c + &la * normal();
            let eb = &c + &lb * normal();
            let a = Estimate::new(GroupElement::translation(Vector3::from_column_slice(ea.as_slice())), pa.clone()).unwrap();
            let b = Estimate::new(GroupElement::translation(Vector3::from_column_slice(eb.as_slice())), pb.clone()).unwrap();
            let (fused, _) = fuse(&FusionInput::new(vec![a, b], 0).unwrap(), FusionRule::Ici).unwrap();
            let e = DVector::from_column_slice(fused.mean.position().unwrap().as_slice());
            nees += (e.transpose() * fused.cov.clone().try_inverse().unwrap() * &e)[(0, 0)];
        }
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let bound = ChiSquared::new((draws * d) as f64).unwrap().inverse_cdf(0.95);
        assert!(nees <= bound, "NEES sum {nees} above {bound}");
    }

    #[test]
    fn ici_is_tighter_than_ci_for_two_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let a = random_spd(&mut rng, 4, 1.0);
            let b = random_spd(&mut rng, 4, 1.0);
            let ici = ici_weights(&[&a, &b]).unwrap();
            let ci = ci_weights(&[&a, &b]).unwrap();
            assert!(ici.trace <= ci.trace * (1.0 + 1e-6), "{} > {}", ici.trace, ci.trace);
        }
    }

    #[test]
    fn optimizer_respects_box_and_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n in 2..9 {
            let covs: Vec<DMatrix<f64>> = (0..n).map(|k| random_spd(&mut rng, 3, 1.0 + k as f64)).collect();
            let refs: Vec<&DMatrix<f64>> = covs.iter().collect();
            let w = ici_weights(&refs).unwrap();
            assert!((w.omega.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let cap = ici_weight_cap(n);
            assert!(w.omega.iter().all(|&v| v >= 0.0 && v <= cap + 1e-12));
            let uniform = vec![1.0 / n as f64; n];
            assert!(w.trace <= ici_fuse_covariance(&refs, &uniform).unwrap().trace() + 1e-12);
        }
    }

    fn spd_strategy(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        (prop::collection::vec(-1.0f64..1.0, d * d), 0.01f64..2.0).prop_map(move |(v, s)| {
            let a = DMatrix::from_vec(d, d, v);
            (&a * a.transpose() + DMatrix::identity(d, d) * 0.02) * s
        })
    }

    fn weights_in_box(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_map(move |raw| {
            let cap = ici_weight_cap(n);
            // Mix toward uniform until every weight fits under the cap.
            let total: f64 = raw.iter().sum::<f64>().max(1e-12);
            let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let u = 1.0 / n as f64;
            let worst = w.iter().cloned().fold(0.0, f64::max);
            let lambda = if worst <= cap { 1.0 } else { (cap - u) / (worst - u) };
            w.iter().map(|&v| u + lambda * (v - u)).collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn weighted_inverse_inequality(
            (covs, raw) in (2usize..=6).prop_flat_map(|n| (prop::collection::vec(spd_strategy(4), n), prop::collection::vec(0.01f64..1.0, n)))
        ) {
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let refs: Vec<&DMatrix<f64>> = covs.iter().collect();
            let lhs = weighted_sum(&refs, &w).try_inverse().unwrap();
            let infos: Vec<DMatrix<f64>> = covs.iter().map(|p| p.clone().try_inverse().unwrap()).collect();
            let irefs: Vec<&DMatrix<f64>> = infos.iter().collect();
            let rhs = weighted_sum(&irefs, &w);
            let scale = rhs.amax().max(1.0);
            prop_assert!(min_eigenvalue(&(rhs - lhs)) >= -1e-9 * scale);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn fused_covariance_is_positive_definite_and_bounded(
            (covs, w) in (2usize..=8).prop_flat_map(|n| (prop::collection::vec(spd_strategy(4), n), weights_in_box(n)))
        ) {
            let refs: Vec<&DMatrix<f64>> = covs.iter().collect();
            let fused = ici_fuse_covariance(&refs, &w).unwrap();
            prop_assert!(min_eigenvalue(&fused) > 0.0);
            let gamma_bar = covs.iter().map(max_eigenvalue).fold(0.0, f64::max);
            prop_assert!(max_eigenvalue(&fused) <= gamma_bar * (1.0 + 1e-9));
        }

        #[test]
        fn anchor_contributes_to_covariance_not_correction(covs in prop::collection::vec(spd_strategy(3), 3)) {
            let est: Vec<Estimate> = covs.into_iter().map(|p| Estimate::new(GroupElement::translation(Vector3::new(1.0, -2.0, 0.5)), p).unwrap()).collect();
            let only_self = FusionInput::new(vec![est[0].clone()], 0).unwrap();
            let all = FusionInput::new(est.clone(), 0).unwrap();
            let w = ici_weights(&all.covariances()).unwrap();
            let fused = ici_fuse(&all, &w.omega).unwrap();
            prop_assert_eq!(fused.mean.position(), est[0].mean.position());
            prop_assert!(fused.cov.trace() < ici_fuse(&only_self, &[1.0]).unwrap().cov.trace());
        }

        #[test]
        fn optimized_fusion_is_bounded_by_inputs(covs in (2usize..=6).prop_flat_map(|n| prop::collection::vec(spd_strategy(3), n))) {
            let refs: Vec<&DMatrix<f64>> = covs.iter().collect();
            let w = ici_weights(&refs).unwrap();
            let fused = ici_fuse_covariance(&refs, &w.omega).unwrap();
            let gamma_bar = covs.iter().map(max_eigenvalue).fold(0.0, f64::max);
            prop_assert!(max_eigenvalue(&fused) <= gamma_bar * (1.0 + 1e-9));
            prop_assert!(w.omega.iter().all(|&v| v <= ici_weight_cap(covs.len()) + 1e-12));
        }
    }
}
