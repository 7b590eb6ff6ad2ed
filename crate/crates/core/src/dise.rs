//! Distributed invariant filtering node.
//!
//! Each timestep an agent
//! 1. runs its local filter (prediction, and an update when it has a
//!    measurement), broadcasting the update in information form;
//! 2. folds the information packets of its neighbours into its own estimate;
//! 3. broadcasts that estimate and fuses what it receives by ICI (or CI).
//!
//! [`Network`] drives a set of agents through both exchange rounds and keeps
//! the covariance monitors.

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionInput, FusionRule};
use crate::liegroup::{GroupElement, TangentVector};
use crate::linalg::{max_eigenvalue, min_eigenvalue, symmetrize};
use crate::unscented::{Estimate, UpdateArtifacts};

/// Tolerance of the covariance monitors.
pub const MONITOR_TOL: f64 = 1e-9;

/// A filter usable as an agent's local estimator.
pub trait LocalFilter {
    type Input;
    fn predict(&self, est: &Estimate, u: &Self::Input) -> Result<Estimate>;
    fn correct(&self, est: &Estimate, z: &DVector<f64>) -> Result<(Estimate, UpdateArtifacts)>;
}

/// A measurement update in information form.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementPacket {
    /// `Hᵀ R⁻¹ H`
    pub info_matrix: DMatrix<f64>,
    /// `Hᵀ R⁻¹ (z − z̄)`
    pub info_vector: DVector<f64>,
    /// Sender's predicted mean, about which `z̄` and `H` were taken.
    pub linearization: GroupElement,
    pub sender: usize,
    pub timestep: u64,
}

impl IncrementPacket {
    pub fn from_artifacts(art: &UpdateArtifacts, linearization: GroupElement, sender: usize, timestep: u64) -> Result<Self> {
        let ch = Cholesky::new(symmetrize(&art.r)).ok_or(Error::NotPositiveDefinite("effective measurement noise"))?;
        let r_inv_h = ch.solve(&art.h);
        let info_matrix = symmetrize(&(art.h.transpose() * &r_inv_h));
        let info_vector = r_inv_h.transpose() * &art.innovation;
        Ok(Self { info_matrix, info_vector, linearization, sender, timestep })
    }

    /// Information vector re-expressed about `base`. With
    /// `δ = log(X̄_j X̄_i⁻¹)` the sender's error is `ξ_i − δ`, so the
    /// vector gains `Y δ`.
    pub fn info_vector_about(&self, base: &GroupElement) -> Result<DVector<f64>> {
        let delta = self.linearization.compose(&base.inverse())?.log()?;
        Ok(&self.info_vector + &self.info_matrix * delta.coords())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionPacket {
    pub estimate: Estimate,
    pub sender: usize,
    pub timestep: u64,
}

/// Symmetric communication graph without self-loops; every agent implicitly
/// includes itself in its neighbourhood.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    links: Vec<bool>,
}

impl Adjacency {
    pub fn isolated(n: usize) -> Self {
        Self { n, links: vec![false; n * n] }
    }

    pub fn complete(n: usize) -> Self {
        let mut a = Self::isolated(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    a.links[i * n + j] = true;
                }
            }
        }
        a
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Sets the undirected link `i — j`; self-links are ignored.
    pub fn set(&mut self, i: usize, j: usize, linked: bool) {
        if i != j {
            self.links[i * self.n + j] = linked;
            self.links[j * self.n + i] = linked;
        }
    }

    pub fn linked(&self, i: usize, j: usize) -> bool {
        i != j && self.links[i * self.n + j]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.linked(i, j))
    }

    pub fn edge_count(&self) -> usize {
        self.links.iter().filter(|&&l| l).count() / 2
    }

    /// Upper-triangle links packed row by row, least significant bit first.
    pub fn to_bits(&self) -> u64 {
        let mut bits = 0u64;
        let mut k = 0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.linked(i, j) {
                    bits |= 1 << k;
                }
                k += 1;
            }
        }
        bits
    }

    pub fn from_bits(n: usize, bits: u64) -> Result<Self> {
        if n * n.saturating_sub(1) / 2 > 64 {
            return Err(Error::InvalidArgument(format!("{n} agents do not fit a 64-bit link mask")));
        }
        let mut a = Self::isolated(n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                a.set(i, j, bits >> k & 1 == 1);
                k += 1;
            }
        }
        Ok(a)
    }
}

/// Output of the local filter step.
#[derive(Clone, Debug)]
pub struct LocalEstimate {
    pub prediction: Estimate,
    /// Individual estimate: the update when a measurement was used, else the prediction.
    pub individual: Estimate,
    pub packet: Option<IncrementPacket>,
    /// Set when the step degraded to prediction-only (or hold) behaviour.
    pub fault: Option<Error>,
}

/// Runs the local filter over this step's inputs and an optional measurement.
///
/// A failed prediction holds the previous estimate; a failed update holds
/// the prediction. Either case is reported through `fault`.
pub fn local_filter_step<F: LocalFilter>(filter: &F, prev: &Estimate, inputs: &[F::Input], z: Option<&DVector<f64>>, sender: usize, timestep: u64) -> LocalEstimate {
    let mut prediction = prev.clone();
    for u in inputs {
        match filter.predict(&prediction, u) {
            Ok(p) => prediction = p,
            Err(e) => {
                warn!("agent {sender}: prediction failed at step {timestep}: {e}");
                return LocalEstimate { prediction: prev.clone(), individual: prev.clone(), packet: None, fault: Some(e) };
            }
        }
    }
    let Some(z) = z else {
        return LocalEstimate { individual: prediction.clone(), prediction, packet: None, fault: None };
    };
    let outcome = filter.correct(&prediction, z).and_then(|(est, art)| Ok((est, IncrementPacket::from_artifacts(&art, prediction.mean.clone(), sender, timestep)?)));
    match outcome {
        Ok((individual, packet)) => LocalEstimate { prediction, individual, packet: Some(packet), fault: None },
        Err(e) => {
            warn!("agent {sender}: update failed at step {timestep}: {e}");
            LocalEstimate { individual: prediction.clone(), prediction, packet: None, fault: Some(e) }
        }
    }
}

/// Folds neighbour measurement packets into the local estimate.
///
/// The information form is rebased on the prediction so that the agent's own
/// measurement and its neighbours' enter one centralized-equivalent update:
/// `P̌⁻¹ = P̄⁻¹ + Σ Y_j` and `X̌ = exp(P̌ (y_i + Σ y_j)) X̄^{t|t−1}`. Without an
/// own packet this is the correction of the individual estimate itself.
/// Neighbour vectors are moved to the receiver's linearization point first.
pub fn incremental_update(local: &LocalEstimate, packets: &[IncrementPacket], receiver: usize, timestep: u64) -> Result<Estimate> {
    let d = local.individual.dim();
    let fresh: Vec<&IncrementPacket> = packets
        .iter()
        .filter(|p| {
            if p.timestep != timestep {
                warn!("agent {receiver}: dropping stale packet from {} (step {} != {timestep})", p.sender, p.timestep);
                return false;
            }
            if p.sender == receiver {
                debug!("agent {receiver}: ignoring own packet");
                return false;
            }
            if p.info_matrix.nrows() != d || p.info_vector.len() != d {
                warn!("agent {receiver}: dropping packet from {} with wrong dimension", p.sender);
                return false;
            }
            true
        })
        .collect();
    if fresh.is_empty() {
        return Ok(local.individual.clone());
    }

    let base = match &local.packet {
        Some(_) => &local.prediction,
        None => &local.individual,
    };
    let mut info = Cholesky::new(local.individual.cov.clone()).ok_or(Error::NotPositiveDefinite("individual covariance"))?.inverse();
    let mut vector = match &local.packet {
        Some(own) => own.info_vector.clone(),
        None => DVector::zeros(d),
    };
    for p in &fresh {
        info += &p.info_matrix;
        vector += p.info_vector_about(&base.mean)?;
    }
    let ch = Cholesky::new(symmetrize(&info)).ok_or(Error::NotPositiveDefinite("incremental information"))?;
    let xi = ch.solve(&vector);
    let cov = symmetrize(&ch.inverse());
    let mean = TangentVector::new(base.mean.kind(), xi)?.exp().compose_unchecked(&base.mean).renormalized();
    Estimate::new(mean, cov)
}

/// Fuses neighbour estimates into `own`. Returns `own` unchanged together
/// with the error when fusion fails.
pub fn diffusion_update(own: &Estimate, packets: &[DiffusionPacket], rule: FusionRule, receiver: usize, timestep: u64) -> (Estimate, Option<Error>) {
    let mut estimates = vec![own.clone()];
    for p in packets {
        if p.timestep != timestep {
            warn!("agent {receiver}: dropping stale estimate from {} (step {} != {timestep})", p.sender, p.timestep);
        } else if p.sender != receiver {
            estimates.push(p.estimate.clone());
        }
    }
    if estimates.len() == 1 {
        return (own.clone(), None);
    }
    match FusionInput::new(estimates, 0).and_then(|input| fuse(&input, rule)) {
        Ok((est, _)) => (est, None),
        Err(e) => {
            warn!("agent {receiver}: fusion failed at step {timestep}: {e}");
            (own.clone(), Some(e))
        }
    }
}

/// One node of the network.
#[derive(Clone, Debug)]
pub struct AgentState<F> {
    pub id: usize,
    pub estimate: Estimate,
    pub filter: F,
    pub rule: FusionRule,
    /// False when the last step degraded to prediction-only behaviour.
    pub healthy: bool,
    local: Option<LocalEstimate>,
    combined: Option<Estimate>,
}

impl<F: LocalFilter> AgentState<F> {
    pub fn new(id: usize, estimate: Estimate, filter: F, rule: FusionRule) -> Self {
        Self { id, estimate, filter, rule, healthy: true, local: None, combined: None }
    }

    /// Local filter step; returns the packet for the first exchange round.
    pub fn begin_step(&mut self, inputs: &[F::Input], z: Option<&DVector<f64>>, timestep: u64) -> Option<IncrementPacket> {
        let local = local_filter_step(&self.filter, &self.estimate, inputs, z, self.id, timestep);
        self.healthy = local.fault.is_none();
        let packet = local.packet.clone();
        self.local = Some(local);
        self.combined = None;
        packet
    }

    /// Incremental step; returns the packet for the second exchange round.
    pub fn receive_increments(&mut self, inbox: &[IncrementPacket], timestep: u64) -> DiffusionPacket {
        let local = self.local.as_ref().expect("begin_step must run first");
        let combined = incremental_update(local, inbox, self.id, timestep).unwrap_or_else(|e| {
            warn!("agent {}: incremental update failed at step {timestep}: {e}", self.id);
            local.individual.clone()
        });
        self.combined = Some(combined.clone());
        DiffusionPacket { estimate: combined, sender: self.id, timestep }
    }

    /// Diffusion step; the fused estimate becomes the agent's estimate.
    pub fn receive_estimates(&mut self, inbox: &[DiffusionPacket], timestep: u64) -> &Estimate {
        let own = self.combined.take().expect("receive_increments must run first");
        let (fused, fault) = diffusion_update(&own, inbox, self.rule, self.id, timestep);
        if fault.is_some() {
            self.healthy = false;
        }
        self.estimate = fused;
        &self.estimate
    }

    pub fn local(&self) -> Option<&LocalEstimate> {
        self.local.as_ref()
    }
}

/// Runtime checks of the covariance bounds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Monitor {
    /// Largest eigenvalue of any individual covariance seen so far.
    pub gamma_bar: f64,
    /// Fused covariances exceeding `gamma_bar`.
    pub bound_violations: usize,
    /// Incremental steps that inflated some covariance eigenvalue.
    pub increment_violations: usize,
    /// Largest `λ_max(P̂) − γ̄` observed.
    pub worst_excess: f64,
}

impl Monitor {
    pub fn fired(&self) -> bool {
        self.bound_violations > 0 || self.increment_violations > 0
    }

    fn observe_individual(&mut self, cov: &DMatrix<f64>) {
        self.gamma_bar = self.gamma_bar.max(max_eigenvalue(cov));
    }

    fn observe_increment(&mut self, before: &DMatrix<f64>, after: &DMatrix<f64>) {
        // P̄ − P̌ must be positive semidefinite.
        let scale = max_eigenvalue(before).max(1.0);
        if min_eigenvalue(&(before - after)) < -MONITOR_TOL * scale {
            self.increment_violations += 1;
        }
    }

    fn observe_fused(&mut self, cov: &DMatrix<f64>) {
        let excess = max_eigenvalue(cov) - self.gamma_bar;
        self.worst_excess = self.worst_excess.max(excess);
        if excess > MONITOR_TOL {
            self.bound_violations += 1;
        }
    }
}

/// Per-step bookkeeping returned by [`Network::step`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepReport {
    pub unhealthy: Vec<usize>,
    pub increments_sent: usize,
}

/// Agents plus the message routing between them.
#[derive(Clone, Debug)]
pub struct Network<F> {
    pub agents: Vec<AgentState<F>>,
    pub monitor: Monitor,
}

impl<F: LocalFilter> Network<F> {
    pub fn new(agents: Vec<AgentState<F>>) -> Self {
        Self { agents, monitor: Monitor::default() }
    }

    /// Advances every agent by one timestep. `inputs[i]` holds the process
    /// inputs consumed by agent `i` since the previous step.
    pub fn step(&mut self, inputs: &[&[F::Input]], measurements: &[Option<DVector<f64>>], topology: &Adjacency, timestep: u64) -> StepReport {
        let n = self.agents.len();
        assert!(inputs.len() == n && measurements.len() == n && topology.len() == n, "one input, measurement and graph node per agent");

        let increments: Vec<Option<IncrementPacket>> = self
            .agents
            .iter_mut()
            .enumerate()
            .map(|(i, a)| a.begin_step(inputs[i], measurements[i].as_ref(), timestep))
            .collect();
        for a in &self.agents {
            self.monitor.observe_individual(&a.local().expect("local step ran").individual.cov);
        }

        let mut diffusions = Vec::with_capacity(n);
        for i in 0..n {
            let inbox: Vec<IncrementPacket> = topology.neighbors(i).filter_map(|j| increments[j].clone()).collect();
            let packet = self.agents[i].receive_increments(&inbox, timestep);
            let before = &self.agents[i].local().expect("local step ran").individual.cov;
            self.monitor.observe_increment(before, &packet.estimate.cov);
            diffusions.push(packet);
        }

        for i in 0..n {
            let inbox: Vec<DiffusionPacket> = topology.neighbors(i).map(|j| diffusions[j].clone()).collect();
            let fused = self.agents[i].receive_estimates(&inbox, timestep);
            let cov = fused.cov.clone();
            self.monitor.observe_fused(&cov);
        }

        StepReport {
            unhealthy: self.agents.iter().filter(|a| !a.healthy).map(|a| a.id).collect(),
            increments_sent: increments.iter().filter(|p| p.is_some()).count(),
        }
    }

    pub fn estimates(&self) -> impl Iterator<Item = &Estimate> {
        self.agents.iter().map(|a| &a.estimate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::GroupElement;
    use crate::models::linear::{LinearObservation, LinearTranslation};
    use crate::unscented::UkfFilter;
    use nalgebra::{Matrix3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Linear = UkfFilter<LinearTranslation, LinearObservation>;

    fn linear_filter(h: DMatrix<f64>, q: f64) -> Linear {
        let m = h.nrows();
        UkfFilter::new(3, LinearTranslation::new(Matrix3::identity()), LinearObservation::new(h), DMatrix::identity(3, 3) * 0.01, DMatrix::identity(m, m) * q)
    }

    fn start() -> Estimate {
        Estimate::new(GroupElement::translation(Vector3::new(0.5, -0.5, 1.0)), DMatrix::identity(3, 3) * 0.8).unwrap()
    }

    fn vec3(e: &Estimate) -> DVector<f64> {
        DVector::from_column_slice(e.mean.position().unwrap().as_slice())
    }

    #[test]
    fn packet_matches_artifacts() {
        let f = linear_filter(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.3, 1.0, 0.0]), 0.2);
        let z = DVector::from_column_slice(&[1.0, 0.0]);
        let local = local_filter_step(&f, &start(), &[Vector3::zeros()], Some(&z), 0, 3);
        let (_, art) = f.correct(&local.prediction, &z).unwrap();
        let p = local.packet.unwrap();
        let r_inv = art.r.clone().try_inverse().unwrap();
        assert!((&p.info_matrix - art.h.transpose() * &r_inv * &art.h).amax() < 1e-12);
        assert!((&p.info_vector - art.h.transpose() * &r_inv * &art.innovation).amax() < 1e-12);
        assert_eq!((p.sender, p.timestep), (0, 3));
        // Own information added to the prediction reproduces the posterior.
        let lhs = local.individual.cov.clone().try_inverse().unwrap();
        let rhs = local.prediction.cov.clone().try_inverse().unwrap() + &p.info_matrix;
        assert!((&lhs - &rhs).norm() / rhs.norm() < 1e-6);
    }

    #[test]
    fn shifted_information_vector_matches_packet_about_other_point() {
        // Linear model: Hᵀ R⁻¹ (z − H x_b) = Hᵀ R⁻¹ (z − H x_a) + Y (x_a − x_b).
        let f = linear_filter(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.2, 0.3, 1.0, 0.0]), 0.2);
        let z = DVector::from_column_slice(&[0.7, -0.1]);
        let other = Estimate::new(GroupElement::translation(Vector3::new(0.9, -0.2, 0.6)), start().cov).unwrap();
        let a = local_filter_step(&f, &other, &[Vector3::zeros()], Some(&z), 1, 3).packet.unwrap();
        let b = local_filter_step(&f, &start(), &[Vector3::zeros()], Some(&z), 0, 3);
        let shifted = a.info_vector_about(&b.prediction.mean).unwrap();
        let direct = b.packet.unwrap().info_vector;
        assert!((&shifted - &direct).amax() < 1e-10, "{shifted} vs {direct}");
        assert_eq!(a.info_vector_about(&a.linearization).unwrap(), a.info_vector);
    }

    #[test]
    fn no_measurement_means_no_packet() {
        struct Hold;
        impl LocalFilter for Hold {
            type Input = ();
            fn predict(&self, est: &Estimate, _: &()) -> Result<Estimate> {
                Ok(est.clone())
            }
            fn correct(&self, _: &Estimate, _: &DVector<f64>) -> Result<(Estimate, UpdateArtifacts)> {
                unreachable!()
            }
        }
        let local = local_filter_step(&Hold, &start(), &[()], None, 0, 1);
        assert!(local.packet.is_none());
        assert_eq!(local.individual, start());
        assert!(local.fault.is_none());
    }

    #[test]
    fn zero_packets_return_individual_estimate() {
        let f = linear_filter(DMatrix::identity(3, 3), 0.1);
        let z = DVector::from_column_slice(&[1.0, 1.0, 1.0]);
        let local = local_filter_step(&f, &start(), &[], Some(&z), 0, 0);
        assert_eq!(incremental_update(&local, &[], 0, 0).unwrap(), local.individual);
    }

    #[test]
    fn zero_information_vector_keeps_mean() {
        let local = local_filter_step(&linear_filter(DMatrix::identity(3, 3), 0.1), &start(), &[], None, 0, 5);
        let packet = IncrementPacket { info_matrix: DMatrix::identity(3, 3), info_vector: DVector::zeros(3), linearization: start().mean, sender: 1, timestep: 5 };
        let out = incremental_update(&local, &[packet], 0, 5).unwrap();
        assert!((vec3(&out) - vec3(&start())).amax() < 1e-15);
        assert!(out.cov.trace() < start().cov.trace());
    }

    #[test]
    fn stale_and_self_packets_are_ignored() {
        let local = local_filter_step(&linear_filter(DMatrix::identity(3, 3), 0.1), &start(), &[], None, 0, 5);
        let stale = IncrementPacket { info_matrix: DMatrix::identity(3, 3), info_vector: DVector::from_element(3, 1.0), linearization: start().mean, sender: 1, timestep: 4 };
        let own = IncrementPacket { sender: 0, timestep: 5, ..stale.clone() };
        assert_eq!(incremental_update(&local, &[stale, own], 0, 5).unwrap(), local.individual);
    }

    /// Two agents measuring different components; each agent after the
    /// incremental step must equal a centralized filter using both.
    #[test]
    fn incremental_update_matches_centralized_filter() {
        let h1 = DMatrix::from_row_slice(1, 3, &[1.0, 0.5, 0.0]);
        let h2 = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.2, 0.0, 1.0]);
        let (q1, q2) = (0.3, 0.05);
        let f1 = linear_filter(h1.clone(), q1);
        let f2 = linear_filter(h2.clone(), q2);
        let z1 = DVector::from_column_slice(&[2.0]);
        let z2 = DVector::from_column_slice(&[-1.0, 0.4]);
        let u = Vector3::new(0.1, 0.2, 0.3);
        let a = local_filter_step(&f1, &start(), &[u], Some(&z1), 0, 1);
        let b = local_filter_step(&f2, &start(), &[u], Some(&z2), 1, 1);

        // Centralized KF with the stacked measurement.
        let mut h = DMatrix::zeros(3, 3);
        h.view_mut((0, 0), (1, 3)).copy_from(&h1);
        h.view_mut((1, 0), (2, 3)).copy_from(&h2);
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[q1, q2, q2]));
        let p = &start().cov + DMatrix::identity(3, 3) * 0.01;
        let x = vec3(&start()) + DVector::from_column_slice(u.as_slice());
        let z = DVector::from_column_slice(&[2.0, -1.0, 0.4]);
        let s = &h * &p * h.transpose() + &q;
        let k = &p * h.transpose() * s.clone().try_inverse().unwrap();
        let x_c = &x + &k * (z - &h * &x);
        let p_c = &p - &k * &s * k.transpose();

        for (local, other) in [(&a, &b), (&b, &a)] {
            let id = local.packet.as_ref().unwrap().sender;
            let out = incremental_update(local, &[other.packet.clone().unwrap()], id, 1).unwrap();
            assert!((vec3(&out) - &x_c).amax() < 1e-8);
            assert!((&out.cov - &p_c).amax() < 1e-8);
        }

        // An agent without its own measurement reaches the single-sensor answer.
        let silent = local_filter_step(&f1, &start(), &[u], None, 2, 1);
        let out = incremental_update(&silent, &[b.packet.clone().unwrap()], 2, 1).unwrap();
        assert!((vec3(&out) - vec3(&b.individual)).amax() < 1e-8);
        assert!((&out.cov - &b.individual.cov).amax() < 1e-8);
    }

    #[test]
    fn isolated_diffusion_is_identity() {
        let (out, err) = diffusion_update(&start(), &[], FusionRule::Ici, 0, 0);
        assert_eq!(out, start());
        assert!(err.is_none());
    }

    #[test]
    fn identical_neighbour_estimates_fuse_to_themselves() {
        let packets: Vec<DiffusionPacket> = (1..4).map(|s| DiffusionPacket { estimate: start(), sender: s, timestep: 2 }).collect();
        let (out, _) = diffusion_update(&start(), &packets, FusionRule::Ici, 0, 2);
        assert!((vec3(&out) - vec3(&start())).amax() < 1e-12);
        assert!((&out.cov - &start().cov).amax() < 1e-12);
    }

    #[test]
    fn adjacency_bits_roundtrip() {
        let mut a = Adjacency::isolated(8);
        a.set(0, 3, true);
        a.set(7, 2, true);
        a.set(5, 6, true);
        assert_eq!(Adjacency::from_bits(8, a.to_bits()).unwrap(), a);
        assert_eq!(a.edge_count(), 3);
        assert_eq!(a.neighbors(2).collect::<Vec<_>>(), vec![7]);
        assert_eq!(Adjacency::complete(8).edge_count(), 28);
        assert!(!a.linked(4, 4));
    }

    fn network(n: usize, rule: FusionRule) -> Network<Linear> {
        let agents = (0..n).map(|i| AgentState::new(i, start(), linear_filter(DMatrix::identity(3, 3), 0.1), rule)).collect();
        Network::new(agents)
    }

    #[test]
    fn symmetric_network_stays_symmetric() {
        let mut net = network(4, FusionRule::Ici);
        let u = [Vector3::new(0.01, 0.0, 0.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..30 {
            let z = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let inputs: Vec<&[Vector3<f64>]> = vec![&u; 4];
            let meas = vec![Some(z); 4];
            net.step(&inputs, &meas, &Adjacency::complete(4), t);
            let first = net.agents[0].estimate.clone();
            for a in &net.agents[1..] {
                assert!((vec3(&a.estimate) - vec3(&first)).amax() < 1e-12);
                assert!((&a.estimate.cov - &first.cov).amax() < 1e-12);
            }
        }
        assert!(!net.monitor.fired());
    }

    #[test]
    fn disconnected_network_equals_isolated_filters() {
        let mut net = network(3, FusionRule::Ici);
        let f = linear_filter(DMatrix::identity(3, 3), 0.1);
        let mut solo: Vec<Estimate> = vec![start(); 3];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = [Vector3::new(0.0, 0.02, 0.0)];
        for t in 0..40 {
            let meas: Vec<Option<DVector<f64>>> = (0..3).map(|i| ((t + i) % 3 != 0).then(|| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))).collect();
            let inputs: Vec<&[Vector3<f64>]> = vec![&u; 3];
            net.step(&inputs, &meas, &Adjacency::isolated(3), t as u64);
            for i in 0..3 {
                let mut e = f.predict(&solo[i], &u[0]).unwrap();
                if let Some(z) = &meas[i] {
                    e = f.correct(&e, z).unwrap().0;
                }
                solo[i] = e;
                assert_eq!(net.agents[i].estimate, solo[i]);
            }
        }
    }

    #[test]
    fn connected_network_respects_covariance_bounds() {
        for rule in [FusionRule::Ici, FusionRule::Ci] {
            let mut net = network(5, rule);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let u = [Vector3::zeros()];
            for t in 0..50 {
                let mut topo = Adjacency::isolated(5);
                for i in 0..5 {
                    for j in i + 1..5 {
                        topo.set(i, j, rng.random_bool(0.5));
                    }
                }
                let meas: Vec<Option<DVector<f64>>> = (0..5).map(|_| rng.random_bool(0.5).then(|| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))).collect();
                let inputs: Vec<&[Vector3<f64>]> = vec![&u; 5];
                net.step(&inputs, &meas, &topo, t);
            }
            assert!(!net.monitor.fired(), "{:?}", net.monitor);
            assert!(net.monitor.gamma_bar > 0.0);
        }
    }
}
