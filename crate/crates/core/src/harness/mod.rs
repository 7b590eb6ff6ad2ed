//! Monte-Carlo campaigns over algorithms, trajectories and communication rates.

pub mod metrics;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector3};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dise::{AgentState, LocalFilter, Monitor, Network};
use crate::error::{Error, Result};
use crate::fusion::FusionRule;
use crate::iekf::IekfFilter;
use crate::liegroup::{GroupKind, TangentVector};
use crate::models::{ImuDynamics, RangeObservation};
use crate::simworld::{anchors, mix_seed, stream_rng, ImuReading, NoiseConfig, Stream, TrajectoryId, WorldTrace, IMU_DT, UWB_DIVISOR};
use crate::unscented::{Estimate, UkfFilter};

pub use output::{write_outputs, SUMMARY_VERSION};

/// Estimates whose position error exceeds this are counted as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    DiukfIci,
    DiekfIci,
    DiekfCi,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::DiukfIci, Algorithm::DiekfIci, Algorithm::DiekfCi];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DiukfIci => "diukf-ici",
            Algorithm::DiekfIci => "diekf-ici",
            Algorithm::DiekfCi => "diekf-ci",
        }
    }

    pub fn rule(self) -> FusionRule {
        match self {
            Algorithm::DiekfCi => FusionRule::Ci,
            _ => FusionRule::Ici,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s.trim()).ok_or_else(|| Error::Parse(format!("unknown algorithm '{s}'")))
    }
}

/// Campaign settings; every field may be given in a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub algorithms: Vec<Algorithm>,
    pub trajectories: Vec<TrajectoryId>,
    /// Communication rates in percent.
    pub rates: Vec<f64>,
    pub trials: usize,
    /// Simulated seconds per trial.
    pub duration: f64,
    pub seed: u64,
    /// Noise of the simulated world; the filters assume the same noise.
    pub noise: NoiseConfig,
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    pub threads: Option<usize>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::DiukfIci],
            trajectories: vec![TrajectoryId::One],
            rates: vec![10.0, 40.0, 70.0, 100.0],
            trials: 10,
            duration: 40.0,
            seed: 1,
            noise: NoiseConfig::default(),
            out: None,
            threads: None,
        }
    }
}

impl CampaignConfig {
    pub const FULL_TRIALS: usize = 50;

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("at least one trial is required".into()));
        }
        if self.algorithms.is_empty() || self.trajectories.is_empty() || self.rates.is_empty() {
            return Err(Error::InvalidArgument("algorithms, trajectories and rates must be non-empty".into()));
        }
        if let Some(r) = self.rates.iter().find(|r| !(0.0..=100.0).contains(*r)) {
            return Err(Error::InvalidArgument(format!("communication rate {r} outside [0, 100]")));
        }
        if !(self.duration >= IMU_DT * UWB_DIVISOR as f64) {
            return Err(Error::InvalidArgument(format!("duration {} shorter than one UWB period", self.duration)));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("thread count must be positive".into()));
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        mix_seed(self.seed, trial as u64)
    }
}

/// Noise model assumed by every filter: the world's noise, with each
/// standard deviation floored so the covariances stay positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterModel {
    pub process_noise: DMatrix<f64>,
    pub range_variance: f64,
    pub initial_cov: DMatrix<f64>,
}

impl FilterModel {
    /// Floor of the per-sample IMU standard deviations.
    pub const IMU_STD_FLOOR: f64 = 1e-6;
    /// Floor of the range and initial-estimate standard deviations.
    pub const STD_FLOOR: f64 = 1e-3;

    pub fn matched(noise: &NoiseConfig) -> Self {
        let (g, a) = (noise.gyro_std(), noise.accel_std());
        let diag = DVector::from_iterator(6, g.iter().chain(a.iter()).map(|s| s.max(Self::IMU_STD_FLOOR).powi(2)));
        Self {
            process_noise: DMatrix::from_diagonal(&diag),
            range_variance: noise.range_sigma.max(Self::STD_FLOOR).powi(2),
            initial_cov: DMatrix::identity(9, 9) * noise.initial_std.max(Self::STD_FLOOR).powi(2),
        }
    }
}

impl Default for FilterModel {
    fn default() -> Self {
        Self::matched(&NoiseConfig::default())
    }
}

/// One (algorithm, trajectory, rate) combination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub trajectory: TrajectoryId,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub cell: Cell,
    pub trial: usize,
    /// Time of every recorded UWB tick.
    pub times: Vec<f64>,
    /// `[node][tick]` position error, m.
    pub position_errors: Vec<Vec<f64>>,
    /// `[node][tick]` orientation error, deg.
    pub orientation_errors: Vec<Vec<f64>>,
    pub node_prmse: Vec<f64>,
    pub node_ormse: Vec<f64>,
    pub prmse: f64,
    pub ormse: f64,
    /// Set when an estimate became non-finite or diverged.
    pub failure: Option<String>,
    pub monitor: Monitor,
    /// True and estimated position of node 1 at every tick.
    pub node1_track: Vec<(Vector3<f64>, Vector3<f64>)>,
}

impl TrialResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

fn initial_estimates(config: &CampaignConfig, trace: &WorldTrace, model: &FilterModel, n: usize) -> Result<Vec<Estimate>> {
    let truth = &trace.states[0];
    (0..n)
        .map(|i| {
            let mut rng = stream_rng(trace.seed, Stream::InitialEstimate(i));
            let delta = DVector::from_fn(9, |_, _| config.noise.initial_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
            let mean = TangentVector::new(GroupKind::SE23, delta)?.exp().compose(truth)?;
            Estimate::new(mean, model.initial_cov.clone())
        })
        .collect()
}

fn simulate<F: LocalFilter<Input = ImuReading>>(cell: Cell, trial: usize, trace: &WorldTrace, filters: Vec<F>, init: Vec<Estimate>) -> TrialResult {
    let n = filters.len();
    let agents = filters.into_iter().zip(init).enumerate().map(|(i, (f, e))| AgentState::new(i, e, f, cell.algorithm.rule())).collect();
    let mut net = Network::new(agents);
    let ticks = trace.uwb_ticks();
    let mut result = TrialResult {
        cell,
        trial,
        times: Vec::with_capacity(ticks),
        position_errors: vec![Vec::with_capacity(ticks); n],
        orientation_errors: vec![Vec::with_capacity(ticks); n],
        node_prmse: Vec::new(),
        node_ormse: Vec::new(),
        prmse: f64::NAN,
        ormse: f64::NAN,
        failure: None,
        monitor: Monitor::default(),
        node1_track: Vec::with_capacity(ticks),
    };
    for m in 1..=ticks {
        let k = m * UWB_DIVISOR;
        let window = &trace.imu[k - UWB_DIVISOR..k];
        let inputs = vec![window; n];
        let meas: Vec<Option<DVector<f64>>> = trace.measurements[m].iter().map(|z| z.map(|v| DVector::from_element(1, v))).collect();
        net.step(&inputs, &meas, &trace.topology[m].adjacency, m as u64);

        let truth = &trace.states[k];
        result.times.push(k as f64 * IMU_DT);
        for (i, est) in net.estimates().enumerate() {
            let pe = metrics::position_error(&est.mean, truth);
            let oe = metrics::orientation_error_deg(&est.mean, truth);
            if !(pe.is_finite() && oe.is_finite()) || pe > DIVERGENCE_LIMIT || est.cov.iter().any(|v| !v.is_finite()) {
                result.failure = Some(format!("node {} diverged at t = {:.2} s", i + 1, k as f64 * IMU_DT));
            }
            result.position_errors[i].push(pe);
            result.orientation_errors[i].push(oe);
        }
        result.node1_track.push((*truth.position().unwrap(), *net.agents[0].estimate.mean.position().unwrap()));
        if result.failure.is_some() {
            break;
        }
    }
    result.monitor = net.monitor.clone();
    result.node_prmse = result.position_errors.iter().map(|e| metrics::rmse(e)).collect();
    result.node_ormse = result.orientation_errors.iter().map(|e| metrics::rmse(e)).collect();
    result.prmse = metrics::mean(&result.node_prmse);
    result.ormse = metrics::mean(&result.node_ormse);
    result
}

/// Runs one trial of one cell on a freshly generated world.
pub fn run_trial(config: &CampaignConfig, cell: Cell, trial: usize) -> Result<TrialResult> {
    let trace = WorldTrace::generate(cell.trajectory, config.duration, config.trial_seed(trial), &config.noise, cell.rate)?;
    run_trial_on(config, cell, trial, &trace)
}

/// Runs one trial on a given world trace.
pub fn run_trial_on(config: &CampaignConfig, cell: Cell, trial: usize, trace: &WorldTrace) -> Result<TrialResult> {
    let model = FilterModel::matched(&config.noise);
    let anchors = anchors();
    let init = initial_estimates(config, trace, &model, anchors.len())?;
    let q = DMatrix::from_element(1, 1, model.range_variance);
    let dynamics = ImuDynamics::new(IMU_DT);
    Ok(match cell.algorithm {
        Algorithm::DiukfIci => {
            let filters = anchors.iter().map(|a| UkfFilter::new(9, dynamics, RangeObservation::new(a.position), model.process_noise.clone(), q.clone())).collect();
            simulate(cell, trial, trace, filters, init)
        }
        Algorithm::DiekfIci | Algorithm::DiekfCi => {
            let filters = anchors.iter().map(|a| IekfFilter::new(dynamics, RangeObservation::new(a.position), model.process_noise.clone(), q.clone())).collect();
            simulate(cell, trial, trace, filters, init)
        }
    })
}

/// Trial-averaged figures of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub trials: usize,
    pub failed: usize,
    pub prmse: f64,
    pub ormse: f64,
    pub prmse_node1: f64,
    pub ormse_node1: f64,
    pub bound_violations: usize,
    pub increment_violations: usize,
    pub gamma_bar: f64,
    pub worst_excess: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignResult {
    pub config: CampaignConfig,
    pub cells: Vec<CellSummary>,
    /// Ordered by cell, then trial.
    pub trials: Vec<TrialResult>,
}

impl CampaignResult {
    pub fn monitor_fired(&self) -> bool {
        self.trials.iter().any(|t| t.monitor.fired())
    }

    pub fn cell(&self, algorithm: Algorithm, trajectory: TrajectoryId, rate: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.cell.algorithm == algorithm && c.cell.trajectory == trajectory && c.cell.rate == rate)
    }
}

pub fn cells(config: &CampaignConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &algorithm in &config.algorithms {
        for &trajectory in &config.trajectories {
            for &rate in &config.rates {
                out.push(Cell { algorithm, trajectory, rate });
            }
        }
    }
    out
}

fn summarize(cell: Cell, trials: &[TrialResult]) -> CellSummary {
    let ok: Vec<&TrialResult> = trials.iter().filter(|t| !t.failed()).collect();
    let avg = |f: &dyn Fn(&TrialResult) -> f64| metrics::mean(&ok.iter().map(|t| f(t)).collect::<Vec<_>>());
    CellSummary {
        cell,
        trials: trials.len(),
        failed: trials.len() - ok.len(),
        prmse: avg(&|t| t.prmse),
        ormse: avg(&|t| t.ormse),
        prmse_node1: avg(&|t| t.node_prmse[0]),
        ormse_node1: avg(&|t| t.node_ormse[0]),
        bound_violations: trials.iter().map(|t| t.monitor.bound_violations).sum(),
        increment_violations: trials.iter().map(|t| t.monitor.increment_violations).sum(),
        gamma_bar: trials.iter().map(|t| t.monitor.gamma_bar).fold(0.0, f64::max),
        worst_excess: trials.iter().map(|t| t.monitor.worst_excess).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Runs every cell × trial on a worker pool and merges results in a fixed
/// order, so aggregates do not depend on the thread count.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignResult> {
    config.validate()?;
    let cells = cells(config);
    let jobs: Vec<(Cell, usize)> = cells.iter().flat_map(|&c| (0..config.trials).map(move |t| (c, t))).collect();
    let threads = config.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let trials: Vec<TrialResult> = pool.install(|| jobs.par_iter().map(|&(c, t)| run_trial(config, c, t)).collect::<Result<Vec<_>>>())?;
    let summaries = cells.iter().enumerate().map(|(k, &c)| summarize(c, &trials[k * config.trials..(k + 1) * config.trials])).collect();
    Ok(CampaignResult { config: config.clone(), cells: summaries, trials })
}
