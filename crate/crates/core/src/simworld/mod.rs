//! Simulated world: target trajectory, noisy IMU, range-limited UWB anchors
//! and a randomly failing communication graph.

mod trace_io;
pub mod trajectory;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dise::Adjacency;
use crate::error::{Error, Result};
use crate::liegroup::GroupElement;

pub use trace_io::{read_trace, write_trace};
pub use trajectory::{synthesize_trajectory, TrajectoryId};

pub const IMU_RATE: f64 = 100.0;
pub const IMU_DT: f64 = 1.0 / IMU_RATE;
/// IMU ticks per UWB tick.
pub const UWB_DIVISOR: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub id: usize,
    pub position: Vector3<f64>,
}

/// The eight UWB anchors, ids 1–8.
pub fn anchors() -> Vec<Anchor> {
    const XY: [(f64, f64); 4] = [(-5.0, -5.0), (15.0, -5.0), (-5.0, 15.0), (15.0, 15.0)];
    [0.0, 5.0]
        .iter()
        .flat_map(|&z| XY.iter().map(move |&(x, y)| Vector3::new(x, y, z)))
        .enumerate()
        .map(|(k, position)| Anchor { id: k + 1, position })
        .collect()
}

/// Body-frame angular rate (rad/s) and specific force (m/s²) over `[t, t + dt)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuReading {
    pub t: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeMeasurement {
    pub sensor: usize,
    pub value: f64,
    pub t: f64,
}

/// Communication graph in force at one UWB tick. Every node is implicitly
/// linked to itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologySample {
    pub timestep: u64,
    pub adjacency: Adjacency,
}

/// Sensor noise of the simulated world.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Accelerometer white-noise density per axis, m/s²/√Hz.
    pub accel_density: [f64; 3],
    /// Gyroscope white-noise density per axis, deg/s/√Hz.
    pub gyro_density_deg: [f64; 3],
    /// Range noise standard deviation, m.
    pub range_sigma: f64,
    /// Sensing range, m.
    pub range_limit: f64,
    /// Standard deviation of the initial estimate error per tangent axis.
    pub initial_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { accel_density: [0.02, 0.02, 0.05], gyro_density_deg: [0.005; 3], range_sigma: 0.10, range_limit: 5.0, initial_std: 0.1 }
    }
}

impl NoiseConfig {
    /// No sensor noise and exact initial estimates; the sensing range is kept.
    pub fn zero() -> Self {
        Self { accel_density: [0.0; 3], gyro_density_deg: [0.0; 3], range_sigma: 0.0, initial_std: 0.0, ..Self::default() }
    }

    /// Per-sample accelerometer standard deviation at the IMU rate.
    pub fn accel_std(&self) -> Vector3<f64> {
        Vector3::from(self.accel_density) * IMU_RATE.sqrt()
    }

    /// Per-sample gyroscope standard deviation in rad/s.
    pub fn gyro_std(&self) -> Vector3<f64> {
        Vector3::from(self.gyro_density_deg) * (std::f64::consts::PI / 180.0) * IMU_RATE.sqrt()
    }
}

fn gaussian(rng: &mut impl Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std).expect("finite standard deviation").sample(rng)
}

/// Adds white noise to clean IMU readings.
pub fn corrupt_imu(clean: &[ImuReading], noise: &NoiseConfig, rng: &mut impl Rng) -> Vec<ImuReading> {
    let (sa, sg) = (noise.accel_std(), noise.gyro_std());
    clean
        .iter()
        .map(|r| {
            let gyro = r.gyro + Vector3::from_fn(|k, _| gaussian(rng, sg[k]));
            let accel = r.accel + Vector3::from_fn(|k, _| gaussian(rng, sa[k]));
            ImuReading { t: r.t, gyro, accel }
        })
        .collect()
}

/// A noisy range, or `None` beyond the sensing range.
pub fn measure(anchor: &Anchor, position: &Vector3<f64>, t: f64, noise: &NoiseConfig, rng: &mut impl Rng) -> Option<RangeMeasurement> {
    let d = (position - anchor.position).norm();
    (d <= noise.range_limit).then(|| RangeMeasurement { sensor: anchor.id, value: (d + gaussian(rng, noise.range_sigma)).max(0.0), t })
}

/// Each link is up independently with probability `rate / 100`. One uniform
/// draw per link keeps graphs at different rates coupled for a common stream.
pub fn sample_topology(rate: f64, n: usize, timestep: u64, rng: &mut impl Rng) -> Result<TopologySample> {
    if !(0.0..=100.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("communication rate {rate} outside [0, 100]")));
    }
    let p = rate / 100.0;
    let mut adjacency = Adjacency::isolated(n);
    for i in 0..n {
        for j in i + 1..n {
            let u: f64 = rng.random();
            adjacency.set(i, j, u < p);
        }
    }
    Ok(TopologySample { timestep, adjacency })
}

/// Independent random streams of one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Imu,
    Topology,
    Sensor(usize),
    InitialEstimate(usize),
}

impl Stream {
    fn offset(self) -> u64 {
        match self {
            Stream::Imu => 1,
            Stream::Topology => 2,
            Stream::Sensor(k) => 100 + k as u64,
            Stream::InitialEstimate(k) => 200 + k as u64,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, stream.offset()))
}

/// Everything a trial observes, generated from one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldTrace {
    pub seed: u64,
    pub trajectory: TrajectoryId,
    /// True state at every IMU tick, starting at `t = 0`.
    pub states: Vec<GroupElement>,
    /// Corrupted readings; reading `k` drives state `k` to `k + 1`.
    pub imu: Vec<ImuReading>,
    /// Range per anchor at UWB tick `m` (IMU tick `m · UWB_DIVISOR`); index 0 is unused.
    pub measurements: Vec<Vec<Option<f64>>>,
    /// Communication graph at every UWB tick; index 0 is unused.
    pub topology: Vec<TopologySample>,
}

impl WorldTrace {
    pub fn generate(trajectory: TrajectoryId, duration: f64, seed: u64, noise: &NoiseConfig, rate: f64) -> Result<Self> {
        let (states, clean) = synthesize_trajectory(trajectory, duration, IMU_DT)?;
        let imu = corrupt_imu(&clean, noise, &mut stream_rng(seed, Stream::Imu));
        let anchors = anchors();
        let ticks = clean.len() / UWB_DIVISOR;
        let mut sensor_rngs: Vec<ChaCha8Rng> = anchors.iter().map(|a| stream_rng(seed, Stream::Sensor(a.id))).collect();
        let mut topo_rng = stream_rng(seed, Stream::Topology);
        let mut measurements = Vec::with_capacity(ticks + 1);
        let mut topology = Vec::with_capacity(ticks + 1);
        for m in 0..=ticks {
            let k = m * UWB_DIVISOR;
            let p = states[k].position().expect("SE2(3) state");
            let t = k as f64 * IMU_DT;
            measurements.push(anchors.iter().zip(sensor_rngs.iter_mut()).map(|(a, rng)| measure(a, p, t, noise, rng).map(|r| r.value)).collect());
            topology.push(sample_topology(rate, anchors.len(), m as u64, &mut topo_rng)?);
        }
        Ok(Self { seed, trajectory, states, imu, measurements, topology })
    }

    pub fn sensors(&self) -> usize {
        self.measurements.first().map_or(0, Vec::len)
    }

    /// Number of UWB ticks after the initial instant.
    pub fn uwb_ticks(&self) -> usize {
        self.measurements.len().saturating_sub(1)
    }

    /// Fraction of UWB ticks at which at least one anchor sees the target.
    pub fn coverage(&self) -> f64 {
        let seen = self.measurements[1..].iter().filter(|row| row.iter().any(Option::is_some)).count();
        seen as f64 / self.uwb_ticks().max(1) as f64
    }

    /// Longest run of UWB ticks without any measurement, in seconds.
    pub fn longest_gap(&self) -> f64 {
        let mut best = 0usize;
        let mut run = 0usize;
        for row in &self.measurements[1..] {
            if row.iter().any(Option::is_some) {
                run = 0;
            } else {
                run += 1;
                best = best.max(run);
            }
        }
        best as f64 * UWB_DIVISOR as f64 * IMU_DT
    }
}
