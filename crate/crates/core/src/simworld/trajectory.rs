//! Parametric target paths and their exact discrete IMU integration.
//!
//! Both paths loop around the anchor column of sensors 1 and 5, so at least
//! one anchor is in range once the target has left its start point and the
//! bearing from the column sweeps all directions every few seconds. The
//! start offset decays exponentially. Attitude is the initial attitude
//! yawed about world z.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{so3, GroupElement};
use crate::models::ImuDynamics;
use crate::simworld::ImuReading;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TrajectoryId {
    One,
    Two,
}

impl TrajectoryId {
    pub const ALL: [TrajectoryId; 2] = [TrajectoryId::One, TrajectoryId::Two];

    pub fn number(self) -> u8 {
        match self {
            TrajectoryId::One => 1,
            TrajectoryId::Two => 2,
        }
    }
}

impl TryFrom<u8> for TrajectoryId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(TrajectoryId::One),
            2 => Ok(TrajectoryId::Two),
            other => Err(Error::InvalidArgument(format!("unknown trajectory {other}"))),
        }
    }
}

impl From<TrajectoryId> for u8 {
    fn from(t: TrajectoryId) -> u8 {
        t.number()
    }
}

impl FromStr for TrajectoryId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let n: u8 = s.trim().parse().map_err(|_| Error::Parse(format!("trajectory id '{s}'")))?;
        n.try_into()
    }
}

impl fmt::Display for TrajectoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// `Ry(−π)`: the tabulated initial orientation `(0, −π, 0)` as roll-pitch-yaw.
pub fn initial_rotation() -> Matrix3<f64> {
    Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0)
}

pub fn initial_position(id: TrajectoryId) -> Vector3<f64> {
    match id {
        TrajectoryId::One => Vector3::new(-2.0, 2.0, 0.8),
        TrajectoryId::Two => Vector3::new(-2.0, 0.0, 0.5),
    }
}

/// Steady-state path: a loop around a vertical axis with polar radius
/// `r(φ) = radius + lobe_depth·cos(lobes·φ)`, `φ = phase + rate·t`, and a
/// sinusoidal altitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathShape {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub lobe_depth: f64,
    pub lobes: f64,
    /// Signed angular rate about +z (rad/s).
    pub rate: f64,
    pub phase: f64,
    pub altitude_amplitude: f64,
    pub altitude_frequency: f64,
    /// Yaw swing amplitude (rad); zero makes the yaw follow the loop.
    pub yaw_amplitude: f64,
    pub yaw_frequency: f64,
}

/// Time constant (s) of the decay from the start point onto the path.
pub const SETTLE: f64 = 0.8;

impl PathShape {
    pub fn for_trajectory(id: TrajectoryId) -> Self {
        // Both loops circle the column of anchors 1 and 5.
        let center = Vector3::new(-5.0, -5.0, 2.5);
        match id {
            TrajectoryId::One => Self {
                center,
                radius: 2.5,
                lobe_depth: 0.0,
                lobes: 0.0,
                rate: 2.0 * PI / 8.0,
                phase: 1.17,
                altitude_amplitude: 0.5,
                altitude_frequency: 2.0 * PI / 10.0,
                yaw_amplitude: 0.0,
                yaw_frequency: 0.0,
            },
            TrajectoryId::Two => Self {
                center,
                radius: 2.6,
                lobe_depth: 1.0,
                lobes: 3.0,
                rate: -2.0 * PI / 12.0,
                phase: 1.03,
                altitude_amplitude: 1.0,
                altitude_frequency: 2.0 * PI / 8.0,
                yaw_amplitude: 0.6,
                yaw_frequency: 2.0 * PI / 20.0,
            },
        }
    }

    /// Position, velocity and acceleration at `t`.
    fn kinematics(&self, t: f64) -> [Vector3<f64>; 3] {
        let (w, k, b) = (self.rate, self.lobes, self.lobe_depth);
        let phi = self.phase + w * t;
        let (sk, ck) = (k * phi).sin_cos();
        let (r, r1, r2) = (self.radius + b * ck, -b * k * sk, -b * k * k * ck);
        let (sn, cs) = phi.sin_cos();
        let radial = Vector3::new(cs, sn, 0.0);
        let tangent = Vector3::new(-sn, cs, 0.0);

        let (a, nu) = (self.altitude_amplitude, self.altitude_frequency);
        let (sz, cz) = (nu * t).sin_cos();
        [
            self.center + radial * r + Vector3::z() * (a * sz),
            (radial * r1 + tangent * r) * w + Vector3::z() * (a * nu * cz),
            (radial * (r2 - r) + tangent * (2.0 * r1)) * (w * w) - Vector3::z() * (a * nu * nu * sz),
        ]
    }

    /// Yaw angle (rad) relative to the initial attitude.
    pub fn yaw(&self, t: f64) -> f64 {
        if self.yaw_amplitude == 0.0 {
            self.rate * t
        } else {
            self.yaw_amplitude * (self.yaw_frequency * t).sin()
        }
    }
}

/// Position, velocity and acceleration of a path at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathPoint {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: TrajectoryId,
    pub shape: PathShape,
    offset: Vector3<f64>,
}

impl Trajectory {
    pub fn new(id: TrajectoryId) -> Self {
        let shape = PathShape::for_trajectory(id);
        let offset = initial_position(id) - shape.kinematics(0.0)[0];
        Self { id, shape, offset }
    }

    pub fn point(&self, t: f64) -> PathPoint {
        let [p, v, a] = self.shape.kinematics(t);
        let d = self.offset * (-t / SETTLE).exp();
        PathPoint { position: p + d, velocity: v - d / SETTLE, acceleration: a + d / (SETTLE * SETTLE) }
    }
}

/// True states at every IMU tick and the clean IMU readings between them.
///
/// Readings are evaluated at interval midpoints; the specific force is
/// expressed in the body frame of the integrated attitude, so the states are
/// an exact solution of the discrete IMU model.
pub fn synthesize_trajectory(id: TrajectoryId, duration: f64, dt: f64) -> Result<(Vec<GroupElement>, Vec<ImuReading>)> {
    if !(duration > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("duration {duration} and step {dt} must be positive")));
    }
    let traj = Trajectory::new(id);
    let model = ImuDynamics::new(dt);
    let steps = (duration / dt).round() as usize;
    let mut rot = initial_rotation();
    let mut vel = traj.point(0.0).velocity;
    let mut pos = initial_position(id);
    let mut states = Vec::with_capacity(steps + 1);
    let mut readings = Vec::with_capacity(steps);
    states.push(GroupElement::se23(rot, vel, pos)?);
    // Body rate of a pure world-z yaw of the initial attitude.
    let yaw_axis = initial_rotation().transpose() * Vector3::z();
    for k in 0..steps {
        let t = k as f64 * dt;
        let mid = traj.point(t + 0.5 * dt);
        // Exact yaw increment over the interval.
        let gyro = yaw_axis * ((traj.shape.yaw(t + dt) - traj.shape.yaw(t)) / dt);
        let accel = rot.transpose() * (mid.acceleration - model.gravity);
        readings.push(ImuReading { t, gyro, accel });
        let (r, v, p) = model.step(&rot, &vel, &pos, &gyro, &accel);
        rot = if k % 100 == 99 { crate::linalg::orthonormalize(&r) } else { r };
        vel = v;
        pos = p;
        states.push(GroupElement::se23(rot, vel, pos)?);
    }
    Ok((states, readings))
}

/// Yaw-only attitude of the parametric path at time `t`.
pub fn nominal_rotation(id: TrajectoryId, t: f64) -> Matrix3<f64> {
    let yaw = PathShape::for_trajectory(id).yaw(t);
    so3::exp(&(Vector3::z() * yaw)) * initial_rotation()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_tabulated_pose() {
        for id in TrajectoryId::ALL {
            let (states, _) = synthesize_trajectory(id, 1.0, 0.01).unwrap();
            assert_eq!(states[0].position().unwrap(), &initial_position(id));
            assert_eq!(states[0].rotation(), &initial_rotation());
        }
        assert_eq!(initial_position(TrajectoryId::One), Vector3::new(-2.0, 2.0, 0.8));
        assert_eq!(initial_position(TrajectoryId::Two), Vector3::new(-2.0, 0.0, 0.5));
    }

    #[test]
    fn initial_rotation_is_pitch_of_minus_pi() {
        let r = so3::exp(&Vector3::new(0.0, -PI + 1e-12, 0.0));
        assert!((r - initial_rotation()).amax() < 1e-9);
    }

    #[test]
    fn path_derivatives_match_finite_differences() {
        let h = 1e-5;
        for id in TrajectoryId::ALL {
            let traj = Trajectory::new(id);
            for &t in &[0.0, 0.7, 5.3, 31.0] {
                let (a, b, c) = (traj.point(t + h), traj.point(t - h), traj.point(t));
                assert!(((a.position - b.position) / (2.0 * h) - c.velocity).amax() < 1e-6);
                assert!(((a.velocity - b.velocity) / (2.0 * h) - c.acceleration).amax() < 1e-5);
            }
        }
    }

    #[test]
    fn integrated_states_follow_the_path() {
        for id in TrajectoryId::ALL {
            let (states, readings) = synthesize_trajectory(id, 40.0, 0.01).unwrap();
            assert_eq!(states.len(), 4001);
            assert_eq!(readings.len(), 4000);
            let traj = Trajectory::new(id);
            for (k, s) in states.iter().enumerate().step_by(100) {
                let p = traj.point(k as f64 * 0.01).position;
                assert!((s.position().unwrap() - p).norm() < 1e-2, "drift at step {k}");
                assert!((s.rotation() - nominal_rotation(id, k as f64 * 0.01)).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn hover_keeps_constant_pose() {
        let model = ImuDynamics::new(0.01);
        let r = initial_rotation();
        let accel = r.transpose() * -model.gravity;
        let (r1, v1, p1) = model.step(&r, &Vector3::zeros(), &Vector3::new(1.0, 2.0, 3.0), &Vector3::zeros(), &accel);
        assert_eq!((r1, v1, p1), (r, Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0)));
    }

    #[test]
    fn parses_ids() {
        assert_eq!("2".parse::<TrajectoryId>().unwrap(), TrajectoryId::Two);
        assert!("3".parse::<TrajectoryId>().is_err());
        assert!(synthesize_trajectory(TrajectoryId::One, 0.0, 0.01).is_err());
    }
}
