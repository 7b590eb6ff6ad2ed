//! Process and measurement models: strapdown IMU kinematics on SE₂(3), UWB
//! range to a fixed anchor, and linear models on the translation group used
//! as flat-space references.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::iekf::{LinearizedDynamics, LinearizedObservation};
use crate::liegroup::{so3, GroupElement};
use crate::linalg::skew;
use crate::simworld::ImuReading;
use crate::unscented::{Dynamics, Observation};

pub const GRAVITY: f64 = 9.81;

/// Discrete IMU kinematics with noise ordered `(gyro, accel)`:
/// `R⁺ = R·Exp((ω+n_g)dt)`, `v⁺ = v + (R(a+n_a) + g)dt`,
/// `p⁺ = p + v dt + ½(R(a+n_a) + g)dt²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuDynamics {
    pub dt: f64,
    pub gravity: Vector3<f64>,
}

impl ImuDynamics {
    pub fn new(dt: f64) -> Self {
        Self { dt, gravity: Vector3::new(0.0, 0.0, -GRAVITY) }
    }

    /// Noiseless-or-noisy step on raw components.
    pub fn step(&self, rot: &Matrix3<f64>, vel: &Vector3<f64>, pos: &Vector3<f64>, gyro: &Vector3<f64>, accel: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>, Vector3<f64>) {
        let dt = self.dt;
        let acc = rot * accel + self.gravity;
        let r1 = rot * so3::exp(&(gyro * dt));
        let v1 = vel + acc * dt;
        let p1 = pos + vel * dt + acc * (0.5 * dt * dt);
        (r1, v1, p1)
    }
}

impl Dynamics for ImuDynamics {
    type Input = ImuReading;

    fn noise_dim(&self) -> usize {
        6
    }

    fn propagate(&self, x: &GroupElement, u: &ImuReading, noise: &[f64]) -> GroupElement {
        let (gyro, accel) = if noise.is_empty() {
            (u.gyro, u.accel)
        } else {
            (u.gyro + Vector3::new(noise[0], noise[1], noise[2]), u.accel + Vector3::new(noise[3], noise[4], noise[5]))
        };
        let (r, v, p) = self.step(x.rotation(), x.velocity().expect("IMU state lives on SE2(3)"), x.position().expect("IMU state lives on SE2(3)"), &gyro, &accel);
        GroupElement::se23(r, v, p).expect("IMU step preserves SE2(3)")
    }
}

impl LinearizedDynamics for ImuDynamics {
    fn error_jacobians(&self, x: &GroupElement, u: &ImuReading) -> (DMatrix<f64>, DMatrix<f64>) {
        let dt = self.dt;
        let rot = x.rotation();
        let next = self.propagate(x, u, &[]);
        let (r1, v1, p1) = (next.rotation(), next.velocity().unwrap(), next.position().unwrap());
        let g = skew(&self.gravity);
        let i3 = Matrix3::identity();

        let mut f = DMatrix::identity(9, 9);
        f.view_mut((3, 0), (3, 3)).copy_from(&(g * dt));
        f.view_mut((6, 0), (3, 3)).copy_from(&(g * (0.5 * dt * dt)));
        f.view_mut((6, 3), (3, 3)).copy_from(&(i3 * dt));

        // Right Jacobian of Exp at ω dt maps gyro noise into the rotation error.
        let jr = so3::left_jacobian(&(-u.gyro * dt));
        let gr = r1 * jr * dt;
        let mut gm = DMatrix::zeros(9, 6);
        gm.view_mut((0, 0), (3, 3)).copy_from(&gr);
        gm.view_mut((3, 0), (3, 3)).copy_from(&(skew(v1) * gr));
        gm.view_mut((6, 0), (3, 3)).copy_from(&(skew(p1) * gr));
        gm.view_mut((3, 3), (3, 3)).copy_from(&(rot * dt));
        gm.view_mut((6, 3), (3, 3)).copy_from(&(rot * (0.5 * dt * dt)));
        (f, gm)
    }
}

/// Range from the state position to a fixed anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeObservation {
    pub anchor: Vector3<f64>,
}

impl RangeObservation {
    pub fn new(anchor: Vector3<f64>) -> Self {
        Self { anchor }
    }
}

impl Observation for RangeObservation {
    fn dim(&self) -> usize {
        1
    }

    fn observe(&self, x: &GroupElement) -> DVector<f64> {
        let p = x.position().expect("range model needs a position column");
        DVector::from_element(1, (p - self.anchor).norm())
    }
}

impl LinearizedObservation for RangeObservation {
    fn jacobian(&self, x: &GroupElement) -> DMatrix<f64> {
        let p = x.position().expect("range model needs a position column");
        let d = p - self.anchor;
        let n = d.norm();
        let u = if n > 0.0 { d / n } else { Vector3::zeros() };
        let c = p.cross(&u);
        let mut h = DMatrix::zeros(1, x.kind().dim());
        let pos_col = x.kind().dim() - 3;
        for k in 0..3 {
            h[(0, k)] = c[k];
            h[(0, pos_col + k)] = u[k];
        }
        h
    }
}

/// Linear models on the translation group.
pub mod linear {
    use super::*;

    /// `p⁺ = A p + u + n`.
    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct LinearTranslation {
        pub transition: Matrix3<f64>,
    }

    impl LinearTranslation {
        pub fn new(transition: Matrix3<f64>) -> Self {
            Self { transition }
        }
    }

    impl Dynamics for LinearTranslation {
        type Input = Vector3<f64>;

        fn noise_dim(&self) -> usize {
            3
        }

        fn propagate(&self, x: &GroupElement, u: &Vector3<f64>, noise: &[f64]) -> GroupElement {
            let p = x.position().expect("translation state");
            let n = if noise.is_empty() { Vector3::zeros() } else { Vector3::new(noise[0], noise[1], noise[2]) };
            GroupElement::translation(self.transition * p + u + n)
        }
    }

    impl LinearizedDynamics for LinearTranslation {
        fn error_jacobians(&self, _: &GroupElement, _: &Vector3<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
            (DMatrix::from_column_slice(3, 3, self.transition.as_slice()), DMatrix::identity(3, 3))
        }
    }

    /// `z = M p`.
    #[derive(Clone, Debug, PartialEq)]
    pub struct LinearObservation {
        pub matrix: DMatrix<f64>,
    }

    impl LinearObservation {
        pub fn new(matrix: DMatrix<f64>) -> Self {
            assert_eq!(matrix.ncols(), 3, "observation matrix acts on a 3-vector");
            Self { matrix }
        }
    }

    impl Observation for LinearObservation {
        fn dim(&self) -> usize {
            self.matrix.nrows()
        }

        fn observe(&self, x: &GroupElement) -> DVector<f64> {
            let p = x.position().expect("translation state");
            &self.matrix * DVector::from_column_slice(p.as_slice())
        }
    }

    impl LinearizedObservation for LinearObservation {
        fn jacobian(&self, _: &GroupElement) -> DMatrix<f64> {
            self.matrix.clone()
        }
    }
}
