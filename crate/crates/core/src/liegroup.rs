//! Matrix Lie groups used by the filters: SO(3), SE(3), SE₂(3) and the pure
//! translation group T(3).
//!
//! Elements are stored as a rotation block plus up to two translation-like
//! columns, which is enough to reconstruct the full homogeneous matrix:
//!
//! ```text
//! SO(3):  R             SE(3):  [R t]        SE₂(3): [R v p]       T(3): [I p]
//!                               [0 1]                [0 1 0]             [0 1]
//!                                                    [0 0 1]
//! ```
//!
//! Tangent coordinates are ordered rotation first, then each column in matrix
//! order. For SE₂(3) that is `(φ, ν, ρ)`: rotation, velocity, position.
//! T(3) has no rotation block and its coordinates are the translation itself.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, skew, unskew};

/// Below this rotation angle the closed forms switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;
/// `log` refuses rotations whose angle is within this distance of π.
pub const BRANCH_MARGIN: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-9;
const PATTERN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupKind {
    SO3,
    SE3,
    /// Extended pose: rotation, velocity and position.
    SE23,
    /// Translations of ℝ³, embedded as 4×4 homogeneous matrices.
    T3,
}

impl GroupKind {
    /// Dimension of the tangent space.
    pub const fn dim(self) -> usize {
        match self {
            GroupKind::SO3 | GroupKind::T3 => 3,
            GroupKind::SE3 => 6,
            GroupKind::SE23 => 9,
        }
    }

    /// Side length of the matrix representation.
    pub const fn matrix_size(self) -> usize {
        match self {
            GroupKind::SO3 => 3,
            GroupKind::SE3 | GroupKind::T3 => 4,
            GroupKind::SE23 => 5,
        }
    }

    const fn columns(self) -> usize {
        match self {
            GroupKind::SO3 => 0,
            GroupKind::SE3 | GroupKind::T3 => 1,
            GroupKind::SE23 => 2,
        }
    }

    const fn has_rotation(self) -> bool {
        !matches!(self, GroupKind::T3)
    }

    const fn column_offset(self) -> usize {
        if self.has_rotation() {
            3
        } else {
            0
        }
    }
}

/// Coefficients `sinθ/θ`, `(1-cosθ)/θ²`, `(θ-sinθ)/θ³` with Taylor branches near zero.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (s / theta, (1.0 - c) / (theta * theta), (theta - s) / (theta * theta * theta))
    }
}

pub(crate) mod so3 {
    use super::*;

    pub fn exp(omega: &Vector3<f64>) -> Matrix3<f64> {
        let theta = omega.norm();
        let (a, b, _) = rodrigues_coefficients(theta);
        let w = skew(omega);
        Matrix3::identity() + w * a + w * w * b
    }

    pub fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
        let theta = omega.norm();
        let (_, b, c) = rodrigues_coefficients(theta);
        let w = skew(omega);
        Matrix3::identity() + w * b + w * w * c
    }

    pub fn left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
        let theta = omega.norm();
        let d = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
        } else {
            let (s, c) = theta.sin_cos();
            1.0 / (theta * theta) - (1.0 + c) / (2.0 * theta * s)
        };
        let w = skew(omega);
        Matrix3::identity() - w * 0.5 + w * w * d
    }

    /// Principal logarithm; errors when the angle is within `BRANCH_MARGIN` of π.
    pub fn log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
        let s = unskew(&(r - r.transpose())) * 0.5;
        let c = 0.5 * (r.trace() - 1.0);
        let sn = s.norm();
        let theta = sn.atan2(c);
        if theta >= PI - BRANCH_MARGIN {
            return Err(Error::BranchCut { angle: theta });
        }
        if sn == 0.0 {
            return Ok(Vector3::zeros());
        }
        if theta > PI - 1e-2 {
            // Axis from the symmetric part, sign from the skew part.
            let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
            let k = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap();
            let mut axis: Vector3<f64> = b.column(k).into_owned() / (b[(k, k)] * (1.0 - c)).sqrt();
            axis.normalize_mut();
            if axis.dot(&s) < 0.0 {
                axis = -axis;
            }
            return Ok(axis * theta);
        }
        Ok(s * (theta / sn))
    }
}

/// Exponential coordinates on one of the supported groups.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    kind: GroupKind,
    coords: DVector<f64>,
}

impl TangentVector {
    pub fn new(kind: GroupKind, coords: DVector<f64>) -> Result<Self> {
        if coords.len() != kind.dim() {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} tangent vector needs {} coordinates, got {}",
                kind.dim(),
                coords.len()
            )));
        }
        Ok(Self { kind, coords })
    }

    pub fn from_slice(kind: GroupKind, coords: &[f64]) -> Result<Self> {
        Self::new(kind, DVector::from_column_slice(coords))
    }

    pub fn zeros(kind: GroupKind) -> Self {
        Self { kind, coords: DVector::zeros(kind.dim()) }
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.coords
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { kind: self.kind, coords: &self.coords * s }
    }

    fn rotation(&self) -> Vector3<f64> {
        if self.kind.has_rotation() {
            Vector3::new(self.coords[0], self.coords[1], self.coords[2])
        } else {
            Vector3::zeros()
        }
    }

    fn column(&self, k: usize) -> Vector3<f64> {
        let o = self.kind.column_offset() + 3 * k;
        Vector3::new(self.coords[o], self.coords[o + 1], self.coords[o + 2])
    }

    /// Lie algebra matrix `ξ^∧`.
    pub fn hat(&self) -> DMatrix<f64> {
        let n = self.kind.matrix_size();
        let mut m = DMatrix::zeros(n, n);
        if self.kind.has_rotation() {
            m.view_mut((0, 0), (3, 3)).copy_from(&skew(&self.rotation()));
        }
        for k in 0..self.kind.columns() {
            m.view_mut((0, 3 + k), (3, 1)).copy_from(&self.column(k));
        }
        m
    }

    /// Inverse of [`hat`](Self::hat). The input must have the algebra's
    /// sparsity pattern to within 1e-12; the skew-symmetric part of the
    /// rotation block is extracted.
    pub fn vee(kind: GroupKind, m: &DMatrix<f64>) -> Result<Self> {
        let n = kind.matrix_size();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} algebra element must be {n}x{n}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let bad = |what: &str| Err(Error::InvalidArgument(format!("not a {kind:?} algebra element: {what}")));
        let block: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        if kind.has_rotation() {
            if (block + block.transpose()).amax() > PATTERN_TOL {
                return bad("rotation block is not skew-symmetric");
            }
        } else if block.amax() > PATTERN_TOL {
            return bad("translation group has a nonzero rotation block");
        }
        if n > 3 && m.rows(3, n - 3).amax() > PATTERN_TOL {
            return bad("bottom rows are not zero");
        }
        let mut coords = DVector::zeros(kind.dim());
        if kind.has_rotation() {
            let w = unskew(&((block - block.transpose()) * 0.5));
            coords.rows_mut(0, 3).copy_from(&w);
        }
        let off = kind.column_offset();
        for k in 0..kind.columns() {
            coords.rows_mut(off + 3 * k, 3).copy_from(&m.fixed_view::<3, 1>(0, 3 + k));
        }
        Ok(Self { kind, coords })
    }

    /// Closed-form exponential map.
    pub fn exp(&self) -> GroupElement {
        let omega = self.rotation();
        let rot = if self.kind.has_rotation() { so3::exp(&omega) } else { Matrix3::identity() };
        let mut cols = [Vector3::zeros(); 2];
        if self.kind.columns() > 0 {
            let jac = if self.kind.has_rotation() { so3::left_jacobian(&omega) } else { Matrix3::identity() };
            for (k, col) in cols.iter_mut().enumerate().take(self.kind.columns()) {
                *col = jac * self.column(k);
            }
        }
        GroupElement { kind: self.kind, rot, cols }
    }
}

/// An element of one of the supported matrix Lie groups.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    kind: GroupKind,
    rot: Matrix3<f64>,
    cols: [Vector3<f64>; 2],
}

impl GroupElement {
    pub fn identity(kind: GroupKind) -> Self {
        Self { kind, rot: Matrix3::identity(), cols: [Vector3::zeros(); 2] }
    }

    pub fn so3(rot: Matrix3<f64>) -> Result<Self> {
        Self { kind: GroupKind::SO3, rot, cols: [Vector3::zeros(); 2] }.validated()
    }

    pub fn se3(rot: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        Self { kind: GroupKind::SE3, rot, cols: [t, Vector3::zeros()] }.validated()
    }

    pub fn se23(rot: Matrix3<f64>, velocity: Vector3<f64>, position: Vector3<f64>) -> Result<Self> {
        Self { kind: GroupKind::SE23, rot, cols: [velocity, position] }.validated()
    }

    pub fn translation(p: Vector3<f64>) -> Self {
        Self { kind: GroupKind::T3, rot: Matrix3::identity(), cols: [p, Vector3::zeros()] }
    }

    /// Builds an element from its full matrix, checking the group invariants.
    pub fn from_matrix(kind: GroupKind, m: &DMatrix<f64>) -> Result<Self> {
        let n = kind.matrix_size();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::InvalidArgument(format!("{kind:?} element must be {n}x{n}")));
        }
        for r in 3..n {
            for c in 0..n {
                let expected = if r == c { 1.0 } else { 0.0 };
                if m[(r, c)] != expected {
                    return Err(Error::InvalidArgument(format!("{kind:?} bottom rows do not match the group pattern")));
                }
            }
        }
        let rot: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        if !kind.has_rotation() && rot != Matrix3::identity() {
            return Err(Error::InvalidArgument("translation element has a non-identity rotation block".into()));
        }
        let mut cols = [Vector3::zeros(); 2];
        for (k, col) in cols.iter_mut().enumerate().take(kind.columns()) {
            *col = m.fixed_view::<3, 1>(0, 3 + k).into_owned();
        }
        Self { kind, rot, cols }.validated()
    }

    fn validated(self) -> Result<Self> {
        let err = (self.rot.transpose() * self.rot - Matrix3::identity()).norm();
        if !(err <= ORTHO_TOL) || self.rot.determinant() <= 0.0 {
            return Err(Error::InvalidArgument(format!("rotation block is not in SO(3) (orthogonality error {err:e})")));
        }
        if self.cols.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("non-finite translation column".into()));
        }
        Ok(self)
    }

    /// Checks orthogonality and finiteness of the stored element.
    pub fn is_valid(&self) -> bool {
        self.clone().validated().is_ok()
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rot
    }

    /// Translation-like column `k` (velocity is column 0 and position column 1 on SE₂(3)).
    pub fn column(&self, k: usize) -> Option<&Vector3<f64>> {
        (k < self.kind.columns()).then(|| &self.cols[k])
    }

    pub fn velocity(&self) -> Option<&Vector3<f64>> {
        match self.kind {
            GroupKind::SE23 => Some(&self.cols[0]),
            _ => None,
        }
    }

    pub fn position(&self) -> Option<&Vector3<f64>> {
        match self.kind {
            GroupKind::SE23 => Some(&self.cols[1]),
            GroupKind::SE3 | GroupKind::T3 => Some(&self.cols[0]),
            GroupKind::SO3 => None,
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.kind.matrix_size();
        let mut m = DMatrix::identity(n, n);
        m.view_mut((0, 0), (3, 3)).copy_from(&self.rot);
        for k in 0..self.kind.columns() {
            m.view_mut((0, 3 + k), (3, 1)).copy_from(&self.cols[k]);
        }
        m
    }

    fn check_kind(&self, other: &GroupElement) -> Result<()> {
        if self.kind != other.kind {
            return Err(Error::InvalidArgument(format!("group kind mismatch: {:?} vs {:?}", self.kind, other.kind)));
        }
        Ok(())
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        self.check_kind(other)?;
        Ok(self.compose_unchecked(other))
    }

    pub(crate) fn compose_unchecked(&self, other: &GroupElement) -> GroupElement {
        let mut cols = [Vector3::zeros(); 2];
        for (k, col) in cols.iter_mut().enumerate().take(self.kind.columns()) {
            *col = self.rot * other.cols[k] + self.cols[k];
        }
        GroupElement { kind: self.kind, rot: self.rot * other.rot, cols }
    }

    /// Inverse using the block structure (`Rᵀ`, `-Rᵀt`).
    pub fn inverse(&self) -> GroupElement {
        let rt = self.rot.transpose();
        let mut cols = [Vector3::zeros(); 2];
        for (k, col) in cols.iter_mut().enumerate().take(self.kind.columns()) {
            *col = -(rt * self.cols[k]);
        }
        GroupElement { kind: self.kind, rot: rt, cols }
    }

    /// Principal logarithm.
    pub fn log(&self) -> Result<TangentVector> {
        let mut coords = DVector::zeros(self.kind.dim());
        let jinv = if self.kind.has_rotation() {
            let w = so3::log(&self.rot)?;
            coords.rows_mut(0, 3).copy_from(&w);
            so3::left_jacobian_inv(&w)
        } else {
            Matrix3::identity()
        };
        let off = self.kind.column_offset();
        for k in 0..self.kind.columns() {
            coords.rows_mut(off + 3 * k, 3).copy_from(&(jinv * self.cols[k]));
        }
        Ok(TangentVector { kind: self.kind, coords })
    }

    /// Rotation angle of the rotation block, in radians.
    pub fn rotation_angle(&self) -> f64 {
        let s = unskew(&(self.rot - self.rot.transpose())).norm() * 0.5;
        s.atan2(0.5 * (self.rot.trace() - 1.0))
    }

    /// Projects the rotation block back onto SO(3).
    pub fn renormalized(&self) -> GroupElement {
        if !self.kind.has_rotation() {
            return self.clone();
        }
        GroupElement { kind: self.kind, rot: orthonormalize(&self.rot), cols: self.cols }
    }

    /// `exp(ξ) · self`, the left perturbation used throughout the filters.
    pub fn perturbed(&self, xi: &TangentVector) -> Result<GroupElement> {
        xi.exp().compose(self)
    }
}

/// Right-invariant error `x̂ · x⁻¹`.
pub fn right_invariant_error(xhat: &GroupElement, x: &GroupElement) -> Result<GroupElement> {
    xhat.compose(&x.inverse())
}

/// Left-invariant error `x⁻¹ · x̂`.
pub fn left_invariant_error(xhat: &GroupElement, x: &GroupElement) -> Result<GroupElement> {
    x.inverse().compose(xhat)
}
