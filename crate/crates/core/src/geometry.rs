//! Planar rigid-body algebra: SO(2) rotations stored as `(cos, sin)` pairs,
//! SE(2) poses, the exponential/logarithm maps and trajectories.
//!
//! Rotations are kept as the two numbers that appear in the matrix
//! `[[c, -s], [s, c]]` so the columns can be copied straight into the lifted
//! semidefinite variable.

use crate::scalar::Real;
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

/// Below this angle magnitude the left Jacobian uses its Taylor expansion.
const SMALL_ANGLE: f64 = 1e-7;

/// Element of SO(2), the matrix `[[c, -s], [s, c]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation2<T> {
    pub c: T,
    pub s: T,
}

impl<T: Real> Rotation2<T> {
    pub fn identity() -> Self {
        Self {
            c: T::one(),
            s: T::zero(),
        }
    }

    pub fn from_angle(angle: T) -> Self {
        Self {
            c: angle.cos(),
            s: angle.sin(),
        }
    }

    /// Builds a rotation from a `(c, s)` pair, rescaling it onto the unit circle.
    ///
    /// Returns `None` when the pair is (numerically) zero.
    pub fn from_cs(c: T, s: T) -> Option<Self> {
        let n = (c * c + s * s).sqrt();
        if n <= T::eps() {
            return None;
        }
        Some(Self { c: c / n, s: s / n })
    }

    /// Angle in `(-pi, pi]`.
    pub fn angle(&self) -> T {
        let a = self.s.atan2(self.c);
        if a <= -T::PI() {
            a + T::TAU()
        } else {
            a
        }
    }

    pub fn matrix(&self) -> Matrix2<T> {
        Matrix2::new(self.c, -self.s, self.s, self.c)
    }

    /// First column `(c, s)`.
    pub fn col1(&self) -> Vector2<T> {
        Vector2::new(self.c, self.s)
    }

    /// Second column `(-s, c)`.
    pub fn col2(&self) -> Vector2<T> {
        Vector2::new(-self.s, self.c)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            c: self.c * other.c - self.s * other.s,
            s: self.s * other.c + self.c * other.s,
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            c: self.c,
            s: -self.s,
        }
    }

    pub fn rotate(&self, v: &Vector2<T>) -> Vector2<T> {
        Vector2::new(self.c * v.x - self.s * v.y, self.s * v.x + self.c * v.y)
    }

    /// Applies the transpose, i.e. the inverse rotation.
    pub fn rotate_inv(&self, v: &Vector2<T>) -> Vector2<T> {
        Vector2::new(self.c * v.x + self.s * v.y, -self.s * v.x + self.c * v.y)
    }

    /// Deviation from the unit circle, `|c^2 + s^2 - 1|`.
    pub fn unit_defect(&self) -> T {
        (self.c * self.c + self.s * self.s - T::one()).abs()
    }

    /// Projects back onto the unit circle.
    pub fn renormalized(&self) -> Self {
        Self::from_cs(self.c, self.s).unwrap_or_else(Self::identity)
    }

    /// Nearest orthogonal matrix to `m` (polar projection) together with the
    /// sign of its determinant.
    ///
    /// When the nearest orthogonal matrix is a reflection the returned rotation
    /// is the nearest proper rotation and the flag is `false`.
    pub fn nearest(m: &Matrix2<T>) -> (Self, bool) {
        // M = a*I + b*J + (reflection part). The rotation part (a, b) gives the
        // closest element of SO(2); the reflection part (p, q) the closest
        // reflection. Whichever component dominates is the polar factor.
        let half = T::lit(0.5);
        let a = (m[(0, 0)] + m[(1, 1)]) * half;
        let b = (m[(1, 0)] - m[(0, 1)]) * half;
        let p = (m[(0, 0)] - m[(1, 1)]) * half;
        let q = (m[(1, 0)] + m[(0, 1)]) * half;
        let rot_norm = (a * a + b * b).sqrt();
        let refl_norm = (p * p + q * q).sqrt();
        let rot = Self::from_cs(a, b).unwrap_or_else(Self::identity);
        (rot, rot_norm >= refl_norm)
    }
}

impl<T: Real> Default for Rotation2<T> {
    fn default() -> Self {
        Self::identity()
    }
}

/// Element of se(2): rotation angle `phi` and translational part `rho`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent2<T: Real> {
    pub phi: T,
    pub rho: Vector2<T>,
}

impl<T: Real> Tangent2<T> {
    pub fn new(phi: T, rho_x: T, rho_y: T) -> Self {
        Self {
            phi,
            rho: Vector2::new(rho_x, rho_y),
        }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }
}

/// Rigid transform `(C, r)`: rotation from body to world and world position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2<T: Real> {
    pub rot: Rotation2<T>,
    pub pos: Vector2<T>,
}

impl<T: Real> Pose2<T> {
    pub fn new(rot: Rotation2<T>, pos: Vector2<T>) -> Self {
        Self { rot, pos }
    }

    pub fn identity() -> Self {
        Self::new(Rotation2::identity(), Vector2::zeros())
    }

    pub fn from_xy_angle(x: T, y: T, angle: T) -> Self {
        Self::new(Rotation2::from_angle(angle), Vector2::new(x, y))
    }

    /// `self * other`: rotations multiply, `pos = self.pos + self.rot * other.pos`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rot: self.rot.mul(&other.rot),
            pos: self.pos + self.rot.rotate(&other.pos),
        }
    }

    pub fn inverse(&self) -> Self {
        let rot = self.rot.inverse();
        Self {
            rot,
            pos: -rot.rotate(&self.pos),
        }
    }

    /// Relative transform `self^{-1} * other`.
    pub fn between(&self, other: &Self) -> Self {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector2<T>) -> Vector2<T> {
        self.pos + self.rot.rotate(p)
    }

    /// Right retraction `C <- C Exp(dphi)`, `r <- r + C drho`.
    pub fn retract(&self, delta: &Tangent2<T>) -> Self {
        Self {
            rot: self.rot.mul(&Rotation2::from_angle(delta.phi)),
            pos: self.pos + self.rot.rotate(&delta.rho),
        }
    }
}

impl<T: Real> Default for Pose2<T> {
    fn default() -> Self {
        Self::identity()
    }
}

/// Left Jacobian of SO(2) acting on translations, `V(phi) = a I + b J`.
fn left_jacobian_coeffs<T: Real>(phi: T) -> (T, T) {
    if phi.abs() < T::lit(SMALL_ANGLE) {
        let phi2 = phi * phi;
        (
            T::one() - phi2 / T::lit(6.0),
            phi * T::lit(0.5) - phi * phi2 / T::lit(24.0),
        )
    } else {
        (phi.sin() / phi, (T::one() - phi.cos()) / phi)
    }
}

/// SE(2) exponential map.
pub fn exp_se2<T: Real>(xi: &Tangent2<T>) -> Pose2<T> {
    let (a, b) = left_jacobian_coeffs(xi.phi);
    let pos = Vector2::new(a * xi.rho.x - b * xi.rho.y, b * xi.rho.x + a * xi.rho.y);
    Pose2::new(Rotation2::from_angle(xi.phi), pos)
}

/// SE(2) logarithm; the returned angle lies in `(-pi, pi]`.
pub fn log_se2<T: Real>(pose: &Pose2<T>) -> Tangent2<T> {
    let phi = pose.rot.angle();
    let (a, b) = left_jacobian_coeffs(phi);
    let det = a * a + b * b;
    let p = pose.pos;
    Tangent2 {
        phi,
        rho: Vector2::new((a * p.x + b * p.y) / det, (-b * p.x + a * p.y) / det),
    }
}

/// Composition `a * b`.
pub fn compose<T: Real>(a: &Pose2<T>, b: &Pose2<T>) -> Pose2<T> {
    a.compose(b)
}

/// Ordered robot poses `T_1 .. T_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Real> {
    pub poses: Vec<Pose2<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(poses: Vec<Pose2<T>>) -> Self {
        Self { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vector2<T>> {
        self.poses.iter().map(|p| &p.pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn exp_identity_and_pure_translation() {
        let id = exp_se2(&Tangent2::<f64>::zero());
        assert_eq!(id, Pose2::identity());
        let t = exp_se2(&Tangent2::new(0.0, 1.0, 2.0));
        assert_eq!(t.rot, Rotation2::identity());
        assert_relative_eq!(t.pos, Vector2::new(1.0, 2.0));
    }

    #[test]
    fn exp_quarter_turn_matches_closed_form() {
        // V(pi/2) (1, 0) = (sin(pi/2)/(pi/2), (1 - cos(pi/2))/(pi/2)) = (2/pi, 2/pi)
        let t = exp_se2(&Tangent2::new(FRAC_PI_2, 1.0, 0.0));
        assert_relative_eq!(t.rot.angle(), FRAC_PI_2, epsilon = 1e-15);
        assert_relative_eq!(t.pos.x, 2.0 / PI, epsilon = 1e-15);
        assert_relative_eq!(t.pos.y, 2.0 / PI, epsilon = 1e-15);
        assert_relative_eq!(t.pos.x, 0.6366, epsilon = 1e-4);
    }

    #[test]
    fn log_examples() {
        let z = log_se2(&Pose2::<f64>::identity());
        assert_eq!(z.phi, 0.0);
        assert_eq!(z.rho, Vector2::zeros());
        let t = log_se2(&Pose2::new(Rotation2::identity(), Vector2::new(3.0, -1.0)));
        assert_eq!(t.phi, 0.0);
        assert_relative_eq!(t.rho, Vector2::new(3.0, -1.0));
        let xi = Tangent2::new(0.7, 0.2, 0.3);
        let back = log_se2(&exp_se2(&xi));
        assert_relative_eq!(back.phi, 0.7, epsilon = 1e-14);
        assert_relative_eq!(back.rho, xi.rho, epsilon = 1e-14);
    }

    #[test]
    fn log_angle_range_is_half_open() {
        let t = Pose2::new(Rotation2 { c: -1.0, s: -0.0 }, Vector2::zeros());
        assert_relative_eq!(log_se2(&t).phi, PI);
    }

    #[test]
    fn small_angle_series_is_continuous() {
        // Across the switch the position moves by about |rho| / 2 * dphi.
        let a = exp_se2(&Tangent2::new(0.99e-7, 1.0, -2.0));
        let b = exp_se2(&Tangent2::new(1.01e-7, 1.0, -2.0));
        assert!((a.pos - b.pos).norm() < 1e-8);
    }

    #[test]
    fn compose_examples() {
        let t = Pose2::from_xy_angle(1.0, -2.0, 0.3);
        assert_eq!(compose(&t, &Pose2::identity()), t);
        assert_eq!(compose(&Pose2::identity(), &t), t);
        let rot90 = Pose2::from_xy_angle(0.0, 0.0, FRAC_PI_2);
        let step = Pose2::new(Rotation2::identity(), Vector2::new(1.0, 0.0));
        let out = compose(&rot90, &step);
        assert_relative_eq!(out.pos, Vector2::new(0.0, 1.0), epsilon = 1e-15);
        assert_relative_eq!(out.rot.angle(), FRAC_PI_2);
    }

    #[test]
    fn long_composition_chain_stays_on_circle() {
        let step = Rotation2::from_angle(0.123_456_789_f64);
        let mut r = Rotation2::identity();
        for k in 0..10_000 {
            r = r.mul(&step);
            if k % 100 == 0 {
                r = r.renormalized();
            }
        }
        assert!(r.unit_defect() < 1e-12);
    }

    #[test]
    fn nearest_rotation_flags_reflections() {
        let (r, proper) = Rotation2::nearest(&Matrix2::new(2.0, -0.1, 0.1, 2.0));
        assert!(proper);
        assert_relative_eq!(r.angle(), (0.1f64).atan2(2.0), epsilon = 1e-12);
        let (_, proper) = Rotation2::nearest(&Matrix2::new(1.0, 0.0, 0.0, -1.0));
        assert!(!proper);
    }

    #[test]
    fn works_in_single_precision() {
        let t = exp_se2(&Tangent2::new(0.5f32, 1.0, 2.0));
        let back = log_se2(&t);
        assert!((back.phi - 0.5).abs() < 1e-6);
        assert!((back.rho - Vector2::new(1.0, 2.0)).norm() < 1e-5);
    }

    fn pose_strategy() -> impl Strategy<Value = Pose2<f64>> {
        (-PI..PI, -10.0..10.0, -10.0..10.0).prop_map(|(a, x, y)| Pose2::from_xy_angle(x, y, a))
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(phi in -(PI - 1e-3)..(PI - 1e-3), x in -20.0..20.0f64, y in -20.0..20.0f64) {
            let xi = Tangent2::new(phi, x, y);
            let back = log_se2(&exp_se2(&xi));
            prop_assert!((back.phi - phi).abs() < 1e-10);
            prop_assert!((back.rho - xi.rho).norm() < 1e-10);
            let t = exp_se2(&xi);
            let again = exp_se2(&log_se2(&t));
            prop_assert!((again.pos - t.pos).norm() < 1e-10);
            prop_assert!((again.rot.c - t.rot.c).abs() < 1e-10 && (again.rot.s - t.rot.s).abs() < 1e-10);
        }

        #[test]
        fn compose_is_associative(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!((l.pos - r.pos).norm() < 1e-12 * (1.0 + l.pos.norm()));
            prop_assert!((l.rot.c - r.rot.c).abs() < 1e-12 && (l.rot.s - r.rot.s).abs() < 1e-12);
        }

        #[test]
        fn between_inverts_compose(a in pose_strategy(), b in pose_strategy()) {
            let d = a.between(&b);
            let b2 = a.compose(&d);
            prop_assert!((b2.pos - b.pos).norm() < 1e-10);
        }
    }
}
