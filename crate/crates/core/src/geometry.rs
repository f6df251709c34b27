//! Planar rigid-body geometry: SE(2) poses, points and angle arithmetic.
//!
//! Every frame in the crate is right-handed with angles measured
//! counterclockwise. Headings are kept in the half-open interval `[-π, π)`.

use core::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `[-π, π)`.
///
/// Fails on non-finite input.
pub fn wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap(a))
}

/// Infallible wrap for values already known to be finite.
#[inline]
pub(crate) fn wrap(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let mut r = a - TAU * libm::floor((a + PI) / TAU);
    // floor can land exactly on the upper bound through rounding
    if r >= PI {
        r -= TAU;
    }
    if r < -PI {
        r = -PI;
    }
    r
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        libm::hypot(self.x, self.y)
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }

    /// Direction of the point seen from the origin.
    pub fn angle(&self) -> f64 {
        libm::atan2(self.y, self.x)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Rigid transform in the plane. `heading` is always stored wrapped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub const IDENTITY: Pose2D = Pose2D { x: 0.0, y: 0.0, heading: 0.0 };

    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: wrap(heading) }
    }

    pub fn translation(&self) -> Point2D {
        Point2D::new(self.x, self.y)
    }

    /// SE(2) composition `self ∘ other`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = libm::sincos(self.heading);
        Pose2D::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.heading + other.heading,
        )
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = libm::sincos(self.heading);
        Pose2D::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.heading)
    }

    /// Pose of `to` expressed in the frame of `self`, i.e. `self⁻¹ ∘ to`.
    pub fn relative_to(&self, to: &Pose2D) -> Pose2D {
        relative_pose(self, to)
    }

    /// Maps a point given in this frame into the parent frame.
    pub fn transform_point(&self, p: &Point2D) -> Point2D {
        let (s, c) = libm::sincos(self.heading);
        Point2D::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    /// Maps a point given in the parent frame into this frame.
    pub fn inverse_transform_point(&self, p: &Point2D) -> Point2D {
        let (s, c) = libm::sincos(self.heading);
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Point2D::new(c * dx + s * dy, -s * dx + c * dy)
    }

    /// Reflection about the x axis of the parent frame.
    pub fn mirrored(&self) -> Pose2D {
        Pose2D::new(self.x, -self.y, -self.heading)
    }

    /// Linear interpolation of translation, shortest-arc interpolation of heading.
    pub fn interpolate(&self, other: &Pose2D, t: f64) -> Pose2D {
        let dh = wrap(other.heading - self.heading);
        Pose2D::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
            self.heading + dh * t,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }
}

pub fn compose(a: &Pose2D, b: &Pose2D) -> Pose2D {
    a.compose(b)
}

/// `inverse(from) ∘ to`: where `to` sits when seen from `from`.
pub fn relative_pose(from: &Pose2D, to: &Pose2D) -> Pose2D {
    from.inverse().compose(to)
}

pub fn transform_point(frame: &Pose2D, p: &Point2D) -> Point2D {
    frame.transform_point(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;
    use proptest::prelude::*;

    fn close(a: &Pose2D, b: &Pose2D, tol: f64) -> bool {
        (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol && wrap(a.heading - b.heading).abs() <= tol
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert!((wrap_angle(3.0 * PI / 2.0).unwrap() + FRAC_PI_2).abs() < 1e-15);
        assert_eq!(wrap_angle(PI).unwrap(), -PI);
        assert_eq!(wrap_angle(-PI).unwrap(), -PI);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn compose_examples() {
        let p = Pose2D::new(1.5, -2.0, 0.3);
        assert_eq!(Pose2D::IDENTITY.compose(&p), p);
        assert_eq!(
            Pose2D::new(1.0, 0.0, 0.0).compose(&Pose2D::new(1.0, 0.0, 0.0)),
            Pose2D::new(2.0, 0.0, 0.0)
        );
        let r = Pose2D::new(0.0, 0.0, FRAC_PI_2).compose(&Pose2D::new(1.0, 0.0, 0.0));
        assert!(close(&r, &Pose2D::new(0.0, 1.0, FRAC_PI_2), 1e-15));
    }

    #[test]
    fn relative_pose_examples() {
        let p = Pose2D::new(0.7, 3.1, -2.0);
        assert!(close(&relative_pose(&p, &p), &Pose2D::IDENTITY, 1e-15));
        assert_eq!(
            relative_pose(&Pose2D::IDENTITY, &Pose2D::new(2.0, 0.0, 0.0)),
            Pose2D::new(2.0, 0.0, 0.0)
        );
        let r = relative_pose(&Pose2D::new(0.0, 0.0, FRAC_PI_2), &Pose2D::new(0.0, 1.0, FRAC_PI_2));
        assert!(close(&r, &Pose2D::new(1.0, 0.0, 0.0), 1e-15));
    }

    #[test]
    fn transform_point_examples() {
        let q = transform_point(&Pose2D::IDENTITY, &Point2D::new(3.0, 4.0));
        assert_eq!(q, Point2D::new(3.0, 4.0));
        let q = transform_point(&Pose2D::new(1.0, 0.0, 0.0), &Point2D::new(3.0, 0.0));
        assert_eq!(q, Point2D::new(4.0, 0.0));
        let q = transform_point(&Pose2D::new(0.0, 0.0, FRAC_PI_2), &Point2D::new(1.0, 0.0));
        assert!(q.distance(&Point2D::new(0.0, 1.0)) < 1e-15);
    }

    #[test]
    fn interpolation_takes_the_short_arc() {
        let a = Pose2D::new(0.0, 0.0, 3.0);
        let b = Pose2D::new(2.0, 0.0, -3.0);
        let m = a.interpolate(&b, 0.5);
        assert!((m.x - 1.0).abs() < 1e-15);
        assert!(wrap(m.heading - PI).abs() < 1e-12);
    }

    fn pose() -> impl Strategy<Value = Pose2D> {
        (-50.0..50.0f64, -50.0..50.0f64, -10.0..10.0f64).prop_map(|(x, y, h)| Pose2D::new(x, y, h))
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_congruent(a in -1e4..1e4f64) {
            let w = wrap_angle(a).unwrap();
            prop_assert!((-PI..PI).contains(&w));
            prop_assert_eq!(wrap_angle(w).unwrap(), w);
            let k = (a - w) / TAU;
            prop_assert!((k - libm::round(k)).abs() < 1e-9);
        }

        #[test]
        fn compose_with_inverse_is_identity(p in pose()) {
            prop_assert!(close(&p.compose(&p.inverse()), &Pose2D::IDENTITY, 1e-12));
        }

        #[test]
        fn relative_pose_recomposes(a in pose(), b in pose()) {
            prop_assert!(close(&a.compose(&relative_pose(&a, &b)), &b, 1e-10));
        }

        #[test]
        fn transforms_preserve_distance(f in pose(), ax in -20.0..20.0f64, ay in -20.0..20.0f64,
                                        bx in -20.0..20.0f64, by in -20.0..20.0f64) {
            let a = Point2D::new(ax, ay);
            let b = Point2D::new(bx, by);
            let d0 = a.distance(&b);
            let d1 = f.transform_point(&a).distance(&f.transform_point(&b));
            prop_assert!((d0 - d1).abs() <= 1e-12);
            let back = f.inverse_transform_point(&f.transform_point(&a));
            prop_assert!(back.distance(&a) <= 1e-12);
        }
    }
}
