//! Planar and spatial poses, image rectangles and small vector helpers.

use std::f64::consts::{PI, TAU};

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Wraps an angle into (-π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(TAU) - PI;
    if wrapped <= -PI {
        wrapped + TAU
    } else {
        wrapped
    }
}

/// Smallest signed difference `a - b`, wrapped into (-π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

/// Base pose in the map plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawPose2", into = "RawPose2")]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPose2 {
    x: f64,
    y: f64,
    #[serde(default)]
    theta: f64,
}

impl From<RawPose2> for Pose2 {
    fn from(raw: RawPose2) -> Self {
        Pose2::new(raw.x, raw.y, raw.theta)
    }
}

impl From<Pose2> for RawPose2 {
    fn from(p: Pose2) -> Self {
        RawPose2 {
            x: p.x,
            y: p.y,
            theta: p.theta,
        }
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn xy(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vector2<f64> {
        Vector2::new(self.theta.cos(), self.theta.sin())
    }

    /// Composition `self ∘ local`: `local` is expressed in this pose's frame.
    pub fn compose(&self, local: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
            self.theta + local.theta,
        )
    }

    /// Expresses a world point in this pose's frame.
    pub fn to_local(&self, p: Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        let d = p - self.xy();
        Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.xy() - other.xy()).norm()
    }

    /// The planar base pose lifted into 3D (z = 0, yaw only).
    pub fn to_pose3(&self) -> Pose3 {
        Pose3::from_parts(
            Vector3::new(self.x, self.y, 0.0),
            UnitQuaternion::from_euler_angles(0.0, 0.0, self.theta),
        )
    }
}

/// Rigid 3D pose: translation in meters plus a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3 {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn from_parts(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::from_parts(translation, UnitQuaternion::identity())
    }

    /// Builds a pose from a rotation matrix whose columns are the frame axes.
    pub fn from_axes(translation: Vector3<f64>, x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>) -> Self {
        let m = Matrix3::from_columns(&[x, y, z]);
        let rot = Rotation3::from_matrix_unchecked(m);
        Self::from_parts(translation, UnitQuaternion::from_rotation_matrix(&rot))
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::from_parts(iso.translation.vector, iso.rotation)
    }

    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Self::from_isometry(&(self.isometry() * other.isometry()))
    }

    pub fn inverse(&self) -> Pose3 {
        Self::from_isometry(&self.isometry().inverse())
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.rotation.to_rotation_matrix().matrix().column(i).into_owned()
    }

    pub fn point(&self) -> Point3<f64> {
        Point3::from(self.translation)
    }

    /// Camera-style look-at: +z toward `target`, +x right, +y down (world up is +z).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Pose3 {
        let z = (target - eye).normalize();
        let up = Vector3::z();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            // Looking straight up or down: pick world +x as the image right direction's seed.
            x = z.cross(&Vector3::y());
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Pose3::from_axes(eye, x, y, z)
    }
}

#[derive(Serialize, Deserialize)]
struct RawPose3 {
    translation: [f64; 3],
    /// (w, x, y, z)
    #[serde(default = "identity_quat")]
    rotation: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl Serialize for Pose3 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let q = self.rotation.quaternion();
        RawPose3 {
            translation: [self.translation.x, self.translation.y, self.translation.z],
            rotation: [q.w, q.i, q.j, q.k],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawPose3::deserialize(d)?;
        let [w, i, j, k] = raw.rotation;
        let q = nalgebra::Quaternion::new(w, i, j, k);
        if !(q.norm() > 1e-12) {
            return Err(serde::de::Error::custom("rotation quaternion has zero norm"));
        }
        // already-unit quaternions are kept bit-exact so that files round-trip
        let rotation = if (q.norm() - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        let t = raw.translation;
        Ok(Pose3::from_parts(Vector3::new(t[0], t[1], t[2]), rotation))
    }
}

/// Axis-aligned image rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        );
        r.is_valid().then_some(r)
    }

    pub fn clamp_to(&self, width: f64, height: f64) -> Rect {
        Rect::new(
            self.x_min.clamp(0.0, width),
            self.y_min.clamp(0.0, height),
            self.x_max.clamp(0.0, width),
            self.y_max.clamp(0.0, height),
        )
    }
}

/// 2D segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment2 {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment2 {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Self { a, b }
    }

    pub fn start(&self) -> Vector2<f64> {
        Vector2::new(self.a[0], self.a[1])
    }

    pub fn end(&self) -> Vector2<f64> {
        Vector2::new(self.b[0], self.b[1])
    }

    /// Ray parameter of the first crossing, if any, for a ray `origin + t·dir`, `t > 0`.
    pub fn intersect_ray(&self, origin: Vector2<f64>, dir: Vector2<f64>) -> Option<f64> {
        let p = self.start();
        let e = self.end() - p;
        let denom = cross2(dir, e);
        if denom.abs() < 1e-15 {
            return None;
        }
        let w = p - origin;
        let t = cross2(w, e) / denom;
        let s = cross2(w, dir) / denom;
        if t > 1e-12 && (-1e-12..=1.0 + 1e-12).contains(&s) {
            Some(t)
        } else {
            None
        }
    }

    pub fn distance_to_point(&self, q: Vector2<f64>) -> f64 {
        let p = self.start();
        let e = self.end() - p;
        let len2 = e.norm_squared();
        let s = if len2 > 0.0 {
            ((q - p).dot(&e) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p + e * s - q).norm()
    }
}

pub fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Any unit vector orthogonal to `v`.
pub fn any_orthogonal(v: &Vector3<f64>) -> Vector3<f64> {
    let seed = if v.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    v.cross(&seed).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_wraps_into_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((normalize_angle(TAU + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn compose_and_to_local_are_inverse() {
        let base = Pose2::new(1.0, 2.0, 0.7);
        let local = Pose2::new(0.3, -0.2, 0.1);
        let world = base.compose(&local);
        let back = base.to_local(world.xy());
        assert!((back - local.xy()).norm() < 1e-12);
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vector3::new(0.3, 0.2, 1.0);
        let target = Vector3::new(0.0, 0.0, 0.0);
        let pose = Pose3::look_at(eye, target);
        let z = pose.axis(2);
        assert!((z - (target - eye).normalize()).norm() < 1e-12);
        // image "down" has a negative world-z component
        assert!(pose.axis(1).z < 0.0 || pose.axis(1).z.abs() < 1e-9);
        let straight_down = Pose3::look_at(Vector3::new(0.0, 0.0, 1.0), Vector3::zeros());
        assert!((straight_down.axis(2) + Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn pose3_serde_round_trip() {
        let p = Pose3::from_parts(
            Vector3::new(1.0, -2.0, 0.5),
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
        );
        let s = serde_json::to_string(&p).unwrap();
        let q: Pose3 = serde_json::from_str(&s).unwrap();
        assert!((q.translation - p.translation).norm() < 1e-15);
        assert!(q.rotation.angle_to(&p.rotation) < 1e-12);
    }
}
