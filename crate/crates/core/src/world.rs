//! World geometry: walls, tables, labeled object primitives and the robot model,
//! plus exact ray queries used as ground truth by every simulated sensor.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::geometry::{Pose2, Pose3, Segment2};

/// Object primitive in its local frame: centered at the origin, long axis along +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Full edge lengths along local x, y, z.
    Box { size: [f64; 3] },
    Cylinder { radius: f64, length: f64 },
    /// `length` is tip to tip, including both hemispherical caps.
    Capsule { radius: f64, length: f64 },
}

impl Shape {
    pub fn dimensions_positive(&self) -> bool {
        match *self {
            Shape::Box { size } => size.iter().all(|&s| s > 0.0),
            Shape::Cylinder { radius, length } => radius > 0.0 && length > 0.0,
            Shape::Capsule { radius, length } => radius > 0.0 && length >= 2.0 * radius,
        }
    }

    /// Line parameter interval `[t0, t1]` where `origin + t·dir` lies inside the shape.
    pub fn line_interval(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64)> {
        match *self {
            Shape::Box { size } => {
                let half = Vector3::new(size[0], size[1], size[2]) / 2.0;
                slab_interval(o, d, &(-half), &half)
            }
            Shape::Cylinder { radius, length } => {
                let side = infinite_cylinder_interval(o, d, radius)?;
                let h = length / 2.0;
                let cap = slab_1d(o.z, d.z, -h, h)?;
                intersect_intervals(side, cap)
            }
            Shape::Capsule { radius, length } => {
                let h = (length / 2.0 - radius).max(0.0);
                let mut acc: Option<(f64, f64)> = None;
                let mut merge = |iv: Option<(f64, f64)>| {
                    if let Some((a, b)) = iv {
                        acc = Some(match acc {
                            Some((x, y)) => (x.min(a), y.max(b)),
                            None => (a, b),
                        });
                    }
                };
                let body = infinite_cylinder_interval(o, d, radius)
                    .and_then(|side| slab_1d(o.z, d.z, -h, h).and_then(|cap| intersect_intervals(side, cap)));
                merge(body);
                merge(sphere_interval(o, d, &Vector3::new(0.0, 0.0, h), radius));
                merge(sphere_interval(o, d, &Vector3::new(0.0, 0.0, -h), radius));
                acc
            }
        }
    }

    /// Lowest z of the shape after rotating it by `pose.rotation`, relative to the pose origin.
    pub fn lowest_z(&self, pose: &Pose3) -> f64 {
        let r = pose.rotation.to_rotation_matrix();
        let m = r.matrix();
        match *self {
            Shape::Box { size } => {
                -(0..3).map(|j| m[(2, j)].abs() * size[j] / 2.0).sum::<f64>()
            }
            Shape::Cylinder { radius, length } => {
                let az = m[(2, 2)].abs().min(1.0);
                -(az * length / 2.0 + radius * (1.0 - az * az).sqrt())
            }
            Shape::Capsule { radius, length } => {
                let az = m[(2, 2)].abs().min(1.0);
                -(az * (length / 2.0 - radius) + radius)
            }
        }
    }

    /// Deterministic surface samples `(point, outward normal)` in the local frame.
    pub fn surface_samples(&self, n: usize) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let n = n.max(6);
        let mut out = Vec::with_capacity(n);
        match *self {
            Shape::Box { size } => {
                let half = Vector3::new(size[0], size[1], size[2]) / 2.0;
                let m = ((n as f64 / 6.0).sqrt().ceil() as usize).max(1);
                for axis in 0..3 {
                    for sign in [1.0, -1.0] {
                        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                        for i in 0..m {
                            for j in 0..m {
                                let mut p = Vector3::zeros();
                                p[axis] = sign * half[axis];
                                p[u] = ((i as f64 + 0.5) / m as f64 * 2.0 - 1.0) * half[u];
                                p[v] = ((j as f64 + 0.5) / m as f64 * 2.0 - 1.0) * half[v];
                                let mut nrm = Vector3::zeros();
                                nrm[axis] = sign;
                                out.push((p, nrm));
                            }
                        }
                    }
                }
            }
            Shape::Cylinder { radius, length } => {
                let around = ((n as f64).sqrt().ceil() as usize).max(4);
                let rings = (n / around).max(1);
                for k in 0..rings {
                    let z = ((k as f64 + 0.5) / rings as f64 - 0.5) * length;
                    for a in 0..around {
                        let phi = 2.0 * PI * a as f64 / around as f64;
                        let nrm = Vector3::new(phi.cos(), phi.sin(), 0.0);
                        out.push((nrm * radius + Vector3::new(0.0, 0.0, z), nrm));
                    }
                }
                for sign in [1.0, -1.0] {
                    out.push((Vector3::new(0.0, 0.0, sign * length / 2.0), Vector3::new(0.0, 0.0, sign)));
                    for a in 0..around {
                        let phi = 2.0 * PI * a as f64 / around as f64;
                        let p = Vector3::new(phi.cos(), phi.sin(), 0.0) * radius * 0.6;
                        out.push((p + Vector3::new(0.0, 0.0, sign * length / 2.0), Vector3::new(0.0, 0.0, sign)));
                    }
                }
            }
            Shape::Capsule { radius, length } => {
                let h = (length / 2.0 - radius).max(0.0);
                let around = ((n as f64).sqrt().ceil() as usize).max(4);
                let rings = (n / (2 * around)).max(1);
                for k in 0..rings {
                    let z = if rings == 1 {
                        0.0
                    } else {
                        (k as f64 / (rings - 1) as f64 - 0.5) * 2.0 * h
                    };
                    for a in 0..around {
                        let phi = 2.0 * PI * a as f64 / around as f64;
                        let nrm = Vector3::new(phi.cos(), phi.sin(), 0.0);
                        out.push((nrm * radius + Vector3::new(0.0, 0.0, z), nrm));
                    }
                }
                let per_cap = (n.saturating_sub(rings * around) / 2).max(4);
                for sign in [1.0, -1.0] {
                    for dir in fibonacci_hemisphere(per_cap) {
                        let nrm = Vector3::new(dir.x, dir.y, sign * dir.z);
                        out.push((nrm * radius + Vector3::new(0.0, 0.0, sign * h), nrm));
                    }
                }
            }
        }
        out
    }
}

fn fibonacci_hemisphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn intersect_intervals(a: (f64, f64), b: (f64, f64)) -> Option<(f64, f64)> {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (lo <= hi).then_some((lo, hi))
}

fn slab_1d(o: f64, d: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if d.abs() < 1e-15 {
        return (o >= lo && o <= hi).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let t1 = (lo - o) / d;
    let t2 = (hi - o) / d;
    Some((t1.min(t2), t1.max(t2)))
}

pub(crate) fn slab_interval(
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    lo: &Vector3<f64>,
    hi: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let mut iv = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        iv = intersect_intervals(iv, slab_1d(o[k], d[k], lo[k], hi[k])?)?;
    }
    Some(iv)
}

fn infinite_cylinder_interval(o: &Vector3<f64>, d: &Vector3<f64>, r: f64) -> Option<(f64, f64)> {
    let a = d.x * d.x + d.y * d.y;
    let c = o.x * o.x + o.y * o.y - r * r;
    if a < 1e-18 {
        return (c <= 0.0).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let b = o.x * d.x + o.y * d.y;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((-b - s) / a, (-b + s) / a))
}

fn sphere_interval(o: &Vector3<f64>, d: &Vector3<f64>, center: &Vector3<f64>, r: f64) -> Option<(f64, f64)> {
    let oc = o - center;
    let a = d.norm_squared();
    let b = oc.dot(d);
    let c = oc.norm_squared() - r * r;
    let disc = b * b - a * c;
    if disc < 0.0 || a == 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((-b - s) / a, (-b + s) / a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub class_label: String,
    pub shape: Shape,
    pub pose: Pose3,
}

impl SceneObject {
    /// Line interval in world coordinates (same parameterization as the query line).
    pub fn line_interval(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let o = self.pose.inverse_transform_point(origin);
        let d = self.pose.rotation.inverse() * dir;
        self.shape.line_interval(&o, &d)
    }

    pub fn lowest_z(&self) -> f64 {
        self.pose.translation.z + self.shape.lowest_z(&self.pose)
    }

    /// World-frame surface samples with outward normals.
    pub fn surface_samples(&self, n: usize) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        self.shape
            .surface_samples(n)
            .into_iter()
            .map(|(p, nrm)| (self.pose.transform_point(&p), self.pose.transform_vector(&nrm)))
            .collect()
    }
}

/// Table: an axis-aligned footprint with a top at `height`. Solid in 3D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub id: String,
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub height: f64,
}

impl Table {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    pub fn edges(&self) -> [Segment2; 4] {
        let (a, b) = (self.min, self.max);
        [
            Segment2::new([a[0], a[1]], [b[0], a[1]]),
            Segment2::new([b[0], a[1]], [b[0], b[1]]),
            Segment2::new([b[0], b[1]], [a[0], b[1]]),
            Segment2::new([a[0], b[1]], [a[0], a[1]]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

fn default_wall_height() -> f64 {
    2.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub bounds: Bounds,
    #[serde(default = "default_wall_height")]
    pub wall_height: f64,
    /// Whether table footprints block the ankle-height LiDAR plane.
    #[serde(default)]
    pub tables_opaque_2d: bool,
    #[serde(default)]
    pub walls: Vec<Segment2>,
    #[serde(default)]
    pub tables: Vec<Table>,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
}

/// What a 3D ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitTarget {
    Structure,
    /// Index into `WorldModel::objects`.
    Object(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit3 {
    pub distance: f64,
    pub target: HitTarget,
}

impl WorldModel {
    pub fn empty(bounds: Bounds) -> Self {
        Self {
            bounds,
            wall_height: default_wall_height(),
            tables_opaque_2d: false,
            walls: Vec::new(),
            tables: Vec::new(),
            objects: Vec::new(),
        }
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    /// Height of whatever supports a point at (x, y): the highest table top
    /// containing it, or the floor.
    pub fn support_height(&self, x: f64, y: f64) -> f64 {
        self.tables
            .iter()
            .filter(|t| t.contains_xy(x, y))
            .map(|t| t.height)
            .fold(0.0, f64::max)
    }

    /// Nearest hit of a planar ray against walls (and table footprints when opaque).
    pub fn raycast_2d(&self, origin: Vector2<f64>, dir: Vector2<f64>, max_range: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        let mut consider = |seg: &Segment2| {
            if let Some(t) = seg.intersect_ray(origin, dir) {
                if t <= max_range && best.is_none_or(|b| t < b) {
                    best = Some(t);
                }
            }
        };
        self.walls.iter().for_each(&mut consider);
        if self.tables_opaque_2d {
            for table in &self.tables {
                table.edges().iter().for_each(&mut consider);
            }
        }
        best
    }

    /// Nearest hit among objects, table boxes and walls extruded to `wall_height`.
    pub fn raycast_3d(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<Hit3> {
        const EPS: f64 = 1e-9;
        let mut best: Option<Hit3> = None;
        let mut offer = |t: f64, target: HitTarget| {
            if t > EPS && t <= max_range && best.is_none_or(|b| t < b.distance) {
                best = Some(Hit3 { distance: t, target });
            }
        };
        for wall in &self.walls {
            if let Some(t) = self.wall_hit(wall, origin, dir) {
                offer(t, HitTarget::Structure);
            }
        }
        for table in &self.tables {
            let lo = Vector3::new(table.min[0], table.min[1], 0.0);
            let hi = Vector3::new(table.max[0], table.max[1], table.height);
            if let Some((t0, _)) = slab_interval(origin, dir, &lo, &hi) {
                offer(t0, HitTarget::Structure);
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if let Some((t0, _)) = obj.line_interval(origin, dir) {
                offer(t0, HitTarget::Object(i));
            }
        }
        best
    }

    fn wall_hit(&self, wall: &Segment2, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let dxy = Vector2::new(d.x, d.y);
        if dxy.norm() < 1e-15 {
            return None;
        }
        let t = wall.intersect_ray(Vector2::new(o.x, o.y), dxy)?;
        let z = o.z + t * d.z;
        (0.0..=self.wall_height).contains(&z).then_some(t)
    }
}

/// Arm workspace approximation used for reachability checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmModel {
    pub reach_min: f64,
    pub reach_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Half-angle about the base heading, radians.
    pub workspace_sector: f64,
}

impl Default for ArmModel {
    fn default() -> Self {
        Self {
            reach_min: 0.15,
            reach_max: 0.56,
            z_min: 0.1,
            z_max: 1.1,
            workspace_sector: 100f64.to_radians(),
        }
    }
}

/// Parallel-jaw gripper geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperModel {
    pub max_opening: f64,
    pub finger_depth: f64,
    pub finger_thickness: f64,
    pub hand_width: f64,
}

impl Default for GripperModel {
    fn default() -> Self {
        Self {
            max_opening: 0.05,
            finger_depth: 0.04,
            finger_thickness: 0.01,
            hand_width: 0.04,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WristCamera {
    /// Color stream intrinsics; the depth stream is binned by `depth_downscale`.
    pub intrinsics: Intrinsics,
    pub depth_downscale: u32,
    /// Camera pose in the base frame while driving (search posture).
    pub mount: Pose3,
}

impl Default for WristCamera {
    fn default() -> Self {
        // Forward-looking at 1.1 m, pitched 20° down.
        let pitch = 20f64.to_radians();
        let forward = Vector3::new(pitch.cos(), 0.0, -pitch.sin());
        let eye = Vector3::new(0.25, 0.0, 1.1);
        Self {
            intrinsics: Intrinsics::default(),
            depth_downscale: 8,
            mount: Pose3::look_at(eye, eye + forward),
        }
    }
}

impl WristCamera {
    pub fn depth_intrinsics(&self) -> Intrinsics {
        self.intrinsics.downscaled(self.depth_downscale.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotModel {
    pub footprint_radius: f64,
    pub lidar_front: Pose2,
    pub lidar_back: Pose2,
    pub wrist_camera: WristCamera,
    pub arm: ArmModel,
    pub gripper: GripperModel,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            footprint_radius: 0.35,
            lidar_front: Pose2::new(0.3, 0.0, 0.0),
            lidar_back: Pose2::new(-0.3, 0.0, PI),
            wrist_camera: WristCamera::default(),
            arm: ArmModel::default(),
            gripper: GripperModel::default(),
        }
    }
}
