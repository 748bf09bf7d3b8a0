//! Simulated sensing: the two planar LiDARs, the wrist depth stream and a
//! ground-truth object detector with seeded degradation.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::geometry::{Pose2, Pose3, Rect};
use crate::rng::gaussian;
use crate::world::{HitTarget, RobotModel, SceneObject, Shape, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LidarMount {
    Front,
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub n_beams: usize,
    pub max_range: f64,
    pub noise_sigma: f64,
    pub fov: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            n_beams: 540,
            max_range: 10.0,
            noise_sigma: 0.01,
            fov: 1.5 * PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserScan {
    pub timestamp: f64,
    pub mount: LidarMount,
    /// Sensor pose in the base frame.
    pub mount_pose: Pose2,
    pub angle_min: f64,
    pub angle_max: f64,
    pub n_beams: usize,
    pub max_range: f64,
    pub ranges: Vec<f64>,
}

impl LaserScan {
    pub fn sentinel(&self) -> f64 {
        self.max_range + 1.0
    }

    pub fn is_miss(&self, range: f64) -> bool {
        range > self.max_range
    }

    pub fn beam_angle(&self, i: usize) -> f64 {
        if self.n_beams <= 1 {
            return (self.angle_min + self.angle_max) / 2.0;
        }
        self.angle_min + (self.angle_max - self.angle_min) * i as f64 / (self.n_beams - 1) as f64
    }
}

/// One LiDAR sweep from `base_pose`. Misses carry the sentinel `max_range + 1`.
pub fn simulate_lidar<R: Rng + ?Sized>(
    world: &WorldModel,
    robot: &RobotModel,
    base_pose: &Pose2,
    mount: LidarMount,
    cfg: &LidarConfig,
    rng: &mut R,
    timestamp: f64,
) -> LaserScan {
    let mount_pose = match mount {
        LidarMount::Front => robot.lidar_front,
        LidarMount::Back => robot.lidar_back,
    };
    let sensor = base_pose.compose(&mount_pose);
    let mut scan = LaserScan {
        timestamp,
        mount,
        mount_pose,
        angle_min: -cfg.fov / 2.0,
        angle_max: cfg.fov / 2.0,
        n_beams: cfg.n_beams,
        max_range: cfg.max_range,
        ranges: Vec::with_capacity(cfg.n_beams),
    };
    for i in 0..cfg.n_beams {
        let a = sensor.theta + scan.beam_angle(i);
        let dir = Vector2::new(a.cos(), a.sin());
        let range = match world.raycast_2d(sensor.xy(), dir, cfg.max_range) {
            Some(t) => (t + gaussian(rng, cfg.noise_sigma)).clamp(1e-3, cfg.max_range),
            None => scan.sentinel(),
        };
        scan.ranges.push(range);
    }
    scan
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub timestamp: f64,
    pub camera_pose: Pose3,
    pub intrinsics: Intrinsics,
    /// Row-major z-depths in meters, 0 where invalid.
    pub depths: Vec<f64>,
}

impl DepthImage {
    pub fn width(&self) -> usize {
        self.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height as usize
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.depths[v * self.width() + u]
    }

    /// Camera-frame point for a pixel with valid depth.
    pub fn back_project(&self, u: usize, v: usize) -> Option<Vector3<f64>> {
        let d = self.at(u, v);
        (d > 0.0).then(|| self.intrinsics.ray(u as f64, v as f64) * d)
    }

    /// Every valid pixel lifted into the world frame of `camera_pose`.
    pub fn world_points(&self) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for v in 0..self.height() {
            for u in 0..self.width() {
                if let Some(p) = self.back_project(u, v) {
                    pts.push(self.camera_pose.transform_point(&p));
                }
            }
        }
        pts
    }

    pub fn valid_count(&self) -> usize {
        self.depths.iter().filter(|&&d| d > 0.0).count()
    }
}

/// Pinhole z-depth rendering; surfaces beyond `depth_max` read as invalid.
pub fn render_depth(
    world: &WorldModel,
    camera_pose: &Pose3,
    intrinsics: &Intrinsics,
    depth_max: f64,
    timestamp: f64,
) -> DepthImage {
    let (w, h) = (intrinsics.width as usize, intrinsics.height as usize);
    let mut depths = vec![0.0; w * h];
    let origin = camera_pose.translation;
    for v in 0..h {
        for u in 0..w {
            // ray has unit z, so the hit parameter is the z-depth itself
            let ray = camera_pose.transform_vector(&intrinsics.ray(u as f64, v as f64));
            if let Some(hit) = world.raycast_3d(&origin, &ray, depth_max) {
                depths[v * w + u] = hit.distance;
            }
        }
    }
    DepthImage {
        timestamp,
        camera_pose: *camera_pose,
        intrinsics: *intrinsics,
        depths,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub timestamp: f64,
    pub class_label: String,
    pub bbox: Rect,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub p_miss: f64,
    pub p_fp: f64,
    pub sigma_px: f64,
    pub min_visible_fraction: f64,
    /// Objects farther than this from the camera are not detected.
    pub max_range: f64,
    pub min_box_px: f64,
    pub surface_samples: usize,
    pub vocabulary: Vec<String>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            p_miss: 0.1,
            p_fp: 0.01,
            sigma_px: 2.0,
            min_visible_fraction: 0.3,
            max_range: 2.5,
            min_box_px: 3.0,
            surface_samples: 128,
            vocabulary: ["banana", "cup", "bottle", "book", "chair"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

/// Exact image-space bounding rectangle of an object's silhouette, or `None`
/// when any part of the object lies behind the image plane.
pub fn silhouette_bbox(obj: &SceneObject, camera_pose: &Pose3, k: &Intrinsics) -> Option<Rect> {
    let to_cam = |p: &Vector3<f64>| camera_pose.inverse_transform_point(p);
    let mut rect: Option<Rect> = None;
    let mut include = |r: Rect| {
        rect = Some(match rect {
            Some(a) => Rect::new(a.x_min.min(r.x_min), a.y_min.min(r.y_min), a.x_max.max(r.x_max), a.y_max.max(r.y_max)),
            None => r,
        });
    };
    match obj.shape {
        Shape::Capsule { radius, length } => {
            // x/z is quasi-linear, so over a swept sphere its extremes sit at the end caps.
            let h = (length / 2.0 - radius).max(0.0);
            for s in [h, -h] {
                let c = to_cam(&obj.pose.transform_point(&Vector3::new(0.0, 0.0, s)));
                include(sphere_bbox(&c, radius, k)?);
            }
        }
        Shape::Box { size } => {
            for i in 0..8 {
                let corner = Vector3::new(
                    if i & 1 == 0 { -0.5 } else { 0.5 } * size[0],
                    if i & 2 == 0 { -0.5 } else { 0.5 } * size[1],
                    if i & 4 == 0 { -0.5 } else { 0.5 } * size[2],
                );
                let (u, v) = k.project(&to_cam(&obj.pose.transform_point(&corner)))?;
                include(Rect::new(u, v, u, v));
            }
        }
        Shape::Cylinder { radius, length } => {
            const RIM: usize = 720;
            for s in [length / 2.0, -length / 2.0] {
                for i in 0..RIM {
                    let phi = 2.0 * PI * i as f64 / RIM as f64;
                    let p = Vector3::new(radius * phi.cos(), radius * phi.sin(), s);
                    let (u, v) = k.project(&to_cam(&obj.pose.transform_point(&p)))?;
                    include(Rect::new(u, v, u, v));
                }
            }
        }
    }
    rect
}

/// Projected extent of a sphere from its tangent planes through the camera center.
fn sphere_bbox(c: &Vector3<f64>, r: f64, k: &Intrinsics) -> Option<Rect> {
    if c.z - r <= 1e-6 {
        return None;
    }
    let extent = |cx: f64| -> (f64, f64) {
        let a = c.z * c.z - r * r;
        let disc = (cx * cx + c.z * c.z - r * r).max(0.0).sqrt();
        ((cx * c.z - r * disc) / a, (cx * c.z + r * disc) / a)
    };
    let (x0, x1) = extent(c.x);
    let (y0, y1) = extent(c.y);
    Some(Rect::new(k.fx * x0 + k.cx, k.fy * y0 + k.cy, k.fx * x1 + k.cx, k.fy * y1 + k.cy))
}

/// Fraction of camera-facing surface samples that are inside the image and unoccluded.
pub fn visible_fraction(world: &WorldModel, index: usize, camera_pose: &Pose3, k: &Intrinsics, n_samples: usize) -> f64 {
    let obj = &world.objects[index];
    let eye = camera_pose.translation;
    let mut facing = 0usize;
    let mut seen = 0usize;
    for (p, n) in obj.surface_samples(n_samples) {
        let to_eye = eye - p;
        if n.dot(&to_eye) <= 0.0 {
            continue;
        }
        facing += 1;
        let Some((u, v)) = k.project(&camera_pose.inverse_transform_point(&p)) else {
            continue;
        };
        if !k.contains(u, v) {
            continue;
        }
        let dist = to_eye.norm();
        let dir = -to_eye / dist;
        if let Some(hit) = world.raycast_3d(&eye, &dir, dist + 1e-3) {
            if hit.target == HitTarget::Object(index) && hit.distance >= dist - 1e-4 {
                seen += 1;
            }
        }
    }
    if facing == 0 {
        0.0
    } else {
        seen as f64 / facing as f64
    }
}

/// Ground-truth detector with seeded jitter, misses and false positives.
pub fn detect_objects<R: Rng + ?Sized>(
    world: &WorldModel,
    camera_pose: &Pose3,
    k: &Intrinsics,
    cfg: &DetectorConfig,
    rng: &mut R,
    timestamp: f64,
) -> Vec<Detection> {
    let image = k.image_rect();
    let mut out = Vec::new();
    for (i, obj) in world.objects.iter().enumerate() {
        let center_cam = camera_pose.inverse_transform_point(&obj.pose.translation);
        if center_cam.z <= 0.0 || center_cam.norm() > cfg.max_range {
            continue;
        }
        let Some(bbox) = silhouette_bbox(obj, camera_pose, k) else {
            continue;
        };
        let Some(clipped) = bbox.intersection(&image) else {
            continue;
        };
        if clipped.width() < cfg.min_box_px || clipped.height() < cfg.min_box_px / 2.0 {
            continue;
        }
        let fraction = visible_fraction(world, i, camera_pose, k, cfg.surface_samples);
        if fraction < cfg.min_visible_fraction {
            continue;
        }
        if rng.random::<f64>() < cfg.p_miss {
            continue;
        }
        let jittered = jitter_rect(&clipped, cfg.sigma_px, rng).clamp_to_image(&image);
        out.push(Detection {
            timestamp,
            class_label: obj.class_label.clone(),
            bbox: jittered,
            confidence: (0.5 + 0.5 * fraction).min(1.0),
        });
    }
    if !cfg.vocabulary.is_empty() && rng.random::<f64>() < cfg.p_fp {
        let label = cfg.vocabulary[rng.random_range(0..cfg.vocabulary.len())].clone();
        let w = rng.random_range(8.0..48.0);
        let h = rng.random_range(8.0..48.0);
        let x = rng.random_range(image.x_min..image.x_max - w);
        let y = rng.random_range(image.y_min..image.y_max - h);
        out.push(Detection {
            timestamp,
            class_label: label,
            bbox: Rect::new(x, y, x + w, y + h),
            confidence: rng.random_range(0.3..0.6),
        });
    }
    out
}

fn jitter_rect<R: Rng + ?Sized>(r: &Rect, sigma: f64, rng: &mut R) -> Rect {
    let mut a = Rect::new(
        r.x_min + gaussian(rng, sigma),
        r.y_min + gaussian(rng, sigma),
        r.x_max + gaussian(rng, sigma),
        r.y_max + gaussian(rng, sigma),
    );
    if a.x_min > a.x_max {
        std::mem::swap(&mut a.x_min, &mut a.x_max);
    }
    if a.y_min > a.y_max {
        std::mem::swap(&mut a.y_min, &mut a.y_max);
    }
    a
}

trait ClampToImage {
    fn clamp_to_image(&self, image: &Rect) -> Rect;
}

impl ClampToImage for Rect {
    fn clamp_to_image(&self, image: &Rect) -> Rect {
        let mut r = Rect::new(
            self.x_min.clamp(image.x_min, image.x_max),
            self.y_min.clamp(image.y_min, image.y_max),
            self.x_max.clamp(image.x_min, image.x_max),
            self.y_max.clamp(image.y_min, image.y_max),
        );
        // keep a nondegenerate box after clamping
        if r.x_max - r.x_min < 1.0 {
            r.x_max = (r.x_min + 1.0).min(image.x_max);
            r.x_min = r.x_max - 1.0;
        }
        if r.y_max - r.y_min < 1.0 {
            r.y_max = (r.y_min + 1.0).min(image.y_max);
            r.y_min = r.y_max - 1.0;
        }
        r
    }
}
