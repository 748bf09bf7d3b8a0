//! Independent reference checks shared by unit, integration and acceptance tests.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use fetchsim::camera::Intrinsics;
use fetchsim::geometry::{Pose2, Pose3};
use fetchsim::grasping::{estimate_normals, generate_candidates, score_candidates, select_grasp, GraspSelection, GraspingConfig};
use fetchsim::navigation::{CellState, CostGrid};
use fetchsim::perception::{PerceptionConfig, TrackEvent, Tracker};
use fetchsim::reconstruction::{reconstruct, scan_views, ReconstructionConfig};
use fetchsim::rng::{stream, Stream};
use fetchsim::sensors::{render_depth, silhouette_bbox, DepthImage, Detection, LidarConfig};
use fetchsim::world::{Bounds, RobotModel, SceneObject, Shape, Table, WorldModel};
use nalgebra::{UnitQuaternion, Vector2, Vector3};

/// Outward normal of a primitive at a point on (or very near) its surface,
/// from the closed-form geometry of each shape.
pub fn primitive_normal(obj: &SceneObject, world_point: &Vector3<f64>) -> Vector3<f64> {
    let p = obj.pose.inverse_transform_point(world_point);
    let local = match obj.shape {
        Shape::Box { size } => {
            // the face whose plane the point is closest to
            let mut best = (f64::INFINITY, Vector3::x());
            for axis in 0..3 {
                let half = size[axis] / 2.0;
                let gap = (p[axis].abs() - half).abs();
                if gap < best.0 {
                    let mut n = Vector3::zeros();
                    n[axis] = p[axis].signum();
                    best = (gap, n);
                }
            }
            best.1
        }
        Shape::Cylinder { radius, length } => {
            let side_gap = (p.x.hypot(p.y) - radius).abs();
            let cap_gap = (p.z.abs() - length / 2.0).abs();
            if cap_gap < side_gap {
                Vector3::new(0.0, 0.0, p.z.signum())
            } else {
                Vector3::new(p.x, p.y, 0.0).normalize()
            }
        }
        Shape::Capsule { radius, length } => {
            let h = (length / 2.0 - radius).max(0.0);
            let core = Vector3::new(0.0, 0.0, p.z.clamp(-h, h));
            (p - core).normalize()
        }
    };
    obj.pose.transform_vector(&local)
}

/// Force-closure-lite check: the closing line through the grasp center enters
/// and leaves the primitive on opposite sides of the center, the width fits
/// the gripper, and both contact normals oppose each other along the closing
/// axis within `angle_max`.
pub fn antipodal_contact_ok(obj: &SceneObject, center: &Vector3<f64>, closing: &Vector3<f64>, max_opening: f64, angle_max: f64) -> bool {
    let b = closing.normalize();
    let Some((t0, t1)) = obj.line_interval(center, &b) else {
        return false;
    };
    if !(t0 < 0.0 && t1 > 0.0 && t1 - t0 <= max_opening) {
        return false;
    }
    let n0 = primitive_normal(obj, &(center + b * t0));
    let n1 = primitive_normal(obj, &(center + b * t1));
    let c = angle_max.cos();
    n1.dot(&b) >= c && n0.dot(&-b) >= c
}

/// Shortest 8-connected path cost by plain Dijkstra. Entering a free cell
/// costs 1, an unknown cell `unknown_cost`, diagonal steps scale by sqrt 2;
/// occupied and inflated cells are impassable. Costs are tracked as exact
/// integer (straight, diagonal) step counts and reported in meters.
pub fn dijkstra_cost(grid: &CostGrid, start: (i64, i64), goal: (i64, i64), unknown_cost: u32) -> Option<f64> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let value = |c: (u64, u64)| c.0 as f64 + c.1 as f64 * std::f64::consts::SQRT_2;
    let entry_cost = |cell: (i64, i64)| -> Option<u64> {
        if cell.0 < 0 || cell.1 < 0 || cell.0 >= grid.width as i64 || cell.1 >= grid.height as i64 {
            return None;
        }
        match grid.cells[cell.1 as usize * grid.width + cell.0 as usize] {
            CellState::Free => Some(1),
            CellState::Unknown => Some(unknown_cost as u64),
            CellState::Occupied | CellState::Inflated => None,
        }
    };
    let mut best: HashMap<(i64, i64), (u64, u64)> = HashMap::new();
    let mut heap = BinaryHeap::new();
    best.insert(start, (0, 0));
    // non-negative f64 values order the same as their bit patterns
    heap.push(Reverse((0f64.to_bits(), start, (0u64, 0u64))));
    while let Some(Reverse((_, cell, cost))) = heap.pop() {
        if best.get(&cell) != Some(&cost) {
            continue;
        }
        if cell == goal {
            return Some(value(cost) * grid.resolution);
        }
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let next = (cell.0 + dx, cell.1 + dy);
                let Some(m) = entry_cost(next) else { continue };
                let cand = if dx != 0 && dy != 0 { (cost.0, cost.1 + m) } else { (cost.0 + m, cost.1) };
                if best.get(&next).is_none_or(|&b| value(cand) < value(b)) {
                    best.insert(next, cand);
                    heap.push(Reverse((value(cand).to_bits(), next, cand)));
                }
            }
        }
    }
    None
}

/// First intersection of a 2D ray with any wall, by direct parametric solve.
fn first_wall_hit(world: &WorldModel, o: Vector2<f64>, d: Vector2<f64>, max_range: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for w in &world.walls {
        let a = Vector2::new(w.a[0], w.a[1]);
        let e = Vector2::new(w.b[0], w.b[1]) - a;
        let den = d.x * e.y - d.y * e.x;
        if den.abs() < 1e-15 {
            continue;
        }
        let ao = a - o;
        let t = (ao.x * e.y - ao.y * e.x) / den;
        let s = (ao.x * d.y - ao.y * d.x) / den;
        if t > 1e-9 && (-1e-12..=1.0 + 1e-12).contains(&s) && t <= max_range && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    best
}

/// Cells that noise-free LiDAR beams from the route actually reach: the cell
/// holding each beam's wall hit, and cells the beam crosses at least two cells
/// short of its end.
#[derive(Debug, Default)]
pub struct BeamCoverage {
    pub hit_cells: BTreeSet<(i64, i64)>,
    pub pass_cells: BTreeSet<(i64, i64)>,
}

pub fn beam_coverage(world: &WorldModel, route: &[Pose2], robot: &RobotModel, lidar: &LidarConfig, origin: (f64, f64), resolution: f64) -> BeamCoverage {
    let cell_of = |p: Vector2<f64>| (((p.x - origin.0) / resolution).floor() as i64, ((p.y - origin.1) / resolution).floor() as i64);
    let mut cov = BeamCoverage::default();
    for pose in route {
        for mount in [robot.lidar_front, robot.lidar_back] {
            let (c, s) = (pose.theta.cos(), pose.theta.sin());
            let sensor = Vector2::new(pose.x + c * mount.x - s * mount.y, pose.y + s * mount.x + c * mount.y);
            let heading = pose.theta + mount.theta;
            for i in 0..lidar.n_beams {
                let rel = -lidar.fov / 2.0 + lidar.fov * i as f64 / (lidar.n_beams - 1) as f64;
                let dir = Vector2::new((heading + rel).cos(), (heading + rel).sin());
                let hit = first_wall_hit(world, sensor, dir, lidar.max_range);
                let free_to = hit.unwrap_or(lidar.max_range) - 2.0 * resolution;
                let mut t = 0.0;
                while t < free_to {
                    cov.pass_cells.insert(cell_of(sensor + dir * t));
                    t += resolution / 4.0;
                }
                if let Some(h) = hit {
                    cov.hit_cells.insert(cell_of(sensor + dir * h));
                }
            }
        }
    }
    cov.pass_cells.retain(|c| !cov.hit_cells.contains(c));
    cov
}

/// Every cell a wall segment passes through, by dense sampling along it.
pub fn rasterize_walls(world: &WorldModel, origin: (f64, f64), resolution: f64) -> BTreeSet<(i64, i64)> {
    let mut cells = BTreeSet::new();
    for w in &world.walls {
        let a = Vector2::new(w.a[0], w.a[1]);
        let b = Vector2::new(w.b[0], w.b[1]);
        let n = ((b - a).norm() / (resolution / 8.0)).ceil() as usize;
        for k in 0..=n {
            let p = a + (b - a) * (k as f64 / n as f64);
            cells.insert((((p.x - origin.0) / resolution).floor() as i64, ((p.y - origin.1) / resolution).floor() as i64));
        }
    }
    cells
}

fn lab(half: f64) -> WorldModel {
    WorldModel::empty(Bounds {
        min: [-half, -half],
        max: [half, half],
    })
}

/// A 2 m square table top at height 0.75, centered on the origin.
pub fn table_world() -> WorldModel {
    let mut w = lab(2.0);
    w.tables.push(Table {
        id: "table".into(),
        min: [-1.0, -1.0],
        max: [1.0, 1.0],
        height: 0.75,
    });
    w
}

/// A sphere of radius `r` floating at `c`, as a capsule with no straight part.
pub fn sphere_world(c: Vector3<f64>, r: f64) -> WorldModel {
    let mut w = lab(2.0);
    w.objects.push(SceneObject {
        id: "ball".into(),
        class_label: "ball".into(),
        shape: Shape::Capsule { radius: r, length: 2.0 * r },
        pose: Pose3::from_translation(c),
    });
    w
}

/// Banana-sized capsule lying on the table, long axis yawed by `yaw`.
pub fn capsule_on_table(yaw: f64) -> (WorldModel, SceneObject) {
    let mut w = table_world();
    let obj = SceneObject {
        id: "banana".into(),
        class_label: "banana".into(),
        shape: Shape::Capsule { radius: 0.018, length: 0.18 },
        pose: Pose3::from_parts(Vector3::new(0.0, 0.0, 0.768), UnitQuaternion::from_euler_angles(0.0, std::f64::consts::FRAC_PI_2, yaw)),
    };
    w.objects.push(obj.clone());
    (w, obj)
}

/// Narrow box standing on the table, yawed by `yaw`.
pub fn box_on_table(yaw: f64) -> (WorldModel, SceneObject) {
    let mut w = table_world();
    let obj = SceneObject {
        id: "box".into(),
        class_label: "box".into(),
        shape: Shape::Box { size: [0.03, 0.1, 0.06] },
        pose: Pose3::from_parts(Vector3::new(0.0, 0.0, 0.78), UnitQuaternion::from_euler_angles(0.0, 0.0, yaw)),
    };
    w.objects.push(obj.clone());
    (w, obj)
}

/// Noise-free depth images from the default four scan views around `center`.
pub fn scan_depths(world: &WorldModel, center: &Vector3<f64>, heading: f64, robot: &RobotModel, cfg: &ReconstructionConfig) -> Vec<DepthImage> {
    let k = robot.wrist_camera.depth_intrinsics();
    scan_views(center, heading, cfg)
        .iter()
        .map(|p| render_depth(world, p, &k, cfg.depth_max, 0.0))
        .collect()
}

/// Largest distance from a point of `from` to its nearest point of `to`.
pub fn one_sided_hausdorff(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> f64 {
    from.iter()
        .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

pub fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (sum / n.max(1) as f64).sqrt()
}

/// Drives a tracker with a scripted stream: a banana 2 m ahead of a camera
/// sliding sideways at 0.5 m/s, exact detections at 2 Hz and camera frames
/// at 15 Hz on the 30 Hz tick. Returns every track event with its tick.
pub fn scripted_track_stream(ticks: u64) -> Vec<(u64, TrackEvent)> {
    let mut world = lab(5.0);
    world.objects.push(SceneObject {
        id: "banana".into(),
        class_label: "banana".into(),
        shape: Shape::Capsule { radius: 0.018, length: 0.18 },
        pose: Pose3::from_parts(Vector3::new(2.0, 0.0, 1.0), UnitQuaternion::from_euler_angles(0.0, std::f64::consts::FRAC_PI_2, 0.0)),
    });
    let k = Intrinsics::default();
    let mut tracker = Tracker::new(PerceptionConfig::default(), "banana");
    let mut rng = stream(0, Stream::Tracker);
    let mut out = Vec::new();
    for tick in 0..ticks {
        let y = 0.5 * tick as f64 / 30.0;
        let cam = Pose3::look_at(Vector3::new(0.0, y, 1.0), Vector3::new(1.0, y, 1.0));
        let mut events = Vec::new();
        let mut touched = Vec::new();
        if tick % 15 == 0 {
            let dets: Vec<Detection> = silhouette_bbox(&world.objects[0], &cam, &k)
                .map(|bbox| Detection {
                    timestamp: tick as f64 / 30.0,
                    class_label: "banana".into(),
                    bbox,
                    confidence: 1.0,
                })
                .into_iter()
                .collect();
            touched = tracker.on_detections(&dets, &world, &cam, &cam, &k, &mut events);
        }
        if tick % 2 == 0 {
            tracker.on_camera_frame(&cam, &cam, &k, &touched, &mut rng, &mut events);
        }
        out.extend(events.into_iter().map(|e| (tick, e)));
    }
    out
}

/// Full manipulation pipeline on a rendered scan of `obj`: the base stands
/// 0.4 m away facing it, the cloud is stitched from the four scan views, and
/// candidates are seeded around the object's true center with `seed`.
pub fn grasp_from_scan(world: &WorldModel, obj: &SceneObject, seed: u64) -> (GraspSelection, Pose2) {
    let robot = RobotModel::default();
    let recon = ReconstructionConfig::default();
    let cfg = GraspingConfig::default();
    let c = obj.pose.translation;
    let base = Pose2::new(c.x - 0.4, c.y, 0.0);
    let depths = scan_depths(world, &c, base.theta, &robot, &recon);
    let cloud = reconstruct(&depths, &c, &recon).expect("object in view");
    let normals = estimate_normals(&cloud, cfg.k_normals).expect("enough points");
    let mut rng = stream(seed, Stream::Grasping);
    let roi = Some((c, cfg.seed_radius));
    let selection = match generate_candidates(&cloud, &normals, &robot.gripper, &cfg, roi, &mut rng) {
        Ok(cands) => select_grasp(&score_candidates(cands, &cloud, &normals, &robot.gripper, cfg.angle_max), &base, &robot.arm),
        Err(_) => GraspSelection::NoFeasibleGrasp,
    };
    (selection, base)
}
