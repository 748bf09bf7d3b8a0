//! Antipodal grasp candidates on a reconstructed point cloud: normals, Darboux
//! frames, gripper-volume tests, geometric scoring, reachability and the
//! open-loop execution check.
//!
//! Gripper frame: x is the approach direction, y the closing direction between
//! the fingers, z = x × y. The origin sits at the center of the closing region.

use std::fmt::Write as _;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff, any_orthogonal, Pose2, Pose3};
use crate::reconstruction::PointCloud;
use crate::spatial::PointIndex;
use crate::world::{ArmModel, GripperModel, WorldModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraspError {
    #[error("normal estimation needs at least {k} points, cloud has {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("no seed produced a valid grasp candidate")]
    NoCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspingConfig {
    pub n_samples: usize,
    /// Minimum number of cloud points inside the closing region.
    pub n_min: usize,
    /// Maximum angle between a contact normal and the closing axis, radians.
    pub angle_max: f64,
    pub k_normals: usize,
    pub slide_step: f64,
    /// Clearance kept between the object and each finger.
    pub aperture_margin: f64,
    /// Seeds are drawn only within this distance of the object estimate.
    pub seed_radius: f64,
    /// How far past the seed surface the fingertips must reach.
    pub min_engagement: f64,
}

impl Default for GraspingConfig {
    fn default() -> Self {
        Self {
            n_samples: 200,
            n_min: 10,
            angle_max: 30f64.to_radians(),
            k_normals: 20,
            slide_step: 0.001,
            aperture_margin: 0.003,
            seed_radius: 0.12,
            min_engagement: 0.015,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub pose: Pose3,
    pub opening: f64,
    pub score: f64,
}

impl GraspCandidate {
    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation
    }

    pub fn approach(&self) -> Vector3<f64> {
        self.pose.axis(0)
    }

    pub fn closing(&self) -> Vector3<f64> {
        self.pose.axis(1)
    }

    fn frame(&self) -> GripperFrame {
        GripperFrame {
            origin: self.center(),
            approach: self.approach(),
            closing: self.closing(),
            hand: self.pose.axis(2),
        }
    }
}

pub fn candidates_to_csv(candidates: &[GraspCandidate]) -> String {
    let mut s = String::from("x,y,z,qw,qx,qy,qz,opening,score\n");
    for c in candidates {
        let t = c.pose.translation;
        let q = c.pose.rotation.quaternion();
        let _ = writeln!(
            s,
            "{:.6},{:.6},{:.6},{:.9},{:.9},{:.9},{:.9},{:.6},{:.6}",
            t.x, t.y, t.z, q.w, q.i, q.j, q.k, c.opening, c.score
        );
    }
    s
}

/// PCA normals from the `k` nearest neighbours of each point, oriented toward
/// the camera that saw the point when known, else toward the viewpoint centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<Vec<Vector3<f64>>, GraspError> {
    let n = cloud.len();
    if k < 3 || n < k {
        return Err(GraspError::TooFewPoints { n, k: k.max(3) });
    }
    let index = PointIndex::new(&cloud.points, 0.02);
    let centroid_view = cloud.viewpoint_centroid();
    let normals = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = cloud.points[i];
            let nbrs = index.knn(&p, k);
            let mean = nbrs.iter().map(|&j| cloud.points[j]).sum::<Vector3<f64>>() / nbrs.len() as f64;
            let mut cov = Matrix3::zeros();
            for &j in &nbrs {
                let d = cloud.points[j] - mean;
                cov += d * d.transpose();
            }
            let mut nrm = smallest_eigenvector(&cov);
            let view = match (&cloud.source_view, centroid_view) {
                (Some(src), _) if src.get(i).is_some_and(|&v| v < cloud.viewpoints.len()) => Some(cloud.viewpoints[src[i]]),
                (_, c) => c,
            };
            let toward = view.map(|v| v - p).unwrap_or_else(Vector3::z);
            if nrm.dot(&toward) < 0.0 {
                nrm = -nrm;
            }
            nrm
        })
        .collect();
    Ok(normals)
}

fn smallest_eigenvector(m: &Matrix3<f64>) -> Vector3<f64> {
    let eig = SymmetricEigen::new(*m);
    let i = eig.eigenvalues.imin();
    eig.eigenvectors.column(i).normalize()
}

#[derive(Debug, Clone, Copy)]
struct GripperFrame {
    origin: Vector3<f64>,
    approach: Vector3<f64>,
    closing: Vector3<f64>,
    hand: Vector3<f64>,
}

impl GripperFrame {
    fn local(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        let d = p - self.origin;
        (d.dot(&self.approach), d.dot(&self.closing), d.dot(&self.hand))
    }

    fn with_origin(&self, origin: Vector3<f64>) -> Self {
        Self { origin, ..*self }
    }

    fn pose(&self) -> Pose3 {
        Pose3::from_axes(self.origin, self.approach, self.closing, self.hand)
    }
}

/// Indices of points in the closing region, and whether any point falls in
/// the fingers or the palm-side sweep of the open gripper.
fn gripper_contents(points: &[Vector3<f64>], f: &GripperFrame, g: &GripperModel) -> (Vec<usize>, bool) {
    let half_open = g.max_opening / 2.0;
    let half_depth = g.finger_depth / 2.0;
    let half_hand = g.hand_width / 2.0;
    let mut closing = Vec::new();
    let mut collision = false;
    for (i, p) in points.iter().enumerate() {
        let (a, b, c) = f.local(p);
        if a > half_depth || c.abs() > half_hand || b.abs() > half_open + g.finger_thickness {
            continue;
        }
        if a >= -half_depth && b.abs() <= half_open {
            closing.push(i);
        } else {
            collision = true;
        }
    }
    (closing, collision)
}

/// Seeds → Darboux frames → slide to the first collision-free depth → keep
/// frames holding enough points whose spread fits between the fingers.
pub fn generate_candidates<R: Rng + ?Sized>(
    cloud: &PointCloud,
    normals: &[Vector3<f64>],
    gripper: &GripperModel,
    cfg: &GraspingConfig,
    roi: Option<(Vector3<f64>, f64)>,
    rng: &mut R,
) -> Result<Vec<GraspCandidate>, GraspError> {
    if cloud.is_empty() {
        return Err(GraspError::NoCandidates);
    }
    let pool: Vec<usize> = match roi {
        Some((c, r)) => (0..cloud.len()).filter(|&i| (cloud.points[i] - c).norm() <= r).collect(),
        None => (0..cloud.len()).collect(),
    };
    if pool.is_empty() {
        return Err(GraspError::NoCandidates);
    }
    let seeds: Vec<usize> = (0..cfg.n_samples).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    let index = PointIndex::new(&cloud.points, 0.02);
    let k = cfg.k_normals.min(cloud.len());
    let candidates: Vec<GraspCandidate> = seeds
        .par_iter()
        .filter_map(|&s| candidate_at_seed(cloud, normals, &index, s, k, gripper, cfg))
        .collect();
    if candidates.is_empty() {
        Err(GraspError::NoCandidates)
    } else {
        Ok(candidates)
    }
}

fn candidate_at_seed(
    cloud: &PointCloud,
    normals: &[Vector3<f64>],
    index: &PointIndex,
    seed: usize,
    k: usize,
    gripper: &GripperModel,
    cfg: &GraspingConfig,
) -> Option<GraspCandidate> {
    let p = cloud.points[seed];
    let n = normals[seed];
    let mut m = Matrix3::zeros();
    for j in index.knn(&p, k) {
        m += normals[j] * normals[j].transpose();
    }
    // the axis along which normals vary least
    let mut axis = smallest_eigenvector(&m);
    axis -= n * n.dot(&axis);
    if axis.norm() < 1e-6 {
        axis = any_orthogonal(&n);
    }
    let axis = axis.normalize();
    let closing = n.cross(&axis).normalize();
    let approach = -n;
    let hand = approach.cross(&closing);
    let base = GripperFrame {
        origin: p,
        approach,
        closing,
        hand,
    };

    let half_depth = gripper.finger_depth / 2.0;
    let steps = ((2.0 * half_depth) / cfg.slide_step).round() as i64;
    let mut chosen = None;
    for step in 0..=steps {
        let depth = half_depth - step as f64 * cfg.slide_step;
        let frame = base.with_origin(p + approach * depth);
        let (inside, collision) = gripper_contents(&cloud.points, &frame, gripper);
        if !collision {
            chosen = Some((frame, inside));
            break;
        }
    }
    let (mut frame, mut inside) = chosen?;
    // fingertips that only graze the surface would close on air
    if frame.local(&p).0 > half_depth - cfg.min_engagement || inside.len() < cfg.n_min {
        return None;
    }
    let spread = |idx: &[usize], f: &GripperFrame| {
        let bs: Vec<f64> = idx.iter().map(|&i| f.local(&cloud.points[i]).1).collect();
        let lo = bs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = bs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (lo, hi) = spread(&inside, &frame);
    if hi - lo > gripper.max_opening - 2.0 * cfg.aperture_margin {
        return None;
    }
    // center the fingers on the contents when that stays collision-free
    let shifted = frame.with_origin(frame.origin + closing * (0.5 * (lo + hi)));
    let (inside2, collision2) = gripper_contents(&cloud.points, &shifted, gripper);
    if !collision2 && inside2.len() >= cfg.n_min {
        let (lo2, hi2) = spread(&inside2, &shifted);
        if hi2 - lo2 <= gripper.max_opening - 2.0 * cfg.aperture_margin {
            frame = shifted;
            inside = inside2;
        }
    }
    let (lo, hi) = spread(&inside, &frame);
    Some(GraspCandidate {
        pose: frame.pose(),
        opening: (hi - lo + 2.0 * cfg.aperture_margin).min(gripper.max_opening),
        score: 0.0,
    })
}

/// Antipodal fraction of the closing-region normals times the collision term.
pub fn grasp_score(candidate: &GraspCandidate, cloud: &PointCloud, normals: &[Vector3<f64>], gripper: &GripperModel, angle_max: f64) -> f64 {
    let frame = candidate.frame();
    let (inside, collision) = gripper_contents(&cloud.points, &frame, gripper);
    if collision || inside.is_empty() {
        return 0.0;
    }
    let cos_max = angle_max.cos();
    let (mut pos, mut neg) = (0usize, 0usize);
    for &i in &inside {
        let c = normals[i].dot(&frame.closing);
        if c >= cos_max {
            pos += 1;
        } else if c <= -cos_max {
            neg += 1;
        }
    }
    if pos == 0 || neg == 0 {
        return 0.0;
    }
    (pos + neg) as f64 / inside.len() as f64
}

/// Scores every candidate and sorts descending; ties keep generation order.
pub fn score_candidates(
    candidates: Vec<GraspCandidate>,
    cloud: &PointCloud,
    normals: &[Vector3<f64>],
    gripper: &GripperModel,
    angle_max: f64,
) -> Vec<GraspCandidate> {
    let mut scored: Vec<GraspCandidate> = candidates
        .into_par_iter()
        .map(|mut c| {
            c.score = grasp_score(&c, cloud, normals, gripper, angle_max);
            c
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored
}

pub fn check_reachable(base: &Pose2, grasp: &GraspCandidate, arm: &ArmModel) -> bool {
    let t = grasp.center();
    let (dx, dy) = (t.x - base.x, t.y - base.y);
    let horizontal = dx.hypot(dy);
    let bearing = angle_diff(dy.atan2(dx), base.theta);
    horizontal >= arm.reach_min
        && horizontal <= arm.reach_max
        && t.z >= arm.z_min
        && t.z <= arm.z_max
        && bearing.abs() <= arm.workspace_sector
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraspSelection {
    Selected(GraspCandidate),
    NeedsReposition,
    NoFeasibleGrasp,
}

/// First reachable candidate with a positive score, in ranked order.
pub fn select_grasp(ranked: &[GraspCandidate], base: &Pose2, arm: &ArmModel) -> GraspSelection {
    let viable: Vec<&GraspCandidate> = ranked.iter().filter(|c| c.score > 0.0).collect();
    if viable.is_empty() {
        return GraspSelection::NoFeasibleGrasp;
    }
    match viable.into_iter().find(|c| check_reachable(base, c, arm)) {
        Some(c) => GraspSelection::Selected(*c),
        None => GraspSelection::NeedsReposition,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspOutcome {
    Held,
    Missed,
}

/// Closes the fingers along the closing axis: the object is held when the
/// axis through the grasp center passes through it on both sides and its
/// width there fits inside the open gripper.
pub fn execute_grasp(world: &WorldModel, object: usize, grasp: &GraspCandidate, gripper: &GripperModel) -> GraspOutcome {
    let Some(obj) = world.objects.get(object) else {
        return GraspOutcome::Missed;
    };
    match obj.line_interval(&grasp.center(), &grasp.closing()) {
        Some((t0, t1)) if t0 < 0.0 && t1 > 0.0 && t1 - t0 <= gripper.max_opening => GraspOutcome::Held,
        _ => GraspOutcome::Missed,
    }
}

#[cfg(test)]
#[path = "../tests/support/oracles.rs"]
mod oracles;
