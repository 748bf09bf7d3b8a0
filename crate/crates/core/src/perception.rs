//! Image-space object tracking and bearing-only triangulation.
//!
//! Detections arrive at the detector rate and are associated to tracks by IoU.
//! Between detections each track is propagated once per camera frame by
//! re-projecting a provisional 3D anchor, and one bearing ray through the box
//! center is recorded per frame. Once a track has been followed for enough
//! frames its rays are triangulated, exactly once.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Intrinsics;
use crate::geometry::{Pose3, Rect};
use crate::rng::gaussian;
use crate::sensors::Detection;
use crate::world::{HitTarget, WorldModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("triangulation needs at least two observations, got {0}")]
    InsufficientObservations(usize),
    #[error("bearing rays are near-parallel (condition number {0:.3e})")]
    DegenerateBaseline(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub iou_min: f64,
    pub maturity_frames: u32,
    pub tracker_jitter_px: f64,
    /// Consecutive detector cycles without a match before a track is dropped.
    pub max_missed_cycles: u32,
    pub min_baseline_check: bool,
    pub max_condition: f64,
    /// Keep re-triangulating a localized track as new rays arrive.
    pub refine_after_localization: bool,
    /// Per-axis sample count used to estimate a track's depth inside its box.
    pub depth_samples: usize,
    pub depth_max: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.3,
            maturity_frames: 30,
            tracker_jitter_px: 0.5,
            max_missed_cycles: 2,
            min_baseline_check: false,
            max_condition: 1e8,
            refine_after_localization: false,
            depth_samples: 7,
            depth_max: 6.0,
        }
    }
}

pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let Some(inter) = a.intersection(b) else {
        return 0.0;
    };
    let union = a.area() + b.area() - inter.area();
    if union <= 0.0 {
        0.0
    } else {
        (inter.area() / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    Tentative,
    Mature,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Camera pose as believed by the robot when the frame was taken.
    pub camera_pose: Pose3,
    /// Unit world-frame bearing through the box center.
    pub bearing: Vector3<f64>,
}

/// Metric footprint of a track's box around its anchor, used to rescale the
/// box as the camera distance changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub position: Vector3<f64>,
    pub half_width: f64,
    pub half_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub class_label: String,
    pub bbox: Rect,
    pub frames_tracked: u32,
    pub observations: Vec<Observation>,
    pub state: TrackState,
    pub anchor: Option<Anchor>,
    pub missed_cycles: u32,
    pub localized: bool,
}

impl Track {
    pub fn is_live(&self) -> bool {
        self.state != TrackState::Lost
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// (track index, detection index)
    pub matches: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_tracks: Vec<usize>,
}

/// Greedy IoU matching: highest-overlap pairs first, each side used once,
/// classes must agree. Lost tracks never match.
pub fn associate(tracks: &[Track], detections: &[Detection], iou_min: f64) -> Association {
    let mut pairs = Vec::new();
    for (ti, t) in tracks.iter().enumerate().filter(|(_, t)| t.is_live()) {
        for (di, d) in detections.iter().enumerate() {
            if d.class_label != t.class_label {
                continue;
            }
            let o = iou(&t.bbox, &d.bbox);
            if o >= iou_min {
                pairs.push((o, ti, di));
            }
        }
    }
    // stable: equal overlaps keep (track, detection) generation order
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut out = Association::default();
    for (_, ti, di) in pairs {
        if !track_used[ti] && !det_used[di] {
            track_used[ti] = true;
            det_used[di] = true;
            out.matches.push((ti, di));
        }
    }
    out.unmatched_detections = (0..detections.len()).filter(|&i| !det_used[i]).collect();
    out.unmatched_tracks = (0..tracks.len()).filter(|&i| tracks[i].is_live() && !track_used[i]).collect();
    out
}

/// Estimates the 3D anchor behind a box from the depth of the scene inside it.
/// Samples that hit an object primitive are preferred over background.
pub fn estimate_anchor(world: &WorldModel, camera_pose: &Pose3, k: &Intrinsics, bbox: &Rect, samples: usize, depth_max: f64) -> Option<Anchor> {
    let n = samples.max(1);
    let mut on_object = Vec::new();
    let mut any = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let u = bbox.x_min + bbox.width() * (i as f64 + 0.5) / n as f64;
            let v = bbox.y_min + bbox.height() * (j as f64 + 0.5) / n as f64;
            let ray = k.ray(u, v);
            let dir = camera_pose.transform_vector(&ray.normalize());
            if let Some(hit) = world.raycast_3d(&camera_pose.translation, &dir, depth_max) {
                let z = hit.distance / ray.norm();
                any.push(z);
                if matches!(hit.target, HitTarget::Object(_)) {
                    on_object.push(z);
                }
            }
        }
    }
    let depths = if on_object.is_empty() { &mut any } else { &mut on_object };
    if depths.is_empty() {
        return None;
    }
    depths.sort_by(f64::total_cmp);
    let z = depths[depths.len() / 2];
    let (cu, cv) = bbox.center();
    Some(Anchor {
        position: camera_pose.transform_point(&(k.ray(cu, cv) * z)),
        half_width: 0.5 * bbox.width() * z / k.fx,
        half_height: 0.5 * bbox.height() * z / k.fy,
    })
}

/// Unit world-frame bearing through a pixel, for a camera at `pose`.
pub fn pixel_bearing(pose: &Pose3, k: &Intrinsics, u: f64, v: f64) -> Vector3<f64> {
    pose.transform_vector(&k.ray(u, v)).normalize()
}

/// Box the track's anchor would occupy in the given camera, without noise.
pub fn predicted_bbox(track: &Track, camera: &Pose3, k: &Intrinsics) -> Option<Rect> {
    let anchor = track.anchor?;
    let p = camera.inverse_transform_point(&anchor.position);
    let (u, v) = k.project(&p)?;
    let hw = anchor.half_width * k.fx / p.z;
    let hh = anchor.half_height * k.fy / p.z;
    Some(Rect::new(u - hw, v - hh, u + hw, v + hh))
}

/// Re-projects the track's anchor into a new camera frame, adds tracker
/// jitter, and records one bearing observation from the believed camera pose.
/// Returns false (and marks the track lost) when the anchor leaves the image.
pub fn propagate<R: Rng + ?Sized>(
    track: &mut Track,
    true_camera: &Pose3,
    believed_camera: &Pose3,
    k: &Intrinsics,
    jitter_px: f64,
    rng: &mut R,
) -> bool {
    let Some(anchor) = track.anchor else {
        track.state = TrackState::Lost;
        return false;
    };
    let p = true_camera.inverse_transform_point(&anchor.position);
    let Some((u, v)) = k.project(&p) else {
        track.state = TrackState::Lost;
        return false;
    };
    let (u, v) = (u + gaussian(rng, jitter_px), v + gaussian(rng, jitter_px));
    if !k.contains(u, v) {
        track.state = TrackState::Lost;
        return false;
    }
    let hw = anchor.half_width * k.fx / p.z;
    let hh = anchor.half_height * k.fy / p.z;
    track.bbox = Rect::new(u - hw, v - hh, u + hw, v + hh);
    track.frames_tracked += 1;
    track.observations.push(Observation {
        camera_pose: *believed_camera,
        bearing: pixel_bearing(believed_camera, k, u, v),
    });
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEstimate {
    pub class_label: String,
    pub position: Vector3<f64>,
    pub n_rays: usize,
    pub residual_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub position: Vector3<f64>,
    pub residual_rms: f64,
    pub condition: f64,
}

/// Least-squares point closest to all rays (midpoint method).
pub fn triangulate(rays: &[(Vector3<f64>, Vector3<f64>)], baseline_check: Option<f64>) -> Result<Triangulation, PerceptionError> {
    if rays.len() < 2 {
        return Err(PerceptionError::InsufficientObservations(rays.len()));
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    let mut centroid = Vector3::zeros();
    for (c, d) in rays {
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * c;
        centroid += c;
    }
    centroid /= rays.len() as f64;
    let eig = SymmetricEigen::new(a);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min().max(0.0);
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if let Some(limit) = baseline_check {
        if condition > limit {
            return Err(PerceptionError::DegenerateBaseline(condition));
        }
    }
    let position = match a.cholesky() {
        Some(ch) if condition < 1e12 => ch.solve(&b),
        _ => {
            // rank-deficient: minimum-norm correction around the ray origins
            let tol = lmax * 1e-12;
            let mut pinv = Matrix3::zeros();
            for i in 0..3 {
                let l = eig.eigenvalues[i];
                if l > tol {
                    let v = eig.eigenvectors.column(i);
                    pinv += v * v.transpose() / l;
                }
            }
            centroid + pinv * (b - a * centroid)
        }
    };
    let sq: f64 = rays
        .iter()
        .map(|(c, d)| {
            let r = position - c;
            (r - d * d.dot(&r)).norm_squared()
        })
        .sum();
    Ok(Triangulation {
        position,
        residual_rms: (sq / rays.len() as f64).sqrt(),
        condition,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Localization {
    NotReady,
    Estimate(ObjectEstimate),
    AlreadyLocalized,
}

/// Triangulates a track once it has been followed for `maturity_frames`.
pub fn maybe_localize_target(track: &mut Track, cfg: &PerceptionConfig) -> Result<Localization, PerceptionError> {
    if track.frames_tracked < cfg.maturity_frames {
        return Ok(Localization::NotReady);
    }
    if track.localized && !cfg.refine_after_localization {
        return Ok(Localization::AlreadyLocalized);
    }
    let rays: Vec<_> = track.observations.iter().map(|o| (o.camera_pose.translation, o.bearing)).collect();
    let check = cfg.min_baseline_check.then_some(cfg.max_condition);
    let tri = triangulate(&rays, check)?;
    track.localized = true;
    Ok(Localization::Estimate(ObjectEstimate {
        class_label: track.class_label.clone(),
        position: tri.position,
        n_rays: rays.len(),
        residual_rms: tri.residual_rms,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackEventKind {
    Spawn,
    Match,
    Mature,
    Lost,
    Triangulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEvent {
    pub kind: TrackEventKind,
    pub track_id: u64,
    pub frames: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<ObjectEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Track store for one target class. Single writer: the mission loop.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub cfg: PerceptionConfig,
    pub target_class: String,
    pub tracks: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(cfg: PerceptionConfig, target_class: impl Into<String>) -> Self {
        Self {
            cfg,
            target_class: target_class.into(),
            tracks: Vec::new(),
            next_id: 1,
        }
    }

    fn event(kind: TrackEventKind, t: &Track) -> TrackEvent {
        TrackEvent {
            kind,
            track_id: t.id,
            frames: t.frames_tracked,
            estimate: None,
            error: None,
        }
    }

    /// Detector cycle: match, spawn, and age out unmatched tracks. Returns the
    /// ids of tracks that were spawned or refreshed during this cycle.
    #[allow(clippy::too_many_arguments)]
    pub fn on_detections(
        &mut self,
        detections: &[Detection],
        world: &WorldModel,
        true_camera: &Pose3,
        believed_camera: &Pose3,
        k: &Intrinsics,
        events: &mut Vec<TrackEvent>,
    ) -> Vec<u64> {
        let relevant: Vec<Detection> = detections.iter().filter(|d| d.class_label == self.target_class).cloned().collect();
        // detector frames need not coincide with camera frames, so boxes are
        // brought up to the detection frame before matching
        let predicted: Vec<Track> = self
            .tracks
            .iter()
            .map(|t| {
                let mut p = t.clone();
                if let Some(b) = predicted_bbox(t, true_camera, k) {
                    p.bbox = b;
                }
                p
            })
            .collect();
        let assoc = associate(&predicted, &relevant, self.cfg.iou_min);
        let mut touched = Vec::new();
        for &(ti, di) in &assoc.matches {
            let bbox = relevant[di].bbox;
            let anchor = estimate_anchor(world, true_camera, k, &bbox, self.cfg.depth_samples, self.cfg.depth_max);
            let t = &mut self.tracks[ti];
            t.bbox = bbox;
            if anchor.is_some() {
                t.anchor = anchor;
            }
            t.missed_cycles = 0;
            touched.push(t.id);
            events.push(Self::event(TrackEventKind::Match, t));
        }
        for &ti in &assoc.unmatched_tracks {
            let t = &mut self.tracks[ti];
            t.missed_cycles += 1;
            if t.missed_cycles >= self.cfg.max_missed_cycles {
                t.state = TrackState::Lost;
                events.push(Self::event(TrackEventKind::Lost, t));
            }
        }
        for &di in &assoc.unmatched_detections {
            let bbox = relevant[di].bbox;
            let (u, v) = bbox.center();
            let track = Track {
                id: self.next_id,
                class_label: self.target_class.clone(),
                bbox,
                frames_tracked: 1,
                observations: vec![Observation {
                    camera_pose: *believed_camera,
                    bearing: pixel_bearing(believed_camera, k, u, v),
                }],
                state: TrackState::Tentative,
                anchor: estimate_anchor(world, true_camera, k, &bbox, self.cfg.depth_samples, self.cfg.depth_max),
                missed_cycles: 0,
                localized: false,
            };
            self.next_id += 1;
            touched.push(track.id);
            events.push(Self::event(TrackEventKind::Spawn, &track));
            self.tracks.push(track);
        }
        self.tracks.retain(|t| t.is_live());
        touched
    }

    /// Camera frame: propagate every live track except those spawned in this
    /// same tick, then promote and triangulate. Returns the first estimate produced.
    #[allow(clippy::too_many_arguments)]
    pub fn on_camera_frame<R: Rng + ?Sized>(
        &mut self,
        true_camera: &Pose3,
        believed_camera: &Pose3,
        k: &Intrinsics,
        skip_ids: &[u64],
        rng: &mut R,
        events: &mut Vec<TrackEvent>,
    ) -> Option<ObjectEstimate> {
        let mut result = None;
        for t in self.tracks.iter_mut() {
            let spawned_now = skip_ids.contains(&t.id) && t.frames_tracked == 1 && t.observations.len() == 1;
            if !spawned_now && !propagate(t, true_camera, believed_camera, k, self.cfg.tracker_jitter_px, rng) {
                events.push(Self::event(TrackEventKind::Lost, t));
                continue;
            }
            if t.state == TrackState::Tentative && t.frames_tracked >= self.cfg.maturity_frames {
                t.state = TrackState::Mature;
                events.push(Self::event(TrackEventKind::Mature, t));
            }
            match maybe_localize_target(t, &self.cfg) {
                Ok(Localization::Estimate(est)) => {
                    let mut ev = Self::event(TrackEventKind::Triangulated, t);
                    ev.estimate = Some(est.clone());
                    events.push(ev);
                    result.get_or_insert(est);
                }
                Ok(_) => {}
                Err(e) => {
                    let mut ev = Self::event(TrackEventKind::Triangulated, t);
                    ev.error = Some(e.to_string());
                    events.push(ev);
                }
            }
        }
        self.tracks.retain(|t| t.is_live());
        result
    }
}
