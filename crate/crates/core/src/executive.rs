//! Mission executive: five actions run in a fixed order by a sequential state
//! machine that owns the tick loop, the sensor schedule and the trace.
//!
//! Every tick is atomic: motion is integrated, the clock advances, and then
//! every sensor due on the new tick fires exactly once. Actions make one
//! control decision per tick from what was sensed on it.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geometry::{Pose2, Pose3};
use crate::grasping::{estimate_normals, generate_candidates, score_candidates, select_grasp, execute_grasp, GraspCandidate, GraspOutcome, GraspSelection};
use crate::mapping::{build_map, localize, MappingError, OccupancyGrid};
use crate::navigation::{compute_approach_pose, inflate, integrate_unicycle, plan_global, CostGrid, FollowStatus, PathFollower, VelocityCommand};
use crate::perception::{ObjectEstimate, TrackEvent, Tracker};
use crate::reconstruction::{locate_object, reconstruct, scan_views};
use crate::rng::{stream, SimRng, Stream};
use crate::scenario::Scenario;
use crate::sensors::{detect_objects, render_depth, simulate_lidar, LidarMount};
use crate::world::WorldModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutiveConfig {
    pub tick_rate_hz: u32,
    pub camera_period_ticks: u32,
    pub detector_period_ticks: u32,
    pub lidar_period_ticks: u32,
    /// Seconds per arm move to a scan view.
    pub view_move_time: f64,
    pub grasp_time: f64,
    pub drop_time: f64,
    /// Release point ahead of the base center.
    pub release_distance: f64,
    pub drop_tolerance: f64,
    pub search_laps: u32,
    pub max_repositions: u32,
    /// Sim seconds allowed for any single navigation leg.
    pub leg_timeout: f64,
    /// Displacement used by the grasp fault.
    pub fault_grasp_offset: f64,
}

impl Default for ExecutiveConfig {
    fn default() -> Self {
        Self {
            tick_rate_hz: 30,
            camera_period_ticks: 2,
            detector_period_ticks: 15,
            lidar_period_ticks: 3,
            view_move_time: 2.0,
            grasp_time: 3.0,
            drop_time: 3.0,
            release_distance: 0.4,
            drop_tolerance: 0.5,
            search_laps: 2,
            max_repositions: 1,
            leg_timeout: 180.0,
            fault_grasp_offset: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Search,
    Approach,
    Scan,
    Grasp,
    Drop,
}

impl ActionKind {
    pub const SEQUENCE: [ActionKind; 5] = [Self::Search, Self::Approach, Self::Scan, Self::Grasp, Self::Drop];

    pub fn name(self) -> &'static str {
        match self {
            Self::Search => "search",
            Self::Approach => "approach",
            Self::Scan => "scan",
            Self::Grasp => "grasp",
            Self::Drop => "drop",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::SEQUENCE
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown action `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Pending,
    Active,
    Succeeded,
    Aborted,
    Preempted,
}

impl ActionStatus {
    pub fn can_become(self, next: ActionStatus) -> bool {
        use ActionStatus::*;
        matches!((self, next), (Pending, Active) | (Active, Succeeded | Aborted | Preempted))
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Succeeded | Self::Aborted | Self::Preempted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal status transition {from:?} -> {to:?}")]
pub struct IllegalTransition {
    pub from: ActionStatus,
    pub to: ActionStatus,
}

/// Goal handle of one action server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionHandle {
    pub kind: ActionKind,
    pub status: ActionStatus,
    pub activated_tick: u64,
}

impl ActionHandle {
    pub fn new(kind: ActionKind) -> Self {
        Self {
            kind,
            status: ActionStatus::Pending,
            activated_tick: 0,
        }
    }

    pub fn transition(&mut self, to: ActionStatus) -> Result<(), IllegalTransition> {
        if !self.status.can_become(to) {
            return Err(IllegalTransition { from: self.status, to });
        }
        self.status = to;
        Ok(())
    }
}

/// Injected failure for testing the no-recovery contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Detector output is discarded.
    Search,
    /// A phantom obstacle appears on every approach path.
    Approach,
    /// Depth frames come back empty.
    Scan,
    /// The executed grasp is pulled back along the approach axis.
    Grasp,
    /// The drop location is walled off.
    Drop,
    /// The object slips out of the gripper halfway to the drop location.
    LoseObject,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "search" => Self::Search,
            "approach" => Self::Approach,
            "scan" => Self::Scan,
            "grasp" => Self::Grasp,
            "drop" => Self::Drop,
            "lose-object" => Self::LoseObject,
            _ => return Err(format!("unknown fault `{s}` (search, approach, scan, grasp, drop, lose-object)")),
        })
    }
}

/// A preempt request delivered once `action` has been active for `after_ticks`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preempt {
    pub action: ActionKind,
    pub after_ticks: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MissionOptions {
    pub fault: Option<Fault>,
    pub preempt: Option<Preempt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MissionOutcome {
    Succeeded,
    Failed { at_action: ActionKind, reason: String },
    Preempted { at_action: ActionKind },
    /// Every action succeeded but the referee found the object away from the drop pose.
    NotDelivered,
}

impl MissionOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Self::Succeeded)
    }

    pub fn label(&self) -> String {
        match self {
            Self::Succeeded => "succeeded".into(),
            Self::Failed { at_action, .. } => format!("failed({at_action})"),
            Self::Preempted { at_action } => format!("preempted({at_action})"),
            Self::NotDelivered => "not_delivered".into(),
        }
    }
}

/// One trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub tick: u64,
    pub kind: String,
    pub payload: Value,
}

pub fn trace_to_jsonl(trace: &[TraceEvent]) -> String {
    let mut s = String::new();
    for e in trace {
        s.push_str(&serde_json::to_string(e).expect("trace events serialize"));
        s.push('\n');
    }
    s
}

pub fn trace_from_jsonl(text: &str) -> Result<Vec<TraceEvent>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug, Error)]
pub enum ExecutiveError {
    #[error("mapping pass failed: {0}")]
    Mapping(#[from] MappingError),
}

#[derive(Debug, Clone)]
pub struct MissionResult {
    pub outcome: MissionOutcome,
    pub trace: Vec<TraceEvent>,
    pub grid: OccupancyGrid,
    pub final_world: WorldModel,
}

/// Why an action stopped early.
#[derive(Debug, Clone, PartialEq)]
enum Halt {
    Aborted(String),
    Preempted,
}

type Step<T> = Result<T, Halt>;

enum DriveEnd {
    Arrived,
    TargetLocalized,
}

#[derive(Debug, Clone, Copy)]
struct GraspPlan {
    candidate: GraspCandidate,
    /// Believed base pose the candidate was computed against.
    base_believed: Pose2,
}

#[derive(Debug, Clone, Copy)]
struct Held {
    object: usize,
    in_base: Pose3,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    opts: MissionOptions,
    world: WorldModel,
    cost: CostGrid,
    true_pose: Pose2,
    est: Pose2,
    tick: u64,
    rng_lidar: SimRng,
    rng_loc: SimRng,
    rng_det: SimRng,
    rng_track: SimRng,
    rng_grasp: SimRng,
    tracker: Tracker,
    trace: Vec<TraceEvent>,
    /// Arm-held camera pose (true, believed) overriding the driving mount.
    arm_camera: Option<(Pose3, Pose3)>,
    estimate: Option<ObjectEstimate>,
    approach_angle: Option<f64>,
    /// Best candidate position when the last scan found nothing reachable.
    reposition_target: Option<Vector3<f64>>,
    grasp: Option<GraspPlan>,
    held: Option<Held>,
    active: Option<ActionHandle>,
    /// Distance driven during the drop leg, and where the lose-object fault fires.
    drop_progress: Option<(f64, f64)>,
}

fn pose_json(p: &Pose2) -> Value {
    json!({ "x": p.x, "y": p.y, "theta": p.theta })
}

fn vec3_json(v: &Vector3<f64>) -> Value {
    json!([v.x, v.y, v.z])
}

impl<'a> Sim<'a> {
    fn cfg(&self) -> &'a crate::scenario::SimConfig {
        &self.scenario.config
    }

    fn time(&self) -> f64 {
        self.tick as f64 / self.cfg().executive.tick_rate_hz as f64
    }

    fn dt(&self) -> f64 {
        1.0 / self.cfg().executive.tick_rate_hz as f64
    }

    fn emit(&mut self, kind: &str, payload: Value) {
        self.trace.push(TraceEvent {
            t: self.time(),
            tick: self.tick,
            kind: kind.to_string(),
            payload,
        });
    }

    fn emit_track_events(&mut self, events: Vec<TrackEvent>) {
        for e in events {
            let payload = serde_json::to_value(&e).expect("track events serialize");
            self.emit("track", payload);
        }
    }

    fn cameras(&self) -> (Pose3, Pose3) {
        if let Some(c) = self.arm_camera {
            return c;
        }
        let mount = self.scenario.robot.wrist_camera.mount;
        (self.true_pose.to_pose3().compose(&mount), self.est.to_pose3().compose(&mount))
    }

    /// Fires every sensor due on the current tick.
    fn sense(&mut self) {
        let cfg = self.cfg();
        let t = self.time();
        let exec = cfg.executive;
        self.est = localize(&self.true_pose, &cfg.localization, &mut self.rng_loc, t).pose;

        if self.tick % exec.lidar_period_ticks as u64 == 0 {
            let mut valid = [0usize; 2];
            for (i, mount) in [LidarMount::Front, LidarMount::Back].into_iter().enumerate() {
                let scan = simulate_lidar(&self.world, &self.scenario.robot, &self.true_pose, mount, &cfg.sensors.lidar, &mut self.rng_lidar, t);
                valid[i] = scan.ranges.iter().filter(|&&r| !scan.is_miss(r)).count();
            }
            let pose = pose_json(&self.true_pose);
            self.emit("lidar", json!({ "pose": pose, "front_hits": valid[0], "back_hits": valid[1] }));
        }

        let (true_cam, believed_cam) = self.cameras();
        let k = self.scenario.robot.wrist_camera.intrinsics;
        let mut touched = Vec::new();
        if self.tick % exec.detector_period_ticks as u64 == 0 {
            let mut dets = detect_objects(&self.world, &true_cam, &k, &cfg.sensors.detector, &mut self.rng_det, t);
            if self.opts.fault == Some(Fault::Search) {
                dets.clear();
            }
            let target = dets.iter().filter(|d| d.class_label == self.tracker.target_class).count();
            let mut events = Vec::new();
            touched = self.tracker.on_detections(&dets, &self.world, &true_cam, &believed_cam, &k, &mut events);
            self.emit("detector", json!({ "detections": dets.len(), "target_detections": target }));
            self.emit_track_events(events);
        }
        if self.tick % exec.camera_period_ticks as u64 == 0 {
            let mut events = Vec::new();
            let est = self.tracker.on_camera_frame(&true_cam, &believed_cam, &k, &touched, &mut self.rng_track, &mut events);
            let live = self.tracker.tracks.len();
            self.emit("camera", json!({ "tracks": live }));
            self.emit_track_events(events);
            if let (Some(e), None) = (est, &self.estimate) {
                self.estimate = Some(e);
            }
        }
    }

    /// Integrates one tick of motion, advances the clock and senses.
    fn advance(&mut self, cmd: VelocityCommand) -> Step<()> {
        let dt = self.dt();
        let before = self.true_pose;
        self.true_pose = integrate_unicycle(&self.true_pose, &cmd, dt);
        if let Some((travelled, lose_at)) = self.drop_progress.as_mut() {
            *travelled += before.distance(&self.true_pose);
            if *travelled >= *lose_at && self.held.is_some() {
                self.drop_progress = None;
                self.slip_object();
            }
        }
        if let Some(h) = self.held {
            self.world.objects[h.object].pose = self.true_pose.to_pose3().compose(&h.in_base);
        }
        self.tick += 1;
        self.sense();
        if let (Some(p), Some(a)) = (self.opts.preempt, self.active) {
            if p.action == a.kind && self.tick - a.activated_tick >= p.after_ticks {
                return Err(Halt::Preempted);
            }
        }
        Ok(())
    }

    fn hold(&mut self, seconds: f64) -> Step<()> {
        let ticks = (seconds * self.cfg().executive.tick_rate_hz as f64).round() as u64;
        for _ in 0..ticks {
            self.advance(VelocityCommand::default())?;
        }
        Ok(())
    }

    /// Drops the carried object straight down onto whatever is below it.
    fn slip_object(&mut self) {
        if let Some(h) = self.held.take() {
            self.settle(h.object);
            self.emit("fault_injected", json!({ "fault": "lose-object" }));
        }
    }

    fn settle(&mut self, index: usize) {
        let obj = &mut self.world.objects[index];
        let t = obj.pose.translation;
        let support = self.world_support(t.x, t.y);
        let obj = &mut self.world.objects[index];
        obj.pose.translation.z += support - obj.lowest_z();
    }

    fn world_support(&self, x: f64, y: f64) -> f64 {
        self.world.support_height(x, y)
    }

    fn plan(&mut self, goal: &Pose2) -> Step<PathFollower> {
        let nav = self.cfg().navigation;
        match plan_global(&self.cost, &self.est, goal, nav.unknown_cost) {
            Ok(path) => {
                self.emit(
                    "plan",
                    json!({ "goal": pose_json(goal), "cost": path.cost, "waypoints": path.waypoints.len() }),
                );
                if self.opts.fault == Some(Fault::Approach) && self.active.map(|a| a.kind) == Some(ActionKind::Approach) {
                    self.place_phantom(&path.waypoints);
                }
                Ok(PathFollower::new(path, nav))
            }
            Err(e) => {
                self.emit("plan_failed", json!({ "goal": pose_json(goal), "error": e.to_string() }));
                Err(Halt::Aborted(e.to_string()))
            }
        }
    }

    /// Puts an obstacle the map does not know about on the path ahead.
    fn place_phantom(&mut self, waypoints: &[Pose2]) {
        let total: f64 = waypoints.windows(2).map(|w| w[0].distance(&w[1])).sum();
        let target = (0.6 * total).clamp(0.0, 1.0);
        let mut acc = 0.0;
        let mut spot = waypoints[waypoints.len() - 1];
        for w in waypoints.windows(2) {
            acc += w[0].distance(&w[1]);
            if acc >= target {
                spot = w[1];
                break;
            }
        }
        self.cost.add_obstacle_disk(spot.xy(), 0.1);
        self.emit("fault_injected", json!({ "fault": "approach", "obstacle": [spot.x, spot.y] }));
    }

    fn drive_to(&mut self, goal: Pose2, stop_on_estimate: bool) -> Step<DriveEnd> {
        let nav = self.cfg().navigation;
        let deadline = self.tick + (self.cfg().executive.leg_timeout * self.cfg().executive.tick_rate_hz as f64) as u64;
        let mut follower = self.plan(&goal)?;
        let mut replans = 0u32;
        loop {
            if stop_on_estimate && self.estimate.is_some() {
                return Ok(DriveEnd::TargetLocalized);
            }
            if self.tick >= deadline {
                return Err(Halt::Aborted(format!("leg timed out after {:.0} s", self.cfg().executive.leg_timeout)));
            }
            match follower.step(&self.est, Some(&self.cost)) {
                FollowStatus::Drive(cmd) => self.advance(cmd)?,
                FollowStatus::Arrived => {
                    self.emit("arrived", json!({ "goal": pose_json(&goal), "pose": pose_json(&self.true_pose) }));
                    return Ok(DriveEnd::Arrived);
                }
                FollowStatus::Blocked => {
                    replans += 1;
                    self.emit("blocked", json!({ "replans": replans }));
                    if replans > nav.max_replans {
                        return Err(Halt::Aborted(format!("path blocked after {} replans", nav.max_replans)));
                    }
                    follower = self.plan(&goal)?;
                    self.advance(VelocityCommand::default())?;
                }
            }
        }
    }

    fn run_search(&mut self) -> Step<()> {
        let laps = self.cfg().executive.search_laps;
        let waypoints = self.scenario.mission.waypoints.clone();
        for lap in 0..laps {
            for (i, wp) in waypoints.iter().enumerate() {
                if self.estimate.is_some() {
                    break;
                }
                self.emit("waypoint", json!({ "lap": lap, "index": i, "pose": pose_json(wp) }));
                if let DriveEnd::TargetLocalized = self.drive_to(*wp, true)? {
                    break;
                }
            }
            if let Some(e) = &self.estimate {
                let payload = json!({ "class_label": e.class_label, "position": vec3_json(&e.position), "n_rays": e.n_rays });
                self.emit("target_localized", payload);
                return Ok(());
            }
        }
        Err(Halt::Aborted(format!("target not localized after {laps} waypoint laps")))
    }

    fn approach(&mut self, object_xy: Vector2<f64>, standoff: f64, exclude: Option<(f64, f64)>) -> Step<()> {
        let nav = self.cfg().navigation;
        let footprint = self.scenario.robot.footprint_radius;
        let goal = compute_approach_pose(&self.cost, object_xy, self.est.xy(), standoff, &nav, footprint, exclude)
            .map_err(|e| Halt::Aborted(e.to_string()))?;
        let d = goal.xy() - object_xy;
        self.approach_angle = Some(d.y.atan2(d.x));
        self.emit("approach_pose", json!({ "pose": pose_json(&goal), "standoff": d.norm() }));
        self.drive_to(goal, false)?;
        Ok(())
    }

    fn run_approach(&mut self) -> Step<()> {
        let est = self.estimate.clone().ok_or_else(|| Halt::Aborted("no object estimate".into()))?;
        let standoff = self.cfg().navigation.standoff;
        self.approach(est.position.xy(), standoff, None)
    }

    fn scan_once(&mut self) -> Step<GraspSelection> {
        let cfg = self.cfg();
        let robot = self.scenario.robot;
        let anchor = self.estimate.as_ref().map(|e| e.position).ok_or_else(|| Halt::Aborted("no object estimate".into()))?;
        let base_believed = self.est;
        let base_true = self.true_pose;
        let from_believed = base_true.to_pose3().compose(&base_believed.to_pose3().inverse());
        let k = robot.wrist_camera.depth_intrinsics();
        let mut depths = Vec::new();
        for (i, view) in scan_views(&anchor, base_believed.theta, &cfg.reconstruction).into_iter().enumerate() {
            let true_view = from_believed.compose(&view);
            self.arm_camera = Some((true_view, view));
            self.hold(cfg.executive.view_move_time)?;
            let mut image = render_depth(&self.world, &true_view, &k, cfg.reconstruction.depth_max, self.time());
            image.camera_pose = view;
            if self.opts.fault == Some(Fault::Scan) {
                image.depths.iter_mut().for_each(|d| *d = 0.0);
            }
            self.emit("scan_view", json!({ "index": i, "valid_pixels": image.valid_count() }));
            depths.push(image);
        }
        self.arm_camera = None;
        let halt = |e: &dyn std::fmt::Display| Halt::Aborted(e.to_string());
        let cloud = reconstruct(&depths, &anchor, &cfg.reconstruction).map_err(|e| halt(&e))?;
        let object_center = locate_object(&cloud, &anchor, cfg.reconstruction.voxel_size, cfg.grasping.n_min).unwrap_or(anchor);
        self.emit("reconstruction", json!({ "points": cloud.len(), "object_center": vec3_json(&object_center) }));
        let normals = estimate_normals(&cloud, cfg.grasping.k_normals).map_err(|e| halt(&e))?;
        let roi = Some((object_center, cfg.grasping.seed_radius));
        let candidates = generate_candidates(&cloud, &normals, &robot.gripper, &cfg.grasping, roi, &mut self.rng_grasp).map_err(|e| halt(&e))?;
        let ranked = score_candidates(candidates, &cloud, &normals, &robot.gripper, cfg.grasping.angle_max);
        let top = ranked.first().map(|c| c.score).unwrap_or(0.0);
        self.emit("grasp_candidates", json!({ "count": ranked.len(), "top_score": top }));
        let selection = select_grasp(&ranked, &base_believed, &robot.arm);
        match &selection {
            GraspSelection::Selected(c) => {
                let q = c.pose.rotation.quaternion();
                self.emit(
                    "grasp_selected",
                    json!({
                        "center": vec3_json(&c.center()),
                        "rotation": [q.w, q.i, q.j, q.k],
                        "opening": c.opening,
                        "score": c.score,
                    }),
                );
                self.grasp = Some(GraspPlan {
                    candidate: *c,
                    base_believed,
                });
            }
            GraspSelection::NeedsReposition => {
                if let Some(best) = ranked.iter().find(|c| c.score > 0.0) {
                    self.reposition_target = Some(best.center());
                }
            }
            GraspSelection::NoFeasibleGrasp => {}
        }
        Ok(selection)
    }

    fn run_scan(&mut self) -> Step<()> {
        let mut repositions = 0;
        loop {
            match self.scan_once()? {
                GraspSelection::Selected(_) => return Ok(()),
                GraspSelection::NoFeasibleGrasp => return Err(Halt::Aborted("no feasible grasp".into())),
                GraspSelection::NeedsReposition => {
                    let max = self.cfg().executive.max_repositions;
                    if repositions >= max {
                        return Err(Halt::Aborted("grasp still unreachable after repositioning".into()));
                    }
                    repositions += 1;
                    let arm = self.scenario.robot.arm;
                    let nav = self.cfg().navigation;
                    let target = self.reposition_target.take().expect("reposition target recorded with the selection");
                    let standoff = 0.5 * (arm.reach_min + arm.reach_max);
                    let exclude = self.approach_angle.map(|a| (a, 0.5 * nav.ring_angle_step));
                    self.emit("reposition", json!({ "target": vec3_json(&target), "standoff": standoff }));
                    self.approach(target.xy(), standoff, exclude)?;
                }
            }
        }
    }

    fn run_grasp(&mut self) -> Step<()> {
        let plan = self.grasp.ok_or_else(|| Halt::Aborted("no selected grasp".into()))?;
        let mut candidate = plan.candidate;
        if self.opts.fault == Some(Fault::Grasp) {
            let offset = self.cfg().executive.fault_grasp_offset;
            candidate.pose.translation -= candidate.approach() * offset;
            self.emit("fault_injected", json!({ "fault": "grasp", "offset": offset }));
        }
        self.hold(self.cfg().executive.grasp_time)?;
        let from_believed = self.true_pose.to_pose3().compose(&plan.base_believed.to_pose3().inverse());
        let executed = GraspCandidate {
            pose: from_believed.compose(&candidate.pose),
            ..candidate
        };
        let gripper = self.scenario.robot.gripper;
        let held = (0..self.world.objects.len()).find(|&i| execute_grasp(&self.world, i, &executed, &gripper) == GraspOutcome::Held);
        let object_id = held.map(|i| self.world.objects[i].id.clone());
        self.emit(
            "grasp_result",
            json!({
                "outcome": if held.is_some() { "held" } else { "missed" },
                "object": object_id,
                "center": vec3_json(&executed.center()),
                "closing": vec3_json(&executed.closing()),
            }),
        );
        let Some(index) = held else {
            return Err(Halt::Aborted("gripper closed on nothing".into()));
        };
        let in_base = self.true_pose.to_pose3().inverse().compose(&self.world.objects[index].pose);
        self.held = Some(Held { object: index, in_base });
        Ok(())
    }

    fn run_drop(&mut self) -> Step<()> {
        let exec = self.cfg().executive;
        let drop = self.scenario.mission.drop_pose;
        if self.opts.fault == Some(Fault::Drop) {
            self.wall_off(&drop);
        }
        if self.opts.fault == Some(Fault::LoseObject) {
            let halfway = 0.5 * self.true_pose.distance(&drop);
            self.drop_progress = Some((0.0, halfway));
        }
        self.drive_to(drop, false)?;
        self.drop_progress = None;
        self.hold(exec.drop_time)?;
        let believed = self.est.xy() + self.est.heading() * exec.release_distance;
        if let Some(h) = self.held.take() {
            let spot = self.true_pose.xy() + self.true_pose.heading() * exec.release_distance;
            let obj = &mut self.world.objects[h.object];
            obj.pose.translation.x = spot.x;
            obj.pose.translation.y = spot.y;
            self.settle(h.object);
        }
        let miss = (believed - drop.xy()).norm();
        self.emit("release", json!({ "believed": [believed.x, believed.y], "believed_error": miss }));
        if miss > exec.drop_tolerance {
            return Err(Halt::Aborted(format!("released {miss:.2} m from the drop pose")));
        }
        Ok(())
    }

    fn wall_off(&mut self, center: &Pose2) {
        let radius = 0.8;
        let n = 64;
        for i in 0..n {
            let a = i as f64 * std::f64::consts::TAU / n as f64;
            self.cost.add_obstacle_disk(center.xy() + Vector2::new(a.cos(), a.sin()) * radius, 0.1);
        }
        self.emit("fault_injected", json!({ "fault": "drop", "ring_radius": radius }));
    }

    fn run_action(&mut self, kind: ActionKind) -> Step<()> {
        match kind {
            ActionKind::Search => self.run_search(),
            ActionKind::Approach => self.run_approach(),
            ActionKind::Scan => self.run_scan(),
            ActionKind::Grasp => self.run_grasp(),
            ActionKind::Drop => self.run_drop(),
        }
    }

    fn set_status(&mut self, handle: &mut ActionHandle, to: ActionStatus) {
        let from = handle.status;
        handle.transition(to).expect("executive only requests legal transitions");
        self.emit("action", json!({ "action": handle.kind, "from": from, "to": to }));
    }
}

/// Maps the world, then runs search → approach → scan → grasp → drop with no
/// recovery: the first action that does not succeed ends the mission.
pub fn run_mission(scenario: &Scenario, opts: &MissionOptions) -> Result<MissionResult, ExecutiveError> {
    let cfg = &scenario.config;
    let seed = scenario.mission.seed;
    let mut rng_map = stream(seed, Stream::Mapping);
    let route = scenario.mission.effective_mapping_route();
    let grid = build_map(&scenario.world, &route, &scenario.robot, &cfg.sensors.lidar, &cfg.mapping, &mut rng_map)?;
    let cost = inflate(
        &grid,
        scenario.robot.footprint_radius + cfg.navigation.inflation_margin,
        cfg.navigation.occupied_threshold,
    );
    let target = scenario.world.objects.iter().position(|o| o.class_label == scenario.mission.target_class);
    let mut sim = Sim {
        scenario,
        opts: *opts,
        world: scenario.world.clone(),
        cost,
        true_pose: scenario.mission.start,
        est: scenario.mission.start,
        tick: 0,
        rng_lidar: stream(seed, Stream::Lidar),
        rng_loc: stream(seed, Stream::Localization),
        rng_det: stream(seed, Stream::Detector),
        rng_track: stream(seed, Stream::Tracker),
        rng_grasp: stream(seed, Stream::Grasping),
        tracker: Tracker::new(cfg.perception.clone(), scenario.mission.target_class.clone()),
        trace: Vec::new(),
        arm_camera: None,
        estimate: None,
        approach_angle: None,
        reposition_target: None,
        grasp: None,
        held: None,
        active: None,
        drop_progress: None,
    };
    let occupied = grid.log_odds.iter().filter(|&&l| l > 0.0).count();
    sim.emit(
        "mission_start",
        json!({
            "seed": seed,
            "target_class": scenario.mission.target_class,
            "drop_pose": pose_json(&scenario.mission.drop_pose),
            "fault": opts.fault,
            "map": { "width": grid.width, "height": grid.height, "occupied_cells": occupied },
        }),
    );
    sim.sense();

    let mut outcome = None;
    for kind in ActionKind::SEQUENCE {
        let mut handle = ActionHandle::new(kind);
        handle.activated_tick = sim.tick;
        sim.set_status(&mut handle, ActionStatus::Active);
        sim.active = Some(handle);
        let result = sim.run_action(kind);
        sim.active = None;
        match result {
            Ok(()) => sim.set_status(&mut handle, ActionStatus::Succeeded),
            Err(Halt::Aborted(reason)) => {
                sim.set_status(&mut handle, ActionStatus::Aborted);
                outcome = Some(MissionOutcome::Failed { at_action: kind, reason });
                break;
            }
            Err(Halt::Preempted) => {
                sim.set_status(&mut handle, ActionStatus::Preempted);
                outcome = Some(MissionOutcome::Preempted { at_action: kind });
                break;
            }
        }
    }

    // ground-truth referee, independent of what the robot believes
    let drop = scenario.mission.drop_pose;
    let tolerance = cfg.executive.drop_tolerance;
    let object_xy = target.map(|i| sim.world.objects[i].pose.translation.xy());
    let delivery_error = object_xy.map(|p| (p - drop.xy()).norm());
    let delivered = delivery_error.is_some_and(|d| d <= tolerance);
    let outcome = outcome.unwrap_or(if delivered { MissionOutcome::Succeeded } else { MissionOutcome::NotDelivered });
    sim.emit(
        "mission_end",
        json!({
            "outcome": outcome,
            "object_xy": object_xy.map(|p| [p.x, p.y]),
            "delivered": delivered,
            "delivery_error": delivery_error,
        }),
    );
    Ok(MissionResult {
        outcome,
        trace: sim.trace,
        grid,
        final_world: sim.world,
    })
}
