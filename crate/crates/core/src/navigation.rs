//! Costmap inflation, grid A* planning, a pure-pursuit path follower and the
//! search for a base pose facing the target object.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff, normalize_angle, Pose2};
use crate::mapping::{Cell, OccupancyGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    #[error("no path from ({sx:.2}, {sy:.2}) to ({gx:.2}, {gy:.2})")]
    NoPath { sx: f64, sy: f64, gx: f64, gy: f64 },
    #[error("goal ({x:.2}, {y:.2}) lies in an occupied or inflated cell")]
    GoalOccupied { x: f64, y: f64 },
    #[error("start ({x:.2}, {y:.2}) lies in an occupied cell")]
    StartOccupied { x: f64, y: f64 },
    #[error("pose ({x:.2}, {y:.2}) lies outside the grid")]
    OutOfGrid { x: f64, y: f64 },
    #[error("no collision-free approach pose within {max_standoff:.2} m of ({x:.2}, {y:.2})")]
    NoApproach { x: f64, y: f64, max_standoff: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavigationConfig {
    pub occupied_threshold: f64,
    /// Added to the footprint radius to obtain the inflation radius.
    pub inflation_margin: f64,
    /// Integer step-cost multiplier for entering an unknown cell.
    pub unknown_cost: u32,
    pub lookahead: f64,
    pub v_max: f64,
    pub w_max: f64,
    /// Speeds scale down linearly inside this distance of the goal.
    pub slowdown_radius: f64,
    pub v_min: f64,
    /// Heading error beyond which the follower turns in place.
    pub rotate_in_place: f64,
    pub heading_gain: f64,
    pub xy_tolerance: f64,
    pub theta_tolerance: f64,
    pub standoff: f64,
    pub max_standoff: f64,
    pub ring_angle_step: f64,
    pub max_replans: u32,
}

impl Default for NavigationConfig {
    fn default() -> Self {
        Self {
            occupied_threshold: 0.65,
            inflation_margin: 0.05,
            unknown_cost: 3,
            lookahead: 0.4,
            v_max: 0.5,
            w_max: 1.0,
            slowdown_radius: 0.5,
            v_min: 0.05,
            rotate_in_place: 60f64.to_radians(),
            heading_gain: 2.0,
            xy_tolerance: 0.05,
            theta_tolerance: 0.1,
            standoff: 0.4,
            max_standoff: 1.0,
            ring_angle_step: 5f64.to_radians(),
            max_replans: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Free,
    Inflated,
    Occupied,
    Unknown,
}

impl CellState {
    pub fn is_blocking(self) -> bool {
        matches!(self, CellState::Occupied | CellState::Inflated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostGrid {
    pub origin: Pose2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<CellState>,
    pub inflation_radius: f64,
    pub occupied_threshold: f64,
}

impl CostGrid {
    pub fn from_states(origin: Pose2, resolution: f64, width: usize, height: usize, cells: Vec<CellState>) -> Self {
        assert_eq!(cells.len(), width * height, "cell count must match grid dimensions");
        Self {
            origin,
            resolution,
            width,
            height,
            cells,
            inflation_radius: 0.0,
            occupied_threshold: 0.65,
        }
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 >= 0 && c.1 >= 0 && (c.0 as usize) < self.width && (c.1 as usize) < self.height
    }

    pub fn index(&self, c: Cell) -> usize {
        c.1 as usize * self.width + c.0 as usize
    }

    pub fn state(&self, c: Cell) -> CellState {
        self.cells[self.index(c)]
    }

    /// State of the cell containing a world point; outside the grid counts as occupied.
    pub fn state_at(&self, p: Vector2<f64>) -> CellState {
        let c = self.world_to_cell(p);
        if self.in_bounds(c) {
            self.state(c)
        } else {
            CellState::Occupied
        }
    }

    pub fn world_to_cell(&self, p: Vector2<f64>) -> Cell {
        let g = self.origin.to_local(p) / self.resolution;
        (g.x.floor() as i64, g.y.floor() as i64)
    }

    pub fn cell_center(&self, c: Cell) -> Vector2<f64> {
        let local = Pose2::new((c.0 as f64 + 0.5) * self.resolution, (c.1 as f64 + 0.5) * self.resolution, 0.0);
        self.origin.compose(&local).xy()
    }

    /// Marks every cell within `radius` of `center` as occupied, then re-inflates
    /// around them. Used to inject obstacles the map does not know about.
    pub fn add_obstacle_disk(&mut self, center: Vector2<f64>, radius: f64) {
        let c = self.world_to_cell(center);
        let r = (radius / self.resolution).ceil() as i64 + 1;
        let mut new_occ = Vec::new();
        for dj in -r..=r {
            for di in -r..=r {
                let cell = (c.0 + di, c.1 + dj);
                if self.in_bounds(cell) && (self.cell_center(cell) - center).norm() <= radius {
                    let i = self.index(cell);
                    self.cells[i] = CellState::Occupied;
                    new_occ.push(cell);
                }
            }
        }
        let offsets = disk_offsets(self.inflation_radius, self.resolution);
        for cell in new_occ {
            self.inflate_around(cell, &offsets);
        }
    }

    fn inflate_around(&mut self, c: Cell, offsets: &[(i64, i64)]) {
        for &(di, dj) in offsets {
            let n = (c.0 + di, c.1 + dj);
            if self.in_bounds(n) {
                let i = self.index(n);
                if self.cells[i] != CellState::Occupied {
                    self.cells[i] = CellState::Inflated;
                }
            }
        }
    }
}

/// Cell offsets whose centers lie within `radius` of the origin cell's center.
fn disk_offsets(radius: f64, resolution: f64) -> Vec<(i64, i64)> {
    let r = (radius / resolution).floor() as i64;
    let mut out = Vec::new();
    for dj in -r..=r {
        for di in -r..=r {
            let d = ((di * di + dj * dj) as f64).sqrt() * resolution;
            if d <= radius + 1e-9 && (di, dj) != (0, 0) {
                out.push((di, dj));
            }
        }
    }
    out
}

/// Classifies every cell and inflates obstacles by `robot_radius`.
pub fn inflate(grid: &OccupancyGrid, robot_radius: f64, occupied_threshold: f64) -> CostGrid {
    let cells = grid
        .log_odds
        .iter()
        .map(|&l| {
            if crate::mapping::probability(l) >= occupied_threshold {
                CellState::Occupied
            } else if l == 0.0 {
                CellState::Unknown
            } else {
                CellState::Free
            }
        })
        .collect();
    let mut cost = CostGrid {
        origin: grid.origin,
        resolution: grid.resolution,
        width: grid.width,
        height: grid.height,
        cells,
        inflation_radius: robot_radius,
        occupied_threshold,
    };
    let offsets = disk_offsets(robot_radius, grid.resolution);
    let occupied: Vec<Cell> = (0..grid.height as i64)
        .flat_map(|j| (0..grid.width as i64).map(move |i| (i, j)))
        .filter(|&c| cost.state(c) == CellState::Occupied)
        .collect();
    for c in occupied {
        cost.inflate_around(c, &offsets);
    }
    cost
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path2 {
    pub waypoints: Vec<Pose2>,
    /// Meters: step lengths weighted by the entered cell's multiplier.
    pub cost: f64,
}

impl Path2 {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,theta\n");
        for p in &self.waypoints {
            let _ = writeln!(s, "{:.6},{:.6},{:.6}", p.x, p.y, p.theta);
        }
        s
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }
}

/// Path cost kept as exact integer counts of straight and diagonal unit steps
/// (already weighted by cell multipliers), so equal costs compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepCost {
    pub straight: u64,
    pub diagonal: u64,
}

impl StepCost {
    pub fn value(self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    pub fn add_step(self, diagonal: bool, multiplier: u32) -> Self {
        if diagonal {
            Self {
                diagonal: self.diagonal + multiplier as u64,
                ..self
            }
        } else {
            Self {
                straight: self.straight + multiplier as u64,
                ..self
            }
        }
    }
}

pub const NEIGHBORS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Step multiplier for entering a cell, `None` when impassable.
pub fn step_multiplier(state: CellState, unknown_cost: u32) -> Option<u32> {
    match state {
        CellState::Free => Some(1),
        CellState::Unknown => Some(unknown_cost),
        CellState::Inflated | CellState::Occupied => None,
    }
}

#[derive(Debug, PartialEq)]
struct Open {
    f: f64,
    seq: u64,
    cell: Cell,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, then FIFO on insertion order
        other.f.total_cmp(&self.f).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 8-connected A* with a Euclidean heuristic. The start cell may be inflated
/// (a robot hugging a wall must still be able to leave) but not occupied.
pub fn plan_global(cost: &CostGrid, start: &Pose2, goal: &Pose2, unknown_cost: u32) -> Result<Path2, NavError> {
    let s = cost.world_to_cell(start.xy());
    let g = cost.world_to_cell(goal.xy());
    if !cost.in_bounds(s) {
        return Err(NavError::OutOfGrid { x: start.x, y: start.y });
    }
    if !cost.in_bounds(g) {
        return Err(NavError::OutOfGrid { x: goal.x, y: goal.y });
    }
    if cost.state(g).is_blocking() {
        return Err(NavError::GoalOccupied { x: goal.x, y: goal.y });
    }
    if cost.state(s) == CellState::Occupied {
        return Err(NavError::StartOccupied { x: start.x, y: start.y });
    }
    let no_path = NavError::NoPath {
        sx: start.x,
        sy: start.y,
        gx: goal.x,
        gy: goal.y,
    };
    if s == g {
        let waypoints = if start == goal { vec![*goal] } else { vec![*start, *goal] };
        return Ok(Path2 { waypoints, cost: 0.0 });
    }

    let n = cost.width * cost.height;
    let mut best: Vec<Option<StepCost>> = vec![None; n];
    let mut parent: Vec<usize> = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let heuristic = |c: Cell| (((c.0 - g.0).pow(2) + (c.1 - g.1).pow(2)) as f64).sqrt();
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    best[cost.index(s)] = Some(StepCost::default());
    open.push(Open {
        f: heuristic(s),
        seq,
        cell: s,
    });
    let mut reached = None;
    while let Some(Open { cell, .. }) = open.pop() {
        let ci = cost.index(cell);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if cell == g {
            reached = best[ci];
            break;
        }
        let here = best[ci].expect("open cells have a cost");
        for (di, dj) in NEIGHBORS {
            let nb = (cell.0 + di, cell.1 + dj);
            if !cost.in_bounds(nb) {
                continue;
            }
            let ni = cost.index(nb);
            if closed[ni] {
                continue;
            }
            let Some(mult) = step_multiplier(cost.state(nb), unknown_cost) else {
                continue;
            };
            let cand = here.add_step(di != 0 && dj != 0, mult);
            if best[ni].is_none_or(|b| cand.value() < b.value()) {
                best[ni] = Some(cand);
                parent[ni] = ci;
                seq += 1;
                open.push(Open {
                    f: cand.value() + heuristic(nb),
                    seq,
                    cell: nb,
                });
            }
        }
    }
    let total = reached.ok_or(no_path)?;

    let mut chain = vec![cost.index(g)];
    while *chain.last().unwrap() != cost.index(s) {
        chain.push(parent[*chain.last().unwrap()]);
    }
    chain.reverse();
    let centers: Vec<Vector2<f64>> = chain
        .iter()
        .map(|&i| cost.cell_center(((i % cost.width) as i64, (i / cost.width) as i64)))
        .collect();
    let mut waypoints = Vec::with_capacity(centers.len());
    waypoints.push(*start);
    for k in 1..centers.len() - 1 {
        let d = centers[k + 1] - centers[k];
        waypoints.push(Pose2::new(centers[k].x, centers[k].y, d.y.atan2(d.x)));
    }
    waypoints.push(*goal);
    Ok(Path2 {
        waypoints,
        cost: total.value() * cost.resolution,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub v: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FollowStatus {
    Drive(VelocityCommand),
    Arrived,
    /// An occupied or inflated cell sits on the path ahead; the command is zero.
    Blocked,
}

/// Pure-pursuit follower. Keeps track of progress along the path so the
/// closest-point search never jumps backwards.
#[derive(Debug, Clone)]
pub struct PathFollower {
    pub path: Path2,
    pub cfg: NavigationConfig,
    segment: usize,
    aligning: bool,
}

impl PathFollower {
    pub fn new(path: Path2, cfg: NavigationConfig) -> Self {
        assert!(!path.waypoints.is_empty(), "cannot follow an empty path");
        Self {
            path,
            cfg,
            segment: 0,
            aligning: false,
        }
    }

    pub fn goal(&self) -> Pose2 {
        *self.path.waypoints.last().unwrap()
    }

    /// One control step from the estimated pose. `obstacles` is the grid used
    /// for the blockage check, typically the planning grid plus live overlays.
    pub fn step(&mut self, est: &Pose2, obstacles: Option<&CostGrid>) -> FollowStatus {
        let cfg = self.cfg;
        let goal = self.goal();
        let to_goal = est.distance(&goal);
        if to_goal <= cfg.xy_tolerance || (self.aligning && to_goal <= 2.0 * cfg.xy_tolerance) {
            self.aligning = true;
            let err = angle_diff(goal.theta, est.theta);
            if err.abs() <= cfg.theta_tolerance {
                return FollowStatus::Arrived;
            }
            let w = (cfg.heading_gain * err).clamp(-cfg.w_max, cfg.w_max);
            let w = if w.abs() < 0.2 { 0.2 * w.signum() } else { w };
            return FollowStatus::Drive(VelocityCommand { v: 0.0, w });
        }
        self.aligning = false;

        let (closest_seg, closest_pt) = self.closest_point(est.xy());
        self.segment = closest_seg;
        let (look_seg, look_pt) = self.advance(closest_seg, closest_pt, cfg.lookahead);

        if let Some(grid) = obstacles {
            let wps = &self.path.waypoints;
            for wp in &wps[(closest_seg + 1).min(wps.len() - 1)..=(look_seg + 1).min(wps.len() - 1)] {
                if grid.state_at(wp.xy()).is_blocking() {
                    return FollowStatus::Blocked;
                }
            }
        }

        let local = est.to_local(look_pt);
        let dist = local.norm();
        if dist < 1e-9 {
            return FollowStatus::Drive(VelocityCommand { v: 0.0, w: 0.0 });
        }
        let alpha = local.y.atan2(local.x);
        if alpha.abs() > cfg.rotate_in_place {
            let w = (cfg.heading_gain * alpha).clamp(-cfg.w_max, cfg.w_max);
            return FollowStatus::Drive(VelocityCommand { v: 0.0, w });
        }
        let curvature = 2.0 * local.y / (dist * dist);
        let mut v = (cfg.v_max * (to_goal / cfg.slowdown_radius).min(1.0)).max(cfg.v_min);
        let mut w = v * curvature;
        if w.abs() > cfg.w_max {
            w = cfg.w_max * w.signum();
            v = w / curvature;
        }
        FollowStatus::Drive(VelocityCommand { v, w })
    }

    fn closest_point(&self, p: Vector2<f64>) -> (usize, Vector2<f64>) {
        let wps = &self.path.waypoints;
        if wps.len() == 1 {
            return (0, wps[0].xy());
        }
        let last_seg = wps.len() - 2;
        // look a bounded distance ahead of current progress
        let window_end = (self.segment + 40).min(last_seg);
        let mut best = (self.segment, wps[self.segment].xy(), f64::INFINITY);
        for k in self.segment..=window_end {
            let (a, b) = (wps[k].xy(), wps[k + 1].xy());
            let ab = b - a;
            let len2 = ab.norm_squared();
            let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = a + ab * t;
            let d = (p - q).norm();
            if d < best.2 {
                best = (k, q, d);
            }
        }
        (best.0, best.1)
    }

    fn advance(&self, mut seg: usize, mut pt: Vector2<f64>, mut remaining: f64) -> (usize, Vector2<f64>) {
        let wps = &self.path.waypoints;
        if wps.len() == 1 {
            return (0, wps[0].xy());
        }
        loop {
            let end = wps[seg + 1].xy();
            let left = (end - pt).norm();
            if left >= remaining {
                return (seg, pt + (end - pt) * (remaining / left));
            }
            remaining -= left;
            pt = end;
            if seg + 2 >= wps.len() {
                return (seg, end);
            }
            seg += 1;
        }
    }
}

/// Unicycle kinematics over one time step.
pub fn integrate_unicycle(pose: &Pose2, cmd: &VelocityCommand, dt: f64) -> Pose2 {
    let mid = pose.theta + 0.5 * cmd.w * dt;
    Pose2::new(pose.x + cmd.v * dt * mid.cos(), pose.y + cmd.v * dt * mid.sin(), pose.theta + cmd.w * dt)
}

/// Whether a base at `p` fits: its own cell must be free and no cell under the
/// footprint may be occupied or unknown.
pub fn footprint_clear(cost: &CostGrid, p: Vector2<f64>, footprint_radius: f64) -> bool {
    if cost.state_at(p) != CellState::Free {
        return false;
    }
    let c = cost.world_to_cell(p);
    let r = (footprint_radius / cost.resolution).ceil() as i64 + 1;
    for dj in -r..=r {
        for di in -r..=r {
            let cell = (c.0 + di, c.1 + dj);
            if (cost.cell_center(cell) - p).norm() > footprint_radius {
                continue;
            }
            if !cost.in_bounds(cell) || matches!(cost.state(cell), CellState::Occupied | CellState::Unknown) {
                return false;
            }
        }
    }
    true
}

/// Ring search for a collision-free base pose facing the object.
///
/// Rings grow from `standoff` in steps of one cell; on each ring, angles are
/// tried in order of distance from the bearing object→robot. `exclude` removes
/// ring angles within the given half-width of a previously used angle.
pub fn compute_approach_pose(
    cost: &CostGrid,
    object_xy: Vector2<f64>,
    robot_xy: Vector2<f64>,
    standoff: f64,
    cfg: &NavigationConfig,
    footprint_radius: f64,
    exclude: Option<(f64, f64)>,
) -> Result<Pose2, NavError> {
    let bearing = {
        let d = robot_xy - object_xy;
        if d.norm() < 1e-12 {
            0.0
        } else {
            d.y.atan2(d.x)
        }
    };
    let step = cfg.ring_angle_step;
    let n_side = (PI / step).floor() as i64;
    let mut radius = standoff;
    while radius <= cfg.max_standoff + 1e-9 {
        for k in 0..=n_side {
            for sign in [1.0, -1.0] {
                if k == 0 && sign < 0.0 {
                    continue;
                }
                let offset = sign * k as f64 * step;
                if k == n_side && sign < 0.0 && (offset.abs() - PI).abs() < 1e-9 {
                    continue;
                }
                let angle = normalize_angle(bearing + offset);
                if let Some((center, half)) = exclude {
                    if angle_diff(angle, center).abs() <= half {
                        continue;
                    }
                }
                let p = object_xy + Vector2::new(angle.cos(), angle.sin()) * radius;
                if footprint_clear(cost, p, footprint_radius) {
                    let to_obj = object_xy - p;
                    return Ok(Pose2::new(p.x, p.y, to_obj.y.atan2(to_obj.x)));
                }
            }
        }
        radius += cost.resolution;
    }
    Err(NavError::NoApproach {
        x: object_xy.x,
        y: object_xy.y,
        max_standoff: cfg.max_standoff,
    })
}
