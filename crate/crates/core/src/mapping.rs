//! Log-odds occupancy grid built from posed LiDAR scans, plus the noisy
//! localization oracle used during missions.

use std::io::{BufRead, Write};

use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Pose2};
use crate::rng::gaussian;
use crate::sensors::{simulate_lidar, LaserScan, LidarConfig, LidarMount};
use crate::world::{RobotModel, WorldModel};

#[derive(Debug, Error, PartialEq)]
pub enum MappingError {
    #[error("sensor pose ({x:.3}, {y:.3}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
}

#[derive(Debug, Error)]
pub enum GridFileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed grid header: {0}")]
    Header(String),
    #[error("expected {expected} cell bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub resolution: f64,
    pub l_occ: f64,
    pub l_free: f64,
    pub l_min: f64,
    pub l_max: f64,
    /// Extra grid margin around the world bounds, meters.
    pub margin: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            l_occ: 0.85,
            l_free: -0.4,
            l_min: -5.0,
            l_max: 5.0,
            margin: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            sigma_xy: 0.01,
            sigma_theta: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose2,
    pub timestamp: f64,
}

/// Integer cell index; `(i, j)` = (column, row).
pub type Cell = (i64, i64);

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    /// Pose of the lower-left corner of cell (0, 0).
    pub origin: Pose2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub log_odds: Vec<f64>,
    pub l_occ: f64,
    pub l_free: f64,
    pub l_min: f64,
    pub l_max: f64,
}

pub fn probability(log_odds: f64) -> f64 {
    1.0 - 1.0 / (1.0 + log_odds.exp())
}

impl OccupancyGrid {
    pub fn new(origin: Pose2, resolution: f64, width: usize, height: usize, cfg: &MappingConfig) -> Self {
        assert!(resolution > 0.0, "grid resolution must be positive");
        Self {
            origin,
            resolution,
            width,
            height,
            log_odds: vec![0.0; width * height],
            l_occ: cfg.l_occ,
            l_free: cfg.l_free,
            l_min: cfg.l_min,
            l_max: cfg.l_max,
        }
    }

    /// A grid covering the world bounds plus margin; walls at integer
    /// multiples of the resolution fall on cell centers.
    pub fn for_world(world: &WorldModel, cfg: &MappingConfig) -> Self {
        let pad = cfg.margin + cfg.resolution / 2.0;
        let origin = Pose2::new(world.bounds.min[0] - pad, world.bounds.min[1] - pad, 0.0);
        let span_x = world.bounds.max[0] - world.bounds.min[0] + 2.0 * pad;
        let span_y = world.bounds.max[1] - world.bounds.min[1] + 2.0 * pad;
        let width = (span_x / cfg.resolution).ceil() as usize;
        let height = (span_y / cfg.resolution).ceil() as usize;
        Self::new(origin, cfg.resolution, width, height, cfg)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 >= 0 && c.1 >= 0 && (c.0 as usize) < self.width && (c.1 as usize) < self.height
    }

    pub fn index(&self, c: Cell) -> usize {
        c.1 as usize * self.width + c.0 as usize
    }

    /// Continuous grid coordinates (cell units) of a world point.
    pub fn to_grid(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.origin.to_local(p) / self.resolution
    }

    pub fn world_to_cell(&self, p: Vector2<f64>) -> Cell {
        let g = self.to_grid(p);
        (g.x.floor() as i64, g.y.floor() as i64)
    }

    pub fn cell_center(&self, c: Cell) -> Vector2<f64> {
        let local = Pose2::new((c.0 as f64 + 0.5) * self.resolution, (c.1 as f64 + 0.5) * self.resolution, 0.0);
        self.origin.compose(&local).xy()
    }

    pub fn log_odds_at(&self, c: Cell) -> f64 {
        self.log_odds[self.index(c)]
    }

    pub fn probability_at(&self, c: Cell) -> f64 {
        probability(self.log_odds_at(c))
    }

    /// Never updated since construction.
    pub fn is_prior(&self, c: Cell) -> bool {
        self.log_odds_at(c) == 0.0
    }

    fn add(&mut self, c: Cell, delta: f64) {
        let i = self.index(c);
        self.log_odds[i] = (self.log_odds[i] + delta).clamp(self.l_min, self.l_max);
    }

    /// Cells crossed by the segment `from → to` (world frame), in order, stopping
    /// at the grid boundary. The boolean reports whether `to`'s cell was reached.
    pub fn traverse(&self, from: Vector2<f64>, to: Vector2<f64>) -> (Vec<Cell>, bool) {
        let s = self.to_grid(from);
        let e = self.to_grid(to);
        let mut cell = (s.x.floor() as i64, s.y.floor() as i64);
        let end = (e.x.floor() as i64, e.y.floor() as i64);
        let d = e - s;
        let step = (d.x.signum() as i64, d.y.signum() as i64);
        let t_delta = Vector2::new(
            if d.x != 0.0 { 1.0 / d.x.abs() } else { f64::INFINITY },
            if d.y != 0.0 { 1.0 / d.y.abs() } else { f64::INFINITY },
        );
        let mut t_max = Vector2::new(
            if d.x > 0.0 {
                (cell.0 as f64 + 1.0 - s.x) / d.x
            } else if d.x < 0.0 {
                (s.x - cell.0 as f64) / -d.x
            } else {
                f64::INFINITY
            },
            if d.y > 0.0 {
                (cell.1 as f64 + 1.0 - s.y) / d.y
            } else if d.y < 0.0 {
                (s.y - cell.1 as f64) / -d.y
            } else {
                f64::INFINITY
            },
        );
        let max_steps = (end.0 - cell.0).unsigned_abs() + (end.1 - cell.1).unsigned_abs();
        let mut cells = Vec::with_capacity(max_steps as usize + 1);
        for _ in 0..=max_steps {
            if !self.in_bounds(cell) {
                return (cells, false);
            }
            cells.push(cell);
            if cell == end {
                return (cells, true);
            }
            if t_max.x < t_max.y {
                cell.0 += step.0;
                t_max.x += t_delta.x;
            } else {
                cell.1 += step.1;
                t_max.y += t_delta.y;
            }
        }
        (cells, false)
    }

    /// Inverse-sensor-model update for one scan taken at `base_pose`.
    ///
    /// Cells strictly between the sensor cell and the hit cell get `l_free`, the
    /// hit cell gets `l_occ`. Max-range beams only clear. Beams leaving the grid
    /// are truncated at the boundary.
    pub fn integrate_scan(&mut self, base_pose: &Pose2, scan: &LaserScan) -> Result<(), MappingError> {
        let sensor = base_pose.compose(&scan.mount_pose);
        if !self.in_bounds(self.world_to_cell(sensor.xy())) {
            return Err(MappingError::OutOfBounds {
                x: sensor.x,
                y: sensor.y,
            });
        }
        for (i, &range) in scan.ranges.iter().enumerate() {
            let miss = scan.is_miss(range);
            let reach = if miss { scan.max_range } else { range };
            let a = sensor.theta + scan.beam_angle(i);
            let end = sensor.xy() + Vector2::new(a.cos(), a.sin()) * reach;
            let (cells, reached) = self.traverse(sensor.xy(), end);
            let n = cells.len();
            for (k, &c) in cells.iter().enumerate().skip(1) {
                if k + 1 == n && reached && !miss {
                    self.add(c, self.l_occ);
                } else {
                    self.add(c, self.l_free);
                }
            }
        }
        Ok(())
    }

    /// Writes the header line followed by row-major probability bytes
    /// (`round(p·254)`, so the prior is 127).
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "OGRID 1 {} {} {} {} {} {}",
            self.origin.x, self.origin.y, self.origin.theta, self.resolution, self.width, self.height
        )?;
        let bytes: Vec<u8> = self
            .log_odds
            .iter()
            .map(|&l| (probability(l) * 254.0).round() as u8)
            .collect();
        w.write_all(&bytes)
    }

    pub fn read_from<R: BufRead>(mut r: R, cfg: &MappingConfig) -> Result<Self, GridFileError> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 8 || fields[0] != "OGRID" || fields[1] != "1" {
            return Err(GridFileError::Header(header.trim().to_string()));
        }
        let num = |i: usize| fields[i].parse::<f64>().map_err(|e| GridFileError::Header(format!("{}: {e}", fields[i])));
        let int = |i: usize| fields[i].parse::<usize>().map_err(|e| GridFileError::Header(format!("{}: {e}", fields[i])));
        let origin = Pose2::new(num(2)?, num(3)?, num(4)?);
        let resolution = num(5)?;
        if !(resolution > 0.0) {
            return Err(GridFileError::Header("resolution must be positive".into()));
        }
        let (width, height) = (int(6)?, int(7)?);
        let mut bytes = Vec::with_capacity(width * height);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != width * height {
            return Err(GridFileError::Truncated {
                expected: width * height,
                found: bytes.len(),
            });
        }
        let mut grid = Self::new(origin, resolution, width, height, cfg);
        for (l, &b) in grid.log_odds.iter_mut().zip(&bytes) {
            *l = if b == 127 {
                0.0
            } else {
                let p = b as f64 / 254.0;
                (p / (1.0 - p)).ln().clamp(cfg.l_min, cfg.l_max)
            };
        }
        Ok(grid)
    }
}

/// Pre-mission mapping pass: both LiDARs at every route pose, all scans integrated.
pub fn build_map<R: Rng + ?Sized>(
    world: &WorldModel,
    route: &[Pose2],
    robot: &RobotModel,
    lidar: &LidarConfig,
    cfg: &MappingConfig,
    rng: &mut R,
) -> Result<OccupancyGrid, MappingError> {
    let mut grid = OccupancyGrid::for_world(world, cfg);
    for pose in route {
        for mount in [LidarMount::Front, LidarMount::Back] {
            let scan = simulate_lidar(world, robot, pose, mount, lidar, rng, 0.0);
            grid.integrate_scan(pose, &scan)?;
        }
    }
    Ok(grid)
}

/// Noisy pose oracle standing in for visual-inertial localization.
pub fn localize<R: Rng + ?Sized>(true_pose: &Pose2, cfg: &LocalizationConfig, rng: &mut R, timestamp: f64) -> PoseEstimate {
    let dx = gaussian(rng, cfg.sigma_xy);
    let dy = gaussian(rng, cfg.sigma_xy);
    let dt = gaussian(rng, cfg.sigma_theta);
    PoseEstimate {
        pose: Pose2::new(true_pose.x + dx, true_pose.y + dy, normalize_angle(true_pose.theta + dt)),
        timestamp,
    }
}
