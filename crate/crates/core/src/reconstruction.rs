//! Dense capture around a localized object: the four scan views, projective
//! TSDF fusion, zero-crossing extraction and the point-cloud stitching path.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose3;
use crate::sensors::DepthImage;
use crate::spatial::PointIndex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructionError {
    #[error("scan volume contains no surface")]
    EmptyVolume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionMode {
    Stitch,
    Tsdf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub mode: ReconstructionMode,
    pub voxel_size: f64,
    pub truncation: f64,
    pub max_weight: f64,
    pub min_weight: f64,
    /// Edge length of the cubic scan volume centered on the object estimate.
    pub volume_size: f64,
    pub view_radius: f64,
    pub view_height: f64,
    /// Degrees, relative to the robot heading.
    pub view_azimuths: [f64; 4],
    pub depth_max: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            mode: ReconstructionMode::Stitch,
            voxel_size: 0.01,
            truncation: 0.04,
            max_weight: 64.0,
            min_weight: 1.0,
            volume_size: 0.6,
            view_radius: 0.3,
            view_height: 0.35,
            view_azimuths: [45.0, 135.0, 225.0, 315.0],
            depth_max: 2.0,
        }
    }
}

/// The four look-at poses around the object.
pub fn scan_views(object_pos: &Vector3<f64>, robot_heading: f64, cfg: &ReconstructionConfig) -> [Pose3; 4] {
    cfg.view_azimuths.map(|az| {
        let a = robot_heading + az.to_radians();
        let eye = object_pos + Vector3::new(cfg.view_radius * a.cos(), cfg.view_radius * a.sin(), cfg.view_height);
        Pose3::look_at(eye, *object_pos)
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Camera positions the points were observed from.
    pub viewpoints: Vec<Vector3<f64>>,
    /// Index into `viewpoints` per point, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_view: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn viewpoint_centroid(&self) -> Option<Vector3<f64>> {
        if self.viewpoints.is_empty() {
            return None;
        }
        Some(self.viewpoints.iter().sum::<Vector3<f64>>() / self.viewpoints.len() as f64)
    }

    pub fn to_xyz(&self) -> String {
        let mut s = String::with_capacity(self.points.len() * 30);
        for v in &self.viewpoints {
            let _ = writeln!(s, "# viewpoint {:.6} {:.6} {:.6}", v.x, v.y, v.z);
        }
        for p in &self.points {
            let _ = writeln!(s, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
        }
        s
    }

    pub fn from_xyz(text: &str) -> Result<Self, String> {
        let mut points = Vec::new();
        let mut viewpoints = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let mut line = line.trim();
            let is_view = line.starts_with("# viewpoint");
            if is_view {
                line = line.trim_start_matches("# viewpoint");
            } else if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| format!("line {}: {e}", n + 1)))
                .collect::<Result<_, _>>()?;
            if v.len() != 3 {
                return Err(format!("line {}: expected 3 values, found {}", n + 1, v.len()));
            }
            let p = Vector3::new(v[0], v[1], v[2]);
            if is_view {
                viewpoints.push(p);
            } else {
                points.push(p);
            }
        }
        Ok(Self {
            points,
            viewpoints,
            source_view: None,
        })
    }
}

/// Axis-aligned cubic scan volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanVolume {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl ScanVolume {
    pub fn centered(center: &Vector3<f64>, size: f64) -> Self {
        let h = Vector3::repeat(size / 2.0);
        Self {
            min: center - h,
            max: center + h,
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfGrid {
    /// Lower corner of voxel (0, 0, 0).
    pub origin: Vector3<f64>,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub tsdf: Vec<f64>,
    pub weight: Vec<f64>,
    pub truncation: f64,
    pub max_weight: f64,
}

impl TsdfGrid {
    pub fn new(volume: &ScanVolume, voxel_size: f64, truncation: f64, max_weight: f64) -> Self {
        let ext = volume.max - volume.min;
        let dims = [0, 1, 2].map(|i| ((ext[i] / voxel_size).round() as usize).max(1));
        let n = dims[0] * dims[1] * dims[2];
        Self {
            origin: volume.min,
            voxel_size,
            dims,
            tsdf: vec![truncation; n],
            weight: vec![0.0; n],
            truncation,
            max_weight,
        }
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel_size
    }

    /// Projective fusion of one depth image: sdf is measured along the optical
    /// axis using the nearest pixel, voxels farther than τ behind the surface
    /// are left untouched.
    pub fn integrate(&mut self, depth: &DepthImage) {
        let pose = depth.camera_pose;
        let k = depth.intrinsics;
        let (w, h) = (depth.width() as i64, depth.height() as i64);
        let tau = self.truncation;
        for kk in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let p = pose.inverse_transform_point(&self.center(i, j, kk));
                    let Some((u, v)) = k.project(&p) else {
                        continue;
                    };
                    let (u, v) = (u.round() as i64, v.round() as i64);
                    if u < 0 || v < 0 || u >= w || v >= h {
                        continue;
                    }
                    let d = depth.at(u as usize, v as usize);
                    if d <= 0.0 {
                        continue;
                    }
                    let sdf = d - p.z;
                    if sdf < -tau {
                        continue;
                    }
                    let idx = self.index(i, j, kk);
                    let wt = self.weight[idx];
                    self.tsdf[idx] = (wt * self.tsdf[idx] + sdf.min(tau)) / (wt + 1.0);
                    self.weight[idx] = (wt + 1.0).min(self.max_weight);
                }
            }
        }
    }

    /// Linearly interpolated zero crossings on voxel-center edges whose ends are
    /// both observed with at least `min_weight`. Exact zeros count as positive.
    pub fn extract_surface(&self, min_weight: f64) -> Result<PointCloud, ReconstructionError> {
        let dedupe = self.voxel_size / 10.0;
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut points: Vec<Vector3<f64>> = Vec::new();
        let [nx, ny, nz] = self.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let a = self.index(i, j, k);
                    if self.weight[a] < min_weight {
                        continue;
                    }
                    for (di, dj, dk) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                        let (i2, j2, k2) = (i + di, j + dj, k + dk);
                        if i2 >= nx || j2 >= ny || k2 >= nz {
                            continue;
                        }
                        let b = self.index(i2, j2, k2);
                        if self.weight[b] < min_weight {
                            continue;
                        }
                        let (ta, tb) = (self.tsdf[a], self.tsdf[b]);
                        if (ta >= 0.0) == (tb >= 0.0) {
                            continue;
                        }
                        let t = ta / (ta - tb);
                        let pa = self.center(i, j, k);
                        let p = pa + (self.center(i2, j2, k2) - pa) * t;
                        let key = [0, 1, 2].map(|c| (p[c] / dedupe).floor() as i64);
                        let mut dup = false;
                        'probe: for ox in -1..=1 {
                            for oy in -1..=1 {
                                for oz in -1..=1 {
                                    if let Some(list) = buckets.get(&[key[0] + ox, key[1] + oy, key[2] + oz]) {
                                        if list.iter().any(|&q| (points[q] - p).norm() < dedupe) {
                                            dup = true;
                                            break 'probe;
                                        }
                                    }
                                }
                            }
                        }
                        if !dup {
                            buckets.entry(key).or_default().push(points.len());
                            points.push(p);
                        }
                    }
                }
            }
        }
        if points.is_empty() {
            return Err(ReconstructionError::EmptyVolume);
        }
        Ok(PointCloud {
            points,
            ..Default::default()
        })
    }
}

/// Fuses the views into a TSDF over the scan volume and extracts its surface.
pub fn reconstruct_tsdf(depths: &[DepthImage], center: &Vector3<f64>, cfg: &ReconstructionConfig) -> Result<PointCloud, ReconstructionError> {
    let volume = ScanVolume::centered(center, cfg.volume_size);
    let mut grid = TsdfGrid::new(&volume, cfg.voxel_size, cfg.truncation, cfg.max_weight);
    for d in depths {
        grid.integrate(d);
    }
    let mut cloud = grid.extract_surface(cfg.min_weight)?;
    cloud.viewpoints = depths.iter().map(|d| d.camera_pose.translation).collect();
    Ok(cloud)
}

/// Back-projects every view, crops to the scan volume and keeps one centroid
/// per occupied voxel.
pub fn stitch_pointclouds(depths: &[DepthImage], center: &Vector3<f64>, cfg: &ReconstructionConfig) -> Result<PointCloud, ReconstructionError> {
    let volume = ScanVolume::centered(center, cfg.volume_size);
    let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, usize, usize)> = BTreeMap::new();
    for (view, d) in depths.iter().enumerate() {
        for p in d.world_points() {
            if !volume.contains(&p) {
                continue;
            }
            let key = [0, 1, 2].map(|c| ((p[c] - volume.min[c]) / cfg.voxel_size).floor() as i64);
            let e = cells.entry(key).or_insert((Vector3::zeros(), 0, view));
            e.0 += p;
            e.1 += 1;
        }
    }
    if cells.is_empty() {
        return Err(ReconstructionError::EmptyVolume);
    }
    let (points, views) = cells.values().map(|(sum, n, view)| (sum / *n as f64, *view)).unzip();
    Ok(PointCloud {
        points,
        viewpoints: depths.iter().map(|d| d.camera_pose.translation).collect(),
        source_view: Some(views),
    })
}

pub fn reconstruct(depths: &[DepthImage], center: &Vector3<f64>, cfg: &ReconstructionConfig) -> Result<PointCloud, ReconstructionError> {
    match cfg.mode {
        ReconstructionMode::Stitch => stitch_pointclouds(depths, center, cfg),
        ReconstructionMode::Tsdf => reconstruct_tsdf(depths, center, cfg),
    }
}

/// Centroid of the point cluster standing on the dominant horizontal support
/// closest to `anchor`. Points are linked into clusters when within two
/// voxels of each other; clusters of fewer than `min_points` are ignored.
pub fn locate_object(cloud: &PointCloud, anchor: &Vector3<f64>, voxel_size: f64, min_points: usize) -> Option<Vector3<f64>> {
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for p in &cloud.points {
        *bins.entry((p.z / voxel_size).floor() as i64).or_default() += 1;
    }
    let (&support_bin, _) = bins.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
    let support_top = (support_bin + 1) as f64 * voxel_size;
    let above: Vec<Vector3<f64>> = cloud.points.iter().filter(|p| p.z > support_top + 0.5 * voxel_size).copied().collect();
    let link = 2.0 * voxel_size;
    let index = PointIndex::new(&above, link);
    let mut label = vec![usize::MAX; above.len()];
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for seed in 0..above.len() {
        if label[seed] != usize::MAX {
            continue;
        }
        label[seed] = seed;
        let mut members = vec![seed];
        let mut head = 0;
        while head < members.len() {
            for n in index.within(&above[members[head]], link) {
                if label[n] == usize::MAX {
                    label[n] = seed;
                    members.push(n);
                }
            }
            head += 1;
        }
        if members.len() < min_points {
            continue;
        }
        let gap = members.iter().map(|&i| (above[i] - anchor).norm()).fold(f64::INFINITY, f64::min);
        let centroid = members.iter().map(|&i| above[i]).sum::<Vector3<f64>>() / members.len() as f64;
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, centroid));
        }
    }
    best.map(|(_, c)| c)
}
