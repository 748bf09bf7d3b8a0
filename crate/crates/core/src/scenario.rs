//! Scenario files: world, robot and mission sections plus optional per-module
//! configuration, loaded from TOML with dotted-path overrides and validated
//! with field paths in every error.

use std::f64::consts::PI;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executive::ExecutiveConfig;
use crate::geometry::Pose2;
use crate::grasping::GraspingConfig;
use crate::mapping::{LocalizationConfig, MappingConfig};
use crate::navigation::NavigationConfig;
use crate::perception::PerceptionConfig;
use crate::reconstruction::ReconstructionConfig;
use crate::sensors::{DetectorConfig, LidarConfig};
use crate::world::{RobotModel, WorldModel};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid {path}: {message}")]
    Validation { path: String, message: String },
    #[error("bad override `{spec}`: {message}")]
    Override { spec: String, message: String },
}

impl ScenarioError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionSpec {
    /// Where the base starts; the mapping pass ends here too.
    pub start: Pose2,
    pub waypoints: Vec<Pose2>,
    pub target_class: String,
    pub drop_pose: Pose2,
    pub seed: u64,
    /// Poses for the pre-mission mapping pass. Empty means start, waypoints, drop.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mapping_route: Vec<Pose2>,
}

impl MissionSpec {
    pub fn effective_mapping_route(&self) -> Vec<Pose2> {
        if !self.mapping_route.is_empty() {
            return self.mapping_route.clone();
        }
        let mut route = vec![self.start];
        route.extend(self.waypoints.iter().copied());
        route.push(self.drop_pose);
        route
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorsConfig {
    pub lidar: LidarConfig,
    pub detector: DetectorConfig,
}

/// Tunables for every module, each section optional in the file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub sensors: SensorsConfig,
    pub mapping: MappingConfig,
    pub localization: LocalizationConfig,
    pub navigation: NavigationConfig,
    pub perception: PerceptionConfig,
    pub reconstruction: ReconstructionConfig,
    pub grasping: GraspingConfig,
    pub executive: ExecutiveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub world: WorldModel,
    pub robot: RobotModel,
    pub mission: MissionSpec,
    #[serde(flatten)]
    pub config: SimConfig,
}

const SECTIONS: [&str; 11] = [
    "world",
    "robot",
    "mission",
    "sensors",
    "mapping",
    "localization",
    "navigation",
    "perception",
    "reconstruction",
    "grasping",
    "executive",
];

/// Applies `section.key=value` overrides to a parsed document. The value is
/// read as a TOML value when it parses as one, else taken as a bare string.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<(), ScenarioError> {
    for spec in overrides {
        let err = |message: &str| ScenarioError::Override {
            spec: spec.clone(),
            message: message.into(),
        };
        let (path, raw) = spec.split_once('=').ok_or_else(|| err("expected section.key=value"))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
            return Err(err("path needs at least a section and a key"));
        }
        let value = parse_value(raw.trim());
        let mut table = &mut *doc;
        for key in &keys[..keys.len() - 1] {
            let entry = table
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry.as_table_mut().ok_or_else(|| err(&format!("`{key}` is not a table")))?;
        }
        table.insert(keys[keys.len() - 1].to_string(), value);
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn section<T: DeserializeOwned + Default>(doc: &toml::Table, name: &str) -> Result<T, ScenarioError> {
    match doc.get(name) {
        Some(_) => required_section(doc, name),
        None => Ok(T::default()),
    }
}

fn required_section<T: DeserializeOwned>(doc: &toml::Table, name: &str) -> Result<T, ScenarioError> {
    let v = doc.get(name).ok_or_else(|| ScenarioError::Parse {
        path: name.into(),
        message: "missing section".into(),
    })?;
    v.clone().try_into().map_err(|e: toml::de::Error| ScenarioError::Parse {
        path: name.into(),
        message: e.message().to_string(),
    })
}

impl Scenario {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ScenarioError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ScenarioError::Parse {
            path: "<document>".into(),
            message: e.to_string(),
        })?;
        apply_overrides(&mut doc, overrides)?;
        Self::from_table(&doc)
    }

    pub fn from_table(doc: &toml::Table) -> Result<Self, ScenarioError> {
        if let Some(unknown) = doc.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(ScenarioError::Parse {
                path: unknown.clone(),
                message: "unknown section".into(),
            });
        }
        let config = SimConfig {
            sensors: section(doc, "sensors")?,
            mapping: section(doc, "mapping")?,
            localization: section(doc, "localization")?,
            navigation: section(doc, "navigation")?,
            perception: section(doc, "perception")?,
            reconstruction: section(doc, "reconstruction")?,
            grasping: section(doc, "grasping")?,
            executive: section(doc, "executive")?,
        };
        let scenario = Self {
            world: required_section(doc, "world")?,
            robot: section(doc, "robot")?,
            mission: required_section(doc, "mission")?,
            config,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        validate_world(&self.world)?;
        validate_robot(&self.robot)?;
        validate_mission(&self.mission, &self.world)?;
        validate_config(&self.config)
    }
}

fn validate_world(w: &WorldModel) -> Result<(), ScenarioError> {
    let b = &w.bounds;
    if !(b.min[0] < b.max[0] && b.min[1] < b.max[1]) {
        return Err(ScenarioError::invalid("world.bounds", "min must be below max on both axes"));
    }
    if !(w.wall_height > 0.0) {
        return Err(ScenarioError::invalid("world.wall_height", "must be positive"));
    }
    for (i, t) in w.tables.iter().enumerate() {
        let path = format!("world.tables[{i}] ({})", t.id);
        if !(t.min[0] < t.max[0] && t.min[1] < t.max[1]) || !(t.height > 0.0) {
            return Err(ScenarioError::invalid(path, "footprint must be nonempty and height positive"));
        }
        if !b.contains(t.min[0], t.min[1]) || !b.contains(t.max[0], t.max[1]) {
            return Err(ScenarioError::invalid(path, "footprint leaves the world bounds"));
        }
    }
    for (i, o) in w.objects.iter().enumerate() {
        let path = format!("world.objects[{i}] ({})", o.id);
        if o.class_label.trim().is_empty() {
            return Err(ScenarioError::invalid(format!("{path}.class_label"), "must be nonempty"));
        }
        if !o.shape.dimensions_positive() {
            return Err(ScenarioError::invalid(format!("{path}.shape"), "dimensions must be positive"));
        }
        let t = o.pose.translation;
        if !b.contains(t.x, t.y) {
            return Err(ScenarioError::invalid(format!("{path}.pose"), "object lies outside the world bounds"));
        }
        let support = w.support_height(t.x, t.y);
        let bottom = o.lowest_z();
        if (bottom - support).abs() > 1e-6 {
            return Err(ScenarioError::invalid(
                format!("{path}.pose"),
                format!("bottom at z={bottom:.6} does not rest on its support at z={support:.6}"),
            ));
        }
    }
    Ok(())
}

fn validate_robot(r: &RobotModel) -> Result<(), ScenarioError> {
    if !(r.footprint_radius > 0.0) {
        return Err(ScenarioError::invalid("robot.footprint_radius", "must be positive"));
    }
    if !(r.arm.reach_min < r.arm.reach_max) {
        return Err(ScenarioError::invalid("robot.arm.reach_min", "must be below reach_max"));
    }
    if !(r.arm.z_min < r.arm.z_max) {
        return Err(ScenarioError::invalid("robot.arm.z_min", "must be below z_max"));
    }
    if !(r.arm.workspace_sector > 0.0 && r.arm.workspace_sector <= PI) {
        return Err(ScenarioError::invalid("robot.arm.workspace_sector", "must be in (0, pi]"));
    }
    if !(r.gripper.max_opening > 0.0) {
        return Err(ScenarioError::invalid("robot.gripper.max_opening", "must be positive"));
    }
    if !(r.gripper.finger_depth > 0.0 && r.gripper.hand_width > 0.0) {
        return Err(ScenarioError::invalid("robot.gripper", "finger_depth and hand_width must be positive"));
    }
    if !r.wrist_camera.intrinsics.is_valid() || r.wrist_camera.depth_downscale == 0 {
        return Err(ScenarioError::invalid("robot.wrist_camera", "intrinsics must be positive and depth_downscale at least 1"));
    }
    Ok(())
}

fn validate_mission(m: &MissionSpec, w: &WorldModel) -> Result<(), ScenarioError> {
    let b = &w.bounds;
    if m.waypoints.is_empty() {
        return Err(ScenarioError::invalid("mission.waypoints", "at least one waypoint is required"));
    }
    if m.target_class.trim().is_empty() {
        return Err(ScenarioError::invalid("mission.target_class", "must be nonempty"));
    }
    if !b.contains(m.start.x, m.start.y) {
        return Err(ScenarioError::invalid("mission.start", "outside the world bounds"));
    }
    if !b.contains(m.drop_pose.x, m.drop_pose.y) {
        return Err(ScenarioError::invalid("mission.drop_pose", "outside the world bounds"));
    }
    for (name, list) in [("waypoints", &m.waypoints), ("mapping_route", &m.mapping_route)] {
        if let Some(i) = list.iter().position(|p| !b.contains(p.x, p.y)) {
            return Err(ScenarioError::invalid(format!("mission.{name}[{i}]"), "outside the world bounds"));
        }
    }
    Ok(())
}

fn validate_config(c: &SimConfig) -> Result<(), ScenarioError> {
    let positive = [
        ("sensors.lidar.max_range", c.sensors.lidar.max_range),
        ("mapping.resolution", c.mapping.resolution),
        ("navigation.lookahead", c.navigation.lookahead),
        ("navigation.v_max", c.navigation.v_max),
        ("navigation.w_max", c.navigation.w_max),
        ("navigation.standoff", c.navigation.standoff),
        ("reconstruction.voxel_size", c.reconstruction.voxel_size),
        ("reconstruction.truncation", c.reconstruction.truncation),
        ("reconstruction.volume_size", c.reconstruction.volume_size),
        ("grasping.slide_step", c.grasping.slide_step),
        ("executive.tick_rate_hz", c.executive.tick_rate_hz as f64),
    ];
    for (path, v) in positive {
        if !(v > 0.0) {
            return Err(ScenarioError::invalid(path, "must be positive"));
        }
    }
    if c.sensors.lidar.n_beams < 2 {
        return Err(ScenarioError::invalid("sensors.lidar.n_beams", "at least 2 beams are required"));
    }
    if !(c.mapping.l_min < 0.0 && c.mapping.l_max > 0.0) {
        return Err(ScenarioError::invalid("mapping.l_min", "clamp range must straddle zero"));
    }
    if c.navigation.max_standoff < c.navigation.standoff {
        return Err(ScenarioError::invalid("navigation.max_standoff", "must be at least standoff"));
    }
    if c.perception.maturity_frames < 2 {
        return Err(ScenarioError::invalid("perception.maturity_frames", "triangulation needs at least 2 frames"));
    }
    let e = &c.executive;
    for (path, v) in [
        ("executive.camera_period_ticks", e.camera_period_ticks),
        ("executive.detector_period_ticks", e.detector_period_ticks),
        ("executive.lidar_period_ticks", e.lidar_period_ticks),
    ] {
        if v == 0 {
            return Err(ScenarioError::invalid(path, "must be at least one tick"));
        }
    }
    if e.search_laps == 0 {
        return Err(ScenarioError::invalid("executive.search_laps", "must be at least 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[world]
bounds = { min = [0.0, 0.0], max = [4.0, 4.0] }
walls = [
  { a = [0.0, 0.0], b = [4.0, 0.0] },
  { a = [4.0, 0.0], b = [4.0, 4.0] },
  { a = [4.0, 4.0], b = [0.0, 4.0] },
  { a = [0.0, 4.0], b = [0.0, 0.0] },
]

[[world.tables]]
id = "table"
min = [2.5, 2.5]
max = [3.5, 3.5]
height = 0.75

[[world.objects]]
id = "banana"
class_label = "banana"
shape = { type = "capsule", radius = 0.018, length = 0.18 }
pose = { translation = [3.0, 3.0, 0.768], rotation = [0.7071067811865476, 0.0, 0.7071067811865476, 0.0] }

[mission]
start = { x = 1.0, y = 1.0 }
waypoints = [{ x = 2.0, y = 1.0, theta = 1.5707963267948966 }]
target_class = "banana"
drop_pose = { x = 1.0, y = 3.0 }
seed = 7
"#;

    #[test]
    fn minimal_scenario_loads() {
        let s = Scenario::from_toml_str(MINIMAL, &[]).unwrap();
        assert_eq!(s.world.objects.len(), 1);
        assert_eq!(s.world.walls.len(), 4);
        assert_eq!(s.mission.seed, 7);
        assert_eq!(s.config, SimConfig::default());
    }

    #[test]
    fn floating_object_is_named() {
        let text = MINIMAL.replace("0.768]", "0.868]");
        match Scenario::from_toml_str(&text, &[]) {
            Err(ScenarioError::Validation { path, .. }) => assert!(path.contains("banana"), "{path}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn serialize_then_load_is_identical() {
        let s = Scenario::from_toml_str(MINIMAL, &[]).unwrap();
        let again = Scenario::from_toml_str(&s.to_toml_string(), &[]).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let s = Scenario::from_toml_str(
            MINIMAL,
            &["navigation.standoff=0.6".into(), "sensors.lidar.noise_sigma=0".into(), "mission.seed=11".into()],
        )
        .unwrap();
        assert_eq!(s.config.navigation.standoff, 0.6);
        assert_eq!(s.config.sensors.lidar.noise_sigma, 0.0);
        assert_eq!(s.mission.seed, 11);
    }

    #[test]
    fn typo_in_override_is_rejected_with_section() {
        match Scenario::from_toml_str(MINIMAL, &["navigation.standof=0.6".into()]) {
            Err(ScenarioError::Parse { path, message }) => {
                assert_eq!(path, "navigation");
                assert!(message.contains("standof"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            Scenario::from_toml_str(MINIMAL, &["nonsense".into()]),
            Err(ScenarioError::Override { .. })
        ));
    }

    #[test]
    fn empty_waypoints_rejected() {
        let text = MINIMAL.replace("waypoints = [{ x = 2.0, y = 1.0, theta = 1.5707963267948966 }]", "waypoints = []");
        match Scenario::from_toml_str(&text, &[]) {
            Err(ScenarioError::Validation { path, .. }) => assert_eq!(path, "mission.waypoints"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_mapping_route_visits_everything() {
        let s = Scenario::from_toml_str(MINIMAL, &[]).unwrap();
        let route = s.mission.effective_mapping_route();
        assert_eq!(route.len(), 3);
        assert_eq!(route[0], s.mission.start);
        assert_eq!(route[2], s.mission.drop_pose);
    }
}
