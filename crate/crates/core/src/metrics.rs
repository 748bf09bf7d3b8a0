//! Mission metrics, computed only from a trace and the scenario's ground truth
//! so that a saved trace reproduces its report exactly.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::executive::TraceEvent;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mission_outcome: String,
    pub sim_time: f64,
    pub base_path_length: f64,
    /// From the first sighting of the localized track to its triangulation.
    pub detection_to_triangulation_latency: Option<f64>,
    pub triangulation_error: Option<f64>,
    pub grasp_score: Option<f64>,
    pub delivery_error: Option<f64>,
}

fn f(v: &Value, key: &str) -> Option<f64> {
    v.get(key).and_then(Value::as_f64)
}

fn vec3(v: &Value) -> Option<Vector3<f64>> {
    let a = v.as_array()?;
    Some(Vector3::new(a.first()?.as_f64()?, a.get(1)?.as_f64()?, a.get(2)?.as_f64()?))
}

pub fn compute_metrics(trace: &[TraceEvent], scenario: &Scenario) -> MetricsReport {
    let mut outcome = String::from("unknown");
    let mut delivery_error = None;
    let mut path = 0.0;
    let mut last_xy: Option<(f64, f64)> = None;
    let mut first_seen: BTreeMap<u64, f64> = BTreeMap::new();
    let mut latency = None;
    let mut tri_error = None;
    let mut grasp_score = None;

    let truth = scenario
        .world
        .objects
        .iter()
        .find(|o| o.class_label == scenario.mission.target_class)
        .map(|o| o.pose.translation);

    for e in trace {
        match e.kind.as_str() {
            "lidar" => {
                if let Some(p) = e.payload.get("pose") {
                    if let (Some(x), Some(y)) = (f(p, "x"), f(p, "y")) {
                        if let Some((px, py)) = last_xy {
                            path += (x - px).hypot(y - py);
                        }
                        last_xy = Some((x, y));
                    }
                }
            }
            "track" => {
                let id = e.payload.get("track_id").and_then(Value::as_u64);
                let kind = e.payload.get("kind").and_then(Value::as_str);
                if let Some(id) = id {
                    first_seen.entry(id).or_insert(e.t);
                    if kind == Some("triangulated") && latency.is_none() {
                        if let Some(est) = e.payload.get("estimate") {
                            latency = Some(e.t - first_seen[&id]);
                            let pos = est.get("position").and_then(vec3);
                            tri_error = pos.zip(truth).map(|(p, t)| (p - t).norm());
                        }
                    }
                }
            }
            "grasp_selected" => grasp_score = f(&e.payload, "score"),
            "mission_end" => {
                if let Some(o) = e.payload.get("outcome") {
                    let status = o.get("status").and_then(Value::as_str).unwrap_or("unknown");
                    outcome = match o.get("at_action").and_then(Value::as_str) {
                        Some(a) => format!("{status}({a})"),
                        None => status.to_string(),
                    };
                }
                delivery_error = f(&e.payload, "delivery_error");
            }
            _ => {}
        }
    }
    MetricsReport {
        mission_outcome: outcome,
        sim_time: trace.last().map(|e| e.t).unwrap_or(0.0),
        base_path_length: path,
        detection_to_triangulation_latency: latency,
        triangulation_error: tri_error,
        grasp_score,
        delivery_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ev(t: f64, kind: &str, payload: Value) -> TraceEvent {
        TraceEvent {
            t,
            tick: (t * 30.0).round() as u64,
            kind: kind.into(),
            payload,
        }
    }

    fn scenario() -> Scenario {
        Scenario::from_toml_str(include_str!("../../../scenarios/reference.toml"), &[]).unwrap()
    }

    #[test]
    fn metrics_from_hand_built_trace() {
        let trace = vec![
            ev(0.0, "lidar", json!({ "pose": { "x": 0.0, "y": 0.0, "theta": 0.0 } })),
            ev(0.1, "lidar", json!({ "pose": { "x": 3.0, "y": 4.0, "theta": 0.0 } })),
            ev(1.0, "track", json!({ "kind": "spawn", "track_id": 3, "frames": 1 })),
            ev(3.0, "track", json!({ "kind": "triangulated", "track_id": 3, "frames": 30, "estimate": { "position": [11.1, 3.55, 0.868] } })),
            ev(5.0, "grasp_selected", json!({ "score": 0.75 })),
            ev(9.0, "mission_end", json!({ "outcome": { "status": "failed", "at_action": "grasp", "reason": "x" }, "delivery_error": 7.5 })),
        ];
        let m = compute_metrics(&trace, &scenario());
        assert_eq!(m.mission_outcome, "failed(grasp)");
        assert_eq!(m.base_path_length, 5.0);
        assert_eq!(m.detection_to_triangulation_latency, Some(2.0));
        assert!((m.triangulation_error.unwrap() - 0.1).abs() < 1e-9);
        assert_eq!(m.grasp_score, Some(0.75));
        assert_eq!(m.delivery_error, Some(7.5));
        assert_eq!(m.sim_time, 9.0);
    }
}
