mod support;

use fetchsim::executive::{run_mission, ActionKind, MissionOptions, MissionOutcome, TraceEvent};
use fetchsim::metrics::compute_metrics;
use fetchsim::scenario::Scenario;
use nalgebra::Vector3;
use serde_json::Value;

use support::oracles::antipodal_contact_ok;

const REFERENCE: &str = include_str!("../../../scenarios/reference.toml");

fn reference(overrides: &[&str]) -> Scenario {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Scenario::from_toml_str(REFERENCE, &overrides).unwrap()
}

fn events<'a>(trace: &'a [TraceEvent], kind: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
    trace.iter().filter(move |e| e.kind == kind)
}

fn vec3(v: &Value) -> Vector3<f64> {
    let a = v.as_array().unwrap();
    Vector3::new(a[0].as_f64().unwrap(), a[1].as_f64().unwrap(), a[2].as_f64().unwrap())
}

#[test]
fn reference_seed_42_delivers_the_banana() {
    let scenario = reference(&[]);
    let result = run_mission(&scenario, &MissionOptions::default()).unwrap();
    assert_eq!(result.outcome, MissionOutcome::Succeeded);

    let metrics = compute_metrics(&result.trace, &scenario);
    assert!(metrics.triangulation_error.unwrap() < 0.15, "{metrics:?}");
    assert!(metrics.delivery_error.unwrap() <= 0.5, "{metrics:?}");

    let banana = scenario.world.objects.iter().find(|o| o.id == "banana").unwrap();
    let grasp = events(&result.trace, "grasp_result").next().unwrap();
    assert_eq!(grasp.payload["outcome"], "held");
    let center = vec3(&grasp.payload["center"]);
    let closing = vec3(&grasp.payload["closing"]);
    let gripper = scenario.robot.gripper;
    assert!(antipodal_contact_ok(banana, &center, &closing, gripper.max_opening, scenario.config.grasping.angle_max));

    let delivered = result.final_world.objects.iter().find(|o| o.id == "banana").unwrap();
    let drop = scenario.mission.drop_pose;
    assert!((delivered.pose.translation.xy() - drop.xy()).norm() <= 0.5);
}

#[test]
fn approach_ends_facing_the_estimate() {
    let result = run_mission(&reference(&[]), &MissionOptions::default()).unwrap();
    let estimate = vec3(&events(&result.trace, "target_localized").next().unwrap().payload["position"]);
    let approach_t = events(&result.trace, "approach_pose").next().unwrap().t;
    let arrived = events(&result.trace, "arrived").find(|e| e.t >= approach_t).unwrap();
    let pose = &arrived.payload["pose"];
    let (x, y, theta) = (pose["x"].as_f64().unwrap(), pose["y"].as_f64().unwrap(), pose["theta"].as_f64().unwrap());
    let facing = (estimate.y - y).atan2(estimate.x - x);
    let err = (theta - facing + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    assert!(err.abs() < 0.1, "heading error {err}");
}

#[test]
fn most_seeds_succeed() {
    let wins = (1..=20)
        .filter(|&seed| {
            let s = reference(&[&format!("mission.seed={seed}")]);
            run_mission(&s, &MissionOptions::default()).unwrap().outcome.is_success()
        })
        .count();
    assert!(wins >= 16, "{wins}/20");
}

#[test]
fn missing_target_aborts_search_after_two_laps() {
    let result = run_mission(&reference(&["mission.target_class=\"teapot\""]), &MissionOptions::default()).unwrap();
    assert!(matches!(&result.outcome, MissionOutcome::Failed { at_action, .. } if *at_action == ActionKind::Search));
    let laps: Vec<u64> = events(&result.trace, "waypoint").map(|e| e.payload["lap"].as_u64().unwrap()).collect();
    assert_eq!(laps.iter().filter(|&&l| l == 0).count(), 4);
    assert_eq!(laps.iter().filter(|&&l| l == 1).count(), 4);
}

#[test]
fn unreachable_first_scan_repositions_exactly_once() {
    let scenario = reference(&["navigation.standoff=0.6", "navigation.max_standoff=1.2"]);
    let result = run_mission(&scenario, &MissionOptions::default()).unwrap();
    assert_eq!(result.outcome, MissionOutcome::Succeeded);
    assert_eq!(events(&result.trace, "reposition").count(), 1);
    assert_eq!(events(&result.trace, "reconstruction").count(), 2);
}

#[test]
fn trace_is_ordered_with_one_terminal_event() {
    let result = run_mission(&reference(&[]), &MissionOptions::default()).unwrap();
    assert!(result.trace.windows(2).all(|w| w[0].t <= w[1].t && w[0].tick <= w[1].tick));
    assert_eq!(events(&result.trace, "mission_end").count(), 1);
    assert_eq!(result.trace.last().unwrap().kind, "mission_end");
}
