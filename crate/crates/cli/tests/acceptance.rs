#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use fetchsim::executive::{run_mission, ActionKind, Fault, MissionOptions, MissionOutcome, TraceEvent};
use fetchsim::geometry::{Pose2, Pose3};
use fetchsim::grasping::{check_reachable, estimate_normals, generate_candidates, score_candidates, select_grasp, GraspSelection, GraspingConfig};
use fetchsim::mapping::build_map;
use fetchsim::navigation::{plan_global, CellState, CostGrid, NavError, NavigationConfig};
use fetchsim::perception::{triangulate, PerceptionConfig, TrackEventKind};
use fetchsim::reconstruction::{reconstruct, reconstruct_tsdf, stitch_pointclouds, ReconstructionConfig, ReconstructionMode};
use fetchsim::rng::{stream, Stream};
use fetchsim::scenario::Scenario;
use fetchsim::sensors::render_depth;
use fetchsim::world::RobotModel;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use oracles::*;

const REFERENCE: &str = include_str!("../../../scenarios/reference.toml");

fn scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/reference.toml")
}

fn reference(overrides: &[&str]) -> Scenario {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Scenario::from_toml_str(REFERENCE, &overrides).expect("reference scenario loads")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fetchsim-acceptance-{}", std::process::id())).join(name);
    std::fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

struct CliRun {
    success: bool,
    wall_time: f64,
    out: PathBuf,
}

/// Runs `fetchsim [global] run <reference> [run_args] --out <scratch/name>`.
fn cli_run(name: &str, global: &[&str], run_args: &[&str]) -> CliRun {
    let out = scratch(name);
    let started = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_fetchsim"))
        .args(global)
        .arg("run")
        .arg(scenario_path())
        .args(run_args)
        .arg("--out")
        .arg(&out)
        .output()
        .expect("binary runs")
        .status;
    CliRun {
        success: status.success(),
        wall_time: started.elapsed().as_secs_f64(),
        out,
    }
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    std::fs::read(dir.join(file)).unwrap_or_default()
}

fn events<'a>(trace: &'a [TraceEvent], kind: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
    trace.iter().filter(move |e| e.kind == kind)
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn end_to_end_mission() -> Verdict {
    let run = cli_run("seed42", &[], &["--seed", "42"]);
    let metrics: Value = serde_json::from_slice(&read(&run.out, "metrics.json")).unwrap_or(Value::Null);
    let delivery = metrics["delivery_error"].as_f64().unwrap_or(f64::INFINITY);
    let successes = (1..=20).filter(|seed| cli_run(&format!("seed{seed}"), &[], &["--seed", &seed.to_string()]).success).count();
    verdict(
        run.success && delivery <= 0.5 && run.wall_time < 30.0 && successes >= 16,
        format!(
            "seed 42 exit ok={} delivery {delivery:.3} m wall {:.2} s; seeds 1-20 succeeded {successes}/20",
            run.success, run.wall_time
        ),
    )
}

fn no_recovery() -> Verdict {
    let cases = [
        (Fault::Search, ActionKind::Search),
        (Fault::Approach, ActionKind::Approach),
        (Fault::Scan, ActionKind::Scan),
        (Fault::Grasp, ActionKind::Grasp),
        (Fault::Drop, ActionKind::Drop),
    ];
    let mut good = 0;
    for (fault, action) in cases {
        let opts = MissionOptions {
            fault: Some(fault),
            ..Default::default()
        };
        let result = run_mission(&reference(&[]), &opts).expect("mission runs");
        let failed_here = matches!(&result.outcome, MissionOutcome::Failed { at_action, .. } if *at_action == action);
        let started: Vec<String> = events(&result.trace, "action")
            .filter(|e| e.payload["to"] == "active")
            .map(|e| e.payload["action"].as_str().unwrap_or_default().to_string())
            .collect();
        let upto = ActionKind::SEQUENCE.iter().position(|&a| a == action).expect("action in sequence");
        let prefix: Vec<String> = ActionKind::SEQUENCE[..=upto].iter().map(|a| a.name().to_string()).collect();
        if failed_here && started == prefix {
            good += 1;
        }
    }
    verdict(good == 5, format!("{good}/5 faults failed at their own action with a prefix trace"))
}

fn track_maturity() -> Verdict {
    let events = scripted_track_stream(120);
    let tri: Vec<_> = events.iter().filter(|(_, e)| e.kind == TrackEventKind::Triangulated).collect();
    let at_30 = tri.len() == 1 && tri[0].1.frames == 30 && tri[0].1.estimate.is_some();
    let early = events.iter().any(|(_, e)| e.kind == TrackEventKind::Triangulated && e.frames < 30);
    let result = run_mission(&reference(&[]), &MissionOptions::default()).expect("mission runs");
    let mission_frames: Vec<u64> = events_of_kind(&result.trace, "triangulated").collect();
    let mission_ok = !mission_frames.is_empty() && mission_frames.iter().all(|&f| f >= 30);
    verdict(
        at_30 && !early && mission_ok,
        format!(
            "scripted stream triangulated at frames {:?}; mission triangulations at frames {mission_frames:?}",
            tri.iter().map(|(_, e)| e.frames).collect::<Vec<_>>()
        ),
    )
}

fn events_of_kind<'a>(trace: &'a [TraceEvent], kind: &'a str) -> impl Iterator<Item = u64> + 'a {
    events(trace, "track").filter(move |e| e.payload["kind"] == kind).filter_map(|e| e.payload["frames"].as_u64())
}

fn triangulation_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_residual, mut worst_error) = (0.0f64, 0.0f64);
    let mut failures = 0;
    for _ in 0..1000 {
        let target = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let n = rng.random_range(2..=10);
        let mut rays: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::with_capacity(n);
        while rays.len() < n {
            let origin = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            if (target - origin).norm() < 0.5 {
                continue;
            }
            let dir = (target - origin).normalize();
            // keep the rays clearly non-parallel
            if rays.iter().any(|(_, d)| d.cross(&dir).norm() < 0.05) {
                continue;
            }
            rays.push((origin, dir));
        }
        match triangulate(&rays, None) {
            Ok(t) => {
                worst_residual = worst_residual.max(t.residual_rms);
                worst_error = worst_error.max((t.position - target).norm());
            }
            Err(_) => failures += 1,
        }
    }
    let target = Vector3::new(5.0, 0.0, 1.0);
    let near_parallel: Vec<_> = [Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 1e-4, 1.0)]
        .into_iter()
        .map(|o| (o, (target - o).normalize()))
        .collect();
    let unchecked = triangulate(&near_parallel, None).is_ok();
    let default_cfg = PerceptionConfig::default();
    let default_check = default_cfg.min_baseline_check.then_some(default_cfg.max_condition);
    let with_default = triangulate(&near_parallel, default_check).is_ok();
    verdict(
        failures == 0 && worst_residual < 1e-9 && worst_error < 1e-7 && unchecked && with_default,
        format!(
            "1000 ray sets: max residual {worst_residual:.2e}, max error {worst_error:.2e} m, {failures} errors; near-parallel pair estimated={unchecked}"
        ),
    )
}

fn planner_optimality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let unknown_cost = NavigationConfig::default().unknown_cost;
    let (mut agree, mut no_path) = (0, 0);
    for _ in 0..200 {
        let (w, h) = (rng.random_range(2..=50usize), rng.random_range(2..=50usize));
        let blocked = rng.random_range(0.05..0.45);
        let cells: Vec<CellState> = (0..w * h)
            .map(|_| {
                let u: f64 = rng.random();
                if u < blocked * 0.7 {
                    CellState::Occupied
                } else if u < blocked {
                    CellState::Inflated
                } else if u < blocked + 0.1 {
                    CellState::Unknown
                } else {
                    CellState::Free
                }
            })
            .collect();
        let mut grid = CostGrid::from_states(Pose2::new(-1.0, 2.0, 0.0), 0.05, w, h, cells);
        let pick = |grid: &mut CostGrid, rng: &mut ChaCha8Rng| {
            let c = (rng.random_range(0..w as i64), rng.random_range(0..h as i64));
            let i = grid.index(c);
            if grid.cells[i].is_blocking() {
                grid.cells[i] = CellState::Free;
            }
            c
        };
        let s = pick(&mut grid, &mut rng);
        let g = pick(&mut grid, &mut rng);
        let (sp, gp) = (grid.cell_center(s), grid.cell_center(g));
        let planned = plan_global(&grid, &Pose2::new(sp.x, sp.y, 0.0), &Pose2::new(gp.x, gp.y, 0.0), unknown_cost);
        match (planned, dijkstra_cost(&grid, s, g, unknown_cost)) {
            (Ok(path), Some(cost)) if path.cost == cost => agree += 1,
            (Err(NavError::NoPath { .. }), None) => {
                agree += 1;
                no_path += 1;
            }
            _ => {}
        }
    }
    verdict(agree == 200, format!("{agree}/200 grids agree with Dijkstra ({no_path} without a path)"))
}

fn mapping_fidelity() -> Verdict {
    let s = reference(&[]);
    let route = s.mission.effective_mapping_route();
    let lidar = s.config.sensors.lidar;
    let mut rng = stream(s.mission.seed, Stream::Mapping);
    let grid = build_map(&s.world, &route, &s.robot, &lidar, &s.config.mapping, &mut rng).expect("map builds");
    let origin = (grid.origin.x, grid.origin.y);
    let coverage = beam_coverage(&s.world, &route, &s.robot, &lidar, origin, grid.resolution);
    let walls: Vec<_> = rasterize_walls(&s.world, origin, grid.resolution).intersection(&coverage.hit_cells).copied().collect();
    let occupied = walls.iter().filter(|&&c| grid.probability_at(c) > 0.65).count();
    let free = coverage.pass_cells.iter().filter(|&&c| grid.probability_at(c) < 0.35).count();
    let wall_frac = occupied as f64 / walls.len().max(1) as f64;
    let free_frac = free as f64 / coverage.pass_cells.len().max(1) as f64;
    verdict(
        lidar.noise_sigma == 0.01 && wall_frac >= 0.99 && free_frac >= 0.99,
        format!(
            "walls {occupied}/{} ({:.2}%) occupied, free {free}/{} ({:.2}%) clear",
            walls.len(),
            100.0 * wall_frac,
            coverage.pass_cells.len(),
            100.0 * free_frac
        ),
    )
}

fn reconstruction_accuracy() -> Verdict {
    let cfg = ReconstructionConfig {
        mode: ReconstructionMode::Tsdf,
        ..Default::default()
    };
    let robot = RobotModel::default();
    let k = robot.wrist_camera.depth_intrinsics();

    let table = table_world();
    let top_center = Vector3::new(0.0, 0.0, 0.75);
    let top = Pose3::look_at(Vector3::new(0.0, 0.0, 1.2), top_center);
    let plane = reconstruct_tsdf(&[render_depth(&table, &top, &k, cfg.depth_max, 0.0)], &top_center, &cfg).expect("plane surface");
    let plane_rms = rms(plane.points.iter().map(|p| p.z - 0.75));

    let c = Vector3::new(0.0, 0.0, 1.0);
    let ball = sphere_world(c, 0.05);
    let depths = scan_depths(&ball, &c, 0.3, &robot, &cfg);
    let tsdf = reconstruct_tsdf(&depths, &c, &cfg).expect("sphere surface");
    let sphere_rms = rms(tsdf.points.iter().map(|p| (p - c).norm() - 0.05));
    let stitched = stitch_pointclouds(&depths, &c, &cfg).expect("stitched sphere");
    let hausdorff = one_sided_hausdorff(&tsdf.points, &stitched.points);

    let half = cfg.voxel_size / 2.0;
    verdict(
        plane_rms <= half && sphere_rms <= half && hausdorff <= 2.0 * cfg.voxel_size,
        format!(
            "plane rms {:.2} mm, sphere rms {:.2} mm, tsdf-to-stitched hausdorff {:.2} mm (voxel {:.0} mm)",
            plane_rms * 1e3,
            sphere_rms * 1e3,
            hausdorff * 1e3,
            cfg.voxel_size * 1e3
        ),
    )
}

fn grasp_soundness() -> Verdict {
    let robot = RobotModel::default();
    let cfg = GraspingConfig::default();
    let mut summary = Vec::new();
    let mut pass = true;
    for (world, obj) in [capsule_on_table(0.3), box_on_table(0.3)] {
        let mut sound = 0;
        for seed in 0..100 {
            let (selection, base) = grasp_from_scan(&world, &obj, seed);
            if let GraspSelection::Selected(c) = selection {
                pass &= check_reachable(&base, &c, &robot.arm);
                if antipodal_contact_ok(&obj, &c.center(), &c.closing(), robot.gripper.max_opening, cfg.angle_max) {
                    sound += 1;
                }
            }
        }
        pass &= sound >= 95;
        summary.push(format!("{} {sound}/100", obj.id));
    }

    // whatever base the robot ends up on, a selection is always in reach
    let (world, obj) = capsule_on_table(0.3);
    let c = obj.pose.translation;
    let recon = ReconstructionConfig::default();
    let cloud = reconstruct(&scan_depths(&world, &c, 0.0, &robot, &recon), &c, &recon).expect("capsule cloud");
    let normals = estimate_normals(&cloud, cfg.k_normals).expect("normals");
    let mut rng = stream(7, Stream::Grasping);
    let ranked = generate_candidates(&cloud, &normals, &robot.gripper, &cfg, Some((c, cfg.seed_radius)), &mut rng)
        .map(|cands| score_candidates(cands, &cloud, &normals, &robot.gripper, cfg.angle_max))
        .unwrap_or_default();
    let mut base_rng = ChaCha8Rng::seed_from_u64(8);
    let mut unreachable = 0;
    for _ in 0..500 {
        let base = Pose2::new(
            c.x + base_rng.random_range(-1.2..1.2),
            c.y + base_rng.random_range(-1.2..1.2),
            base_rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        if let GraspSelection::Selected(g) = select_grasp(&ranked, &base, &robot.arm) {
            if !check_reachable(&base, &g, &robot.arm) {
                unreachable += 1;
            }
        }
    }
    pass &= unreachable == 0;

    let result = run_mission(&reference(&["navigation.standoff=0.6", "navigation.max_standoff=1.2"]), &MissionOptions::default()).expect("mission runs");
    let repositions = events(&result.trace, "reposition").count();
    pass &= repositions == 1 && result.outcome.is_success();
    verdict(
        pass,
        format!(
            "{}; unreachable selections {unreachable}/500 random bases; reposition scenario {repositions} reposition(s), outcome {:?}",
            summary.join(", "),
            result.outcome
        ),
    )
}

fn determinism() -> Verdict {
    let runs = [
        cli_run("det-a", &["--threads", "1"], &["--render"]),
        cli_run("det-b", &["--threads", "1"], &["--render"]),
        cli_run("det-c", &["--threads", "4"], &["--render"]),
    ];
    let files = ["trace.jsonl", "metrics.json", "render.ppm"];
    let identical = files.iter().all(|f| {
        let first = read(&runs[0].out, f);
        !first.is_empty() && runs[1..].iter().all(|r| read(&r.out, f) == first)
    });
    verdict(identical, format!("trace, metrics and render identical over 2 runs and 1 vs 4 threads: {identical}"))
}

fn scheduling() -> Verdict {
    let s = reference(&[]);
    let result = run_mission(&s, &MissionOptions::default()).expect("mission runs");
    let trace = &result.trace;
    let last = trace.last().map(|e| e.tick).unwrap_or(0);
    let exec = s.config.executive;
    let ticks = |kind: &str| events(trace, kind).map(|e| e.tick).collect::<Vec<_>>();
    let exact = |kind: &str, period: u32| ticks(kind) == (0..=last).step_by(period as usize).collect::<Vec<_>>();
    let detector_times: Vec<f64> = events(trace, "detector").map(|e| e.t).collect();
    let two_hz = detector_times.windows(2).all(|w| ((w[1] - w[0]) - 0.5).abs() < 1e-9);
    let sim_time = last as f64 / 30.0;
    let ok = sim_time >= 60.0 && two_hz && exact("detector", exec.detector_period_ticks) && exact("camera", exec.camera_period_ticks);
    verdict(
        ok,
        format!(
            "{:.1} s simulated, {} detector events at 2 Hz={two_hz}, {} camera frames",
            sim_time,
            detector_times.len(),
            ticks("camera").len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("end-to-end mission", end_to_end_mission),
        ("no-recovery semantics", no_recovery),
        ("track maturity boundary", track_maturity),
        ("triangulation oracle", triangulation_oracle),
        ("planner optimality", planner_optimality),
        ("mapping fidelity", mapping_fidelity),
        ("reconstruction accuracy", reconstruction_accuracy),
        ("grasp soundness", grasp_soundness),
        ("determinism", determinism),
        ("scheduling contract", scheduling),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        println!("{} criterion {:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
        failed += usize::from(!v.pass);
    }
    let _ = std::fs::remove_dir_all(std::env::temp_dir().join(format!("fetchsim-acceptance-{}", std::process::id())));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
