use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use fetchsim::executive::{run_mission, trace_from_jsonl, trace_to_jsonl, ActionKind, Fault, MissionOptions, MissionOutcome, Preempt};
use fetchsim::geometry::Pose2;
use fetchsim::grasping::{candidates_to_csv, estimate_normals, generate_candidates, score_candidates};
use fetchsim::mapping::{build_map, OccupancyGrid};
use fetchsim::metrics::compute_metrics;
use fetchsim::navigation::{inflate, plan_global};
use fetchsim::perception::triangulate;
use fetchsim::reconstruction::reconstruct;
use fetchsim::render::{render, trajectory_from_trace, Overlay, DROP, OBJECT};
use fetchsim::rng::{stream, Stream};
use fetchsim::scenario::Scenario;
use fetchsim::sensors::DepthImage;

#[derive(Parser)]
#[command(name = "fetchsim", version, about = "Fetch-and-carry mission simulator")]
struct Cli {
    /// Worker threads for parallel grasp scoring (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full mission and write trace.jsonl, metrics.json and map.ogrid.
    Run(RunArgs),
    /// Run a single pipeline stage on file inputs.
    #[command(subcommand)]
    Stage(Stage),
    /// Rasterize an occupancy grid, optionally with a mission trajectory, to PPM.
    Render(RenderArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Override the mission seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path override, e.g. `navigation.standoff=0.6`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[command(flatten)]
    common: ScenarioArgs,
    /// Inject a failure: search, approach, scan, grasp, drop or lose-object.
    #[arg(long)]
    fault: Option<Fault>,
    /// Preempt an action after it has been active for some ticks, as ACTION:TICKS.
    #[arg(long, value_name = "ACTION:TICKS")]
    preempt: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write render.ppm.
    #[arg(long)]
    render: bool,
}

#[derive(Subcommand)]
enum Stage {
    /// Build the occupancy grid for a scenario.
    Map {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan a path on a saved grid; writes x,y,theta CSV.
    Plan {
        #[arg(long)]
        grid: PathBuf,
        /// x,y,theta
        #[arg(long, allow_hyphen_values = true)]
        start: String,
        /// x,y,theta
        #[arg(long, allow_hyphen_values = true)]
        goal: String,
        /// Scenario supplying robot radius and navigation settings.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Triangulate rays from a CSV of cx,cy,cz,dx,dy,dz rows; writes JSON.
    Triangulate {
        #[arg(long)]
        rays: PathBuf,
        /// Reject ray sets whose normal matrix is worse conditioned than this.
        #[arg(long)]
        max_condition: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse depth images (JSON) into an XYZ point cloud.
    Reconstruct {
        #[arg(long = "depth", required = true)]
        depths: Vec<PathBuf>,
        /// Scan volume center x,y,z
        #[arg(long, allow_hyphen_values = true)]
        center: String,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate and rank grasp candidates on an XYZ cloud; writes CSV.
    Grasp {
        #[arg(long)]
        cloud: PathBuf,
        /// Restrict seeds to this neighbourhood, x,y,z
        #[arg(long, allow_hyphen_values = true)]
        center: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Mission trace whose base trajectory is overlaid.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Scenario whose objects and drop pose are marked.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// A failure that maps to exit status 2.
struct ConfigError(String);

impl<E: std::fmt::Display> From<E> for ConfigError {
    fn from(e: E) -> Self {
        ConfigError(e.to_string())
    }
}

type CliResult<T> = Result<T, ConfigError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Stage(stage) => cmd_stage(stage).map(|()| ExitCode::SUCCESS),
        Command::Render(args) => cmd_render(args).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|ConfigError(msg)| {
        eprintln!("error: {msg}");
        ExitCode::from(2)
    })
}

fn load_scenario(path: &Path, common: &ScenarioArgs) -> CliResult<Scenario> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("mission.seed={seed}"));
    }
    Ok(Scenario::load(path, &overrides)?)
}

fn optional_scenario(path: &Option<PathBuf>) -> CliResult<Option<Scenario>> {
    path.as_ref()
        .map(|p| Scenario::load(p, &[]))
        .transpose()
        .map_err(ConfigError::from)
}

fn parse_floats<const N: usize>(s: &str, what: &str) -> CliResult<[f64; N]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| ConfigError(format!("{what}: {e}")))?;
    v.try_into()
        .map_err(|_| ConfigError(format!("{what}: expected {N} comma-separated numbers")))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| ConfigError(format!("cannot write {}: {e}", path.display())))
}

fn read_grid(path: &Path, scenario: Option<&Scenario>) -> CliResult<OccupancyGrid> {
    let file = fs::File::open(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let cfg = scenario.map(|s| s.config.mapping).unwrap_or_default();
    Ok(OccupancyGrid::read_from(BufReader::new(file), &cfg)?)
}

fn parse_preempt(s: &str) -> CliResult<Preempt> {
    let (action, ticks) = s
        .split_once(':')
        .ok_or_else(|| ConfigError("--preempt expects ACTION:TICKS".into()))?;
    Ok(Preempt {
        action: action.parse::<ActionKind>()?,
        after_ticks: ticks.parse()?,
    })
}

fn cmd_run(args: RunArgs) -> CliResult<ExitCode> {
    let started = Instant::now();
    let scenario = load_scenario(&args.scenario, &args.common)?;
    let opts = MissionOptions {
        fault: args.fault,
        preempt: args.preempt.as_deref().map(parse_preempt).transpose()?,
    };
    let result = run_mission(&scenario, &opts)?;
    fs::create_dir_all(&args.out).map_err(|e| ConfigError(format!("cannot create {}: {e}", args.out.display())))?;
    write(&args.out.join("trace.jsonl"), trace_to_jsonl(&result.trace))?;
    let metrics = compute_metrics(&result.trace, &scenario);
    write(&args.out.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
    let mut grid_bytes = Vec::new();
    result.grid.write_to(&mut grid_bytes)?;
    write(&args.out.join("map.ogrid"), grid_bytes)?;
    if args.render {
        let overlay = scenario_overlay(&scenario, trajectory_from_trace(&result.trace));
        write(&args.out.join("render.ppm"), render(&result.grid, &overlay).to_ppm())?;
    }
    let wall = started.elapsed().as_secs_f64();
    // wall-clock time varies run to run, so it stays out of metrics.json
    write(&args.out.join("timing.json"), format!("{{\"wall_time\": {wall:.3}}}\n"))?;
    println!("outcome: {}", result.outcome.label());
    if let MissionOutcome::Failed { reason, .. } = &result.outcome {
        println!("reason: {reason}");
    }
    println!("sim_time: {:.2} s", metrics.sim_time);
    println!("wall_time: {wall:.2} s");
    Ok(if result.outcome.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn scenario_overlay(scenario: &Scenario, trajectory: Vec<(f64, f64)>) -> Overlay {
    let mut markers: Vec<_> = scenario
        .world
        .objects
        .iter()
        .map(|o| ((o.pose.translation.x, o.pose.translation.y), OBJECT))
        .collect();
    let d = scenario.mission.drop_pose;
    markers.push(((d.x, d.y), DROP));
    Overlay { trajectory, markers }
}

fn cmd_stage(stage: Stage) -> CliResult<()> {
    match stage {
        Stage::Map { scenario, common, out } => {
            let s = load_scenario(&scenario, &common)?;
            let mut rng = stream(s.mission.seed, Stream::Mapping);
            let route = s.mission.effective_mapping_route();
            let grid = build_map(&s.world, &route, &s.robot, &s.config.sensors.lidar, &s.config.mapping, &mut rng)?;
            let mut bytes = Vec::new();
            grid.write_to(&mut bytes)?;
            write(&out, bytes)
        }
        Stage::Plan {
            grid,
            start,
            goal,
            scenario,
            out,
        } => {
            let s = optional_scenario(&scenario)?;
            let grid = read_grid(&grid, s.as_ref())?;
            let nav = s.as_ref().map(|s| s.config.navigation).unwrap_or_default();
            let radius = s.as_ref().map(|s| s.robot.footprint_radius).unwrap_or(0.35) + nav.inflation_margin;
            let cost = inflate(&grid, radius, nav.occupied_threshold);
            let [sx, sy, st] = parse_floats(&start, "--start")?;
            let [gx, gy, gt] = parse_floats(&goal, "--goal")?;
            let path = plan_global(&cost, &Pose2::new(sx, sy, st), &Pose2::new(gx, gy, gt), nav.unknown_cost)?;
            write(&out, path.to_csv())
        }
        Stage::Triangulate { rays, max_condition, out } => {
            let text = fs::read_to_string(&rays).map_err(|e| ConfigError(format!("cannot read {}: {e}", rays.display())))?;
            let mut list = Vec::new();
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') || line.starts_with(|c: char| c.is_alphabetic()) {
                    continue;
                }
                let [cx, cy, cz, dx, dy, dz] = parse_floats(line, &format!("{} line {}", rays.display(), n + 1))?;
                let d = Vector3::new(dx, dy, dz);
                if !(d.norm() > 0.0) {
                    return Err(ConfigError(format!("{} line {}: zero direction", rays.display(), n + 1)));
                }
                list.push((Vector3::new(cx, cy, cz), d.normalize()));
            }
            let tri = triangulate(&list, max_condition)?;
            let doc = serde_json::json!({
                "position": [tri.position.x, tri.position.y, tri.position.z],
                "residual_rms": tri.residual_rms,
                "condition": tri.condition,
                "n_rays": list.len(),
            });
            write(&out, serde_json::to_string_pretty(&doc)? + "\n")
        }
        Stage::Reconstruct {
            depths,
            center,
            scenario,
            out,
        } => {
            let s = optional_scenario(&scenario)?;
            let cfg = s.map(|s| s.config.reconstruction).unwrap_or_default();
            let images = depths
                .iter()
                .map(|p| {
                    let text = fs::read_to_string(p).map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
                    serde_json::from_str::<DepthImage>(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let [x, y, z] = parse_floats(&center, "--center")?;
            let cloud = reconstruct(&images, &Vector3::new(x, y, z), &cfg)?;
            write(&out, cloud.to_xyz())
        }
        Stage::Grasp {
            cloud,
            center,
            seed,
            scenario,
            out,
        } => {
            let s = optional_scenario(&scenario)?;
            let (gripper, cfg) = match &s {
                Some(s) => (s.robot.gripper, s.config.grasping),
                None => Default::default(),
            };
            let text = fs::read_to_string(&cloud).map_err(|e| ConfigError(format!("cannot read {}: {e}", cloud.display())))?;
            let cloud = fetchsim::reconstruction::PointCloud::from_xyz(&text).map_err(ConfigError)?;
            let normals = estimate_normals(&cloud, cfg.k_normals)?;
            let roi = center
                .map(|c| parse_floats::<3>(&c, "--center"))
                .transpose()?
                .map(|[x, y, z]| (Vector3::new(x, y, z), cfg.seed_radius));
            let mut rng = stream(seed, Stream::Grasping);
            let candidates = generate_candidates(&cloud, &normals, &gripper, &cfg, roi, &mut rng)?;
            let ranked = score_candidates(candidates, &cloud, &normals, &gripper, cfg.angle_max);
            write(&out, candidates_to_csv(&ranked))
        }
    }
}

fn cmd_render(args: RenderArgs) -> CliResult<()> {
    let scenario = optional_scenario(&args.scenario)?;
    let grid = read_grid(&args.grid, scenario.as_ref())?;
    let trajectory = match &args.trace {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
            trajectory_from_trace(&trace_from_jsonl(&text)?)
        }
        None => Vec::new(),
    };
    let overlay = match &scenario {
        Some(s) => scenario_overlay(s, trajectory),
        None => Overlay {
            trajectory,
            markers: Vec::new(),
        },
    };
    write(&args.out, render(&grid, &overlay).to_ppm())
}
