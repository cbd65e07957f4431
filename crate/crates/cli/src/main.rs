//! `metairl` command-line entry point: world and demo generation, training,
//! evaluation and the loss/task/trajectory sweep.
//!
//! Exit codes: 0 ok, 1 I/O or unreadable input, 2 usage, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use metairl::config::{digest, parse_backup, RunConfig};
use metairl::demos::{default_max_len, generate_demos, read_demos, write_demos};
use metairl::eval::{aggregate, evaluate_task, plot_panels, run_sweep, write_aggregate, write_results};
use metairl::losses::{LossKind, MetaObjectiveConfig, MetaProblem, SharingKind};
use metairl::mdp::BackupOperator;
use metairl::seed::mix64;
use metairl::terrain::{generate_terrain, make_tasks, TerrainSpec};
use metairl::trainer::{train_from, initial_params, AdamConfig, TrainConfig};
use metairl::vrfn::{self, params_from_json, params_to_json};
use metairl::world::{World, DEFAULT_GAMMA, DEFAULT_GOAL_BONUS};
use metairl::Error;

#[derive(Parser)]
#[command(name = "metairl", version, about = "Multi-task IRL with a shared baseline reward")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random terrain with goal tasks.
    GenWorld {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        width: usize,
        #[arg(long, default_value_t = 8)]
        height: usize,
        #[arg(long, default_value_t = 3)]
        hills: usize,
        #[arg(long, default_value_t = 10)]
        tasks: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a world's cost map and goals.
    Inspect {
        #[arg(long)]
        world: PathBuf,
    },
    /// Sample Boltzmann demonstrations for every task of a world.
    GenDemos {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 10)]
        n_traj: usize,
        #[arg(long, default_value_t = 10.0)]
        b: f64,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train task and baseline networks on demonstrations.
    Train {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, default_value = "none", value_parser = ["none", "l2", "huber", "stdev", "entropy"])]
        loss: String,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 10.0)]
        b: f64,
        #[arg(long, default_value = "max", value_parser = ["max", "lse", "bgi"])]
        backup: String,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        check_grads: bool,
    },
    /// Correlate learned task rewards with the world's true rewards.
    Eval {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the multi-world sweep described by a config file.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

struct Failure {
    code: u8,
    message: String,
}

type CmdResult = Result<(), Failure>;

fn code_for(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Format(_) => 1,
        Error::NonConvergence { .. }
        | Error::NonFiniteLoss { .. }
        | Error::GradientCheck { .. }
        | Error::ZeroVariance
        | Error::EmptyDomain => 3,
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: code_for(&e),
            message: e.to_string(),
        }
    }
}

/// Error while reading or writing `path`.
fn at(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| Failure {
        code: code_for(&e),
        message: format!("{}: {e}", path.display()),
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| at(path)(e.into()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| at(path)(e.into()))
}

fn create_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path).map_err(|e| at(path)(e.into()))
}

fn load_world(path: &Path) -> Result<(World, String), Failure> {
    let text = read(path)?;
    let world = World::from_json(&text).map_err(at(path))?;
    Ok((world, text))
}

fn canonical_hash(value: serde_json::Value) -> String {
    digest(&serde_json::to_string(&value).expect("json value serializes"))
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(f)
}

fn gen_world(seed: u64, width: usize, height: usize, hills: usize, tasks: usize, out: &Path) -> CmdResult {
    let spec = TerrainSpec {
        width,
        height,
        n_hills: hills,
        ..TerrainSpec::default()
    };
    let terrain = generate_terrain(&spec, seed)?;
    let tasks = make_tasks(&terrain, tasks, DEFAULT_GOAL_BONUS, mix64(seed, 1))?;
    let world = World::new(terrain, tasks, DEFAULT_GAMMA)?;
    write(out, world.to_json())?;
    let hash = canonical_hash(json!({
        "command": "gen-world",
        "seed": seed,
        "width": width,
        "height": height,
        "hills": hills,
        "tasks": world.tasks.len(),
    }));
    println!("{}", out.display());
    println!("config_hash {hash}");
    Ok(())
}

fn inspect(path: &Path) -> CmdResult {
    let (world, _) = load_world(path)?;
    let t = &world.terrain;
    println!("{}x{} grid, {} hills, gamma {}", t.width, t.height, t.hills.len(), world.gamma);
    let costs = t.cost_map();
    for y in 0..t.height {
        let row: Vec<String> = (0..t.width).map(|x| format!("{:7.3}", costs[y * t.width + x])).collect();
        println!("{}", row.join(" "));
    }
    for (i, task) in world.tasks.iter().enumerate() {
        let (x, y) = t.cell_xy(task.goal);
        println!("task {i}: goal ({x}, {y}) bonus {}", task.goal_bonus);
    }
    Ok(())
}

fn gen_demos(world_path: &Path, n_traj: usize, b: f64, max_len: Option<usize>, seed: u64, out: &Path) -> CmdResult {
    if !(b > 0.0 && b.is_finite()) {
        return Err(usage(format!("--b must be positive, got {b}")));
    }
    let (world, text) = load_world(world_path)?;
    let t = &world.terrain;
    let max_len = max_len.unwrap_or_else(|| default_max_len(t.width, t.height));
    let demos = single_threaded(|| generate_demos(t, &world.tasks, world.gamma, n_traj, b, max_len, seed))?;
    let mut buf = Vec::new();
    write_demos(&mut buf, &demos, t.width)?;
    write(out, buf)?;
    let hash = canonical_hash(json!({
        "command": "gen-demos",
        "world": digest(&text),
        "n_traj": n_traj,
        "b": b,
        "max_len": max_len,
        "seed": seed,
    }));
    println!("{}", out.display());
    println!("config_hash {hash}");
    Ok(())
}

struct TrainArgs {
    world: PathBuf,
    demos: PathBuf,
    loss: String,
    lambda: f64,
    lr: f64,
    iters: usize,
    b: f64,
    backup: String,
    k: Option<f64>,
    seed: u64,
    out_dir: PathBuf,
    check_grads: bool,
}

fn backup_fields(op: BackupOperator) -> (&'static str, Option<f64>) {
    match op {
        BackupOperator::Bgi { k } => ("bgi", Some(k)),
        other => (other.name(), None),
    }
}

fn train_cmd(args: TrainArgs) -> CmdResult {
    let (world, world_text) = load_world(&args.world)?;
    let demo_file = fs::File::open(&args.demos).map_err(|e| at(&args.demos)(e.into()))?;
    let demos = read_demos(demo_file, &world.terrain, &world.tasks, world.gamma).map_err(at(&args.demos))?;
    let demo_text = read(&args.demos)?;

    let objective = MetaObjectiveConfig {
        b: args.b,
        lambda: args.lambda,
        sharing: SharingKind::new(LossKind::parse(&args.loss)?),
        backup: parse_backup(&args.backup, args.k)?,
    };
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: args.lr,
            ..AdamConfig::default()
        },
        max_iters: args.iters,
        seed: args.seed,
        objective,
        check_grads: args.check_grads,
        ..TrainConfig::default()
    };
    cfg.validate()?;

    let mdps = world.mdps()?;
    let features = world.features();
    let arch = cfg.arch(features.dim())?;
    let (theta_b, thetas) = initial_params(&arch, cfg.seed, mdps.len());
    let (result, final_terms) = single_threaded(|| {
        let result = train_from(&mdps, &features, &demos, &cfg, theta_b, thetas)?;
        let problem = MetaProblem::new(&mdps, &features, &demos, cfg.objective)?;
        let terms = problem.objective(&result.theta_b, &result.thetas)?;
        Ok::<_, Error>((result, terms))
    })?;
    if !final_terms.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: result.iterations_run,
        }
        .into());
    }

    let (backup, k) = backup_fields(cfg.objective.backup);
    let hash = canonical_hash(json!({
        "command": "train",
        "world": digest(&world_text),
        "demos": digest(&demo_text),
        "loss": args.loss,
        "lambda": args.lambda,
        "lr": args.lr,
        "iters": args.iters,
        "b": args.b,
        "backup": backup,
        "k": k,
        "seed": args.seed,
    }));

    let dir = &args.out_dir;
    create_dir(dir)?;
    write(&dir.join("theta_b.json"), params_to_json(&result.theta_b))?;
    for (i, theta) in result.thetas.iter().enumerate() {
        write(&dir.join(format!("theta_{i}.json")), params_to_json(theta))?;
    }
    let manifest = json!({
        "config_hash": hash,
        "iteration": result.iterations_run,
        "objective": final_terms.total,
        "n_tasks": result.thetas.len(),
        "backup": backup,
        "k": k,
    });
    let mut manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_text.push('\n');
    write(&dir.join("manifest.json"), manifest_text)?;

    let log_path = dir.join("train_log.csv");
    let mut log = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| at(&log_path)(e.into());
    log.write_record(["iter", "objective", "irl_term", "sharing_term"]).map_err(csv_err)?;
    for (i, t) in result.history.iter().enumerate() {
        log.write_record(&[i.to_string(), t.total.to_string(), t.irl.to_string(), t.sharing.to_string()])
            .map_err(csv_err)?;
    }
    let bytes = log.into_inner().map_err(|e| at(&log_path)(Error::Io(e.into_error())))?;
    write(&log_path, bytes)?;

    println!("{}", dir.display());
    println!("config_hash {hash}");
    println!(
        "iterations {} objective {} converged {}",
        result.iterations_run, final_terms.total, result.converged
    );
    Ok(())
}

fn eval_cmd(world_path: &Path, ckpt: &Path, out: &Path) -> CmdResult {
    let (world, _) = load_world(world_path)?;
    let manifest_path = ckpt.join("manifest.json");
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&manifest_path)?).map_err(|e| at(&manifest_path)(e.into()))?;
    let backup_name = manifest
        .get("backup")
        .and_then(|v| v.as_str())
        .unwrap_or("max");
    let k = manifest.get("k").and_then(|v| v.as_f64());
    let op = parse_backup(backup_name, k).map_err(at(&manifest_path))?;

    let mdps = world.mdps()?;
    let features = world.features();
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| at(out)(e.into());
    w.write_record(["task_id", "correlation", "status"]).map_err(csv_err)?;
    for (i, mdp) in mdps.iter().enumerate() {
        let path = ckpt.join(format!("theta_{i}.json"));
        let params = params_from_json(&read(&path)?).map_err(at(&path))?;
        let vr = vrfn::forward(&params, &features).map_err(at(&path))?;
        let r = vrfn::r_from_vr(&vr, mdp, op);
        let (corr, status) = match evaluate_task(&r, &world.true_reward(i)) {
            Ok(c) => (c.to_string(), "ok"),
            Err(e) => (String::new(), e.tag()),
        };
        w.write_record(&[i.to_string(), corr, status.to_string()]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| at(out)(Error::Io(e.into_error())))?;
    write(out, bytes)?;
    println!("{}", out.display());
    Ok(())
}

fn sweep_cmd(config: Option<&Path>, out_dir: &Path, jobs: usize) -> CmdResult {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let run = match config {
        Some(path) => RunConfig::from_json(&read(path)?).map_err(|e| match e {
            Error::Json(_) => usage(format!("{}: {e}", path.display())),
            other => at(path)(other),
        })?,
        None => RunConfig::default(),
    };
    let cfg = run.sweep_config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| usage(e.to_string()))?;
    let result = pool.install(|| run_sweep(&cfg))?;
    let rows = aggregate(&result);

    create_dir(out_dir)?;
    let mut buf = Vec::new();
    write_results(&mut buf, &result)?;
    write(&out_dir.join("results.csv"), buf)?;
    let mut buf = Vec::new();
    write_aggregate(&mut buf, &rows)?;
    write(&out_dir.join("aggregate.csv"), buf)?;
    for (n_tasks, svg) in plot_panels(&rows) {
        write(&out_dir.join(format!("panel_tasks_{n_tasks:02}.svg")), svg)?;
    }
    let mut canonical = run.canonical_json();
    canonical.push('\n');
    write(&out_dir.join("config.json"), canonical)?;
    println!("{}", out_dir.display());
    println!("config_hash {}", run.hash());
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::GenWorld {
            seed,
            width,
            height,
            hills,
            tasks,
            out,
        } => gen_world(seed, width, height, hills, tasks, &out),
        Command::Inspect { world } => inspect(&world),
        Command::GenDemos {
            world,
            n_traj,
            b,
            max_len,
            seed,
            out,
        } => gen_demos(&world, n_traj, b, max_len, seed, &out),
        Command::Train {
            world,
            demos,
            loss,
            lambda,
            lr,
            iters,
            b,
            backup,
            k,
            seed,
            out_dir,
            check_grads,
        } => train_cmd(TrainArgs {
            world,
            demos,
            loss,
            lambda,
            lr,
            iters,
            b,
            backup,
            k,
            seed,
            out_dir,
            check_grads,
        }),
        Command::Eval {
            world,
            checkpoints,
            out,
        } => eval_cmd(&world, &checkpoints, &out),
        Command::Sweep { config, out_dir, jobs } => sweep_cmd(config.as_deref(), &out_dir, jobs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
