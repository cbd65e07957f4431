//! Reward-recovery accuracy and the multi-world sweep over sharing losses,
//! task counts and trajectory counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::demos::{default_max_len, generate_demos, DemoSet, DEFAULT_DEMO_B};
use crate::error::{Error, Result};
use crate::losses::{LossKind, SharingKind};
use crate::mdp::Mdp;
use crate::seed;
use crate::terrain::{generate_terrain, make_tasks, TerrainSpec};
use crate::trainer::{train, TrainConfig};
use crate::vrfn::{self, StateFeatures};
use crate::world::{World, DEFAULT_GAMMA, DEFAULT_GOAL_BONUS};

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "correlation needs two equal-length vectors of length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if !r.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Accuracy of a learned reward over all states, goal included.
pub fn evaluate_task(learned_r: &[f64], true_r: &[f64]) -> Result<f64> {
    pearson(learned_r, true_r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_worlds: usize,
    pub task_counts: Vec<usize>,
    pub traj_counts: Vec<usize>,
    pub loss_kinds: Vec<LossKind>,
    pub terrain: TerrainSpec,
    pub goal_bonus: f64,
    pub gamma: f64,
    pub demo_b: f64,
    /// Defaults to `default_max_len(width, height)`.
    pub max_len: Option<usize>,
    /// Training settings shared by every cell; the sharing kind is overridden per cell.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_worlds: 10,
            task_counts: (1..=16).collect(),
            traj_counts: (1..=10).collect(),
            loss_kinds: LossKind::ALL.to_vec(),
            terrain: TerrainSpec::default(),
            goal_bonus: DEFAULT_GOAL_BONUS,
            gamma: DEFAULT_GAMMA,
            demo_b: DEFAULT_DEMO_B,
            max_len: None,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_worlds == 0 || self.task_counts.is_empty() || self.traj_counts.is_empty() || self.loss_kinds.is_empty() {
            return Err(Error::Config("sweep needs at least one world, task count, trajectory count and loss".into()));
        }
        if self.task_counts.contains(&0) || self.traj_counts.contains(&0) {
            return Err(Error::Config("task and trajectory counts must be positive".into()));
        }
        let cells = self.terrain.width * self.terrain.height;
        if self.max_tasks() > cells {
            return Err(Error::TooManyTasks {
                requested: self.max_tasks(),
                cells,
            });
        }
        self.train.validate()
    }

    pub fn max_tasks(&self) -> usize {
        self.task_counts.iter().copied().max().unwrap_or(0)
    }

    pub fn max_trajs(&self) -> usize {
        self.traj_counts.iter().copied().max().unwrap_or(0)
    }
}

/// Seeds of one sweep world, all derived from the sweep seed and world index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorldSeeds {
    pub terrain: u64,
    pub tasks: u64,
    pub demos: u64,
    pub train: u64,
}

impl WorldSeeds {
    pub fn derive(sweep_seed: u64, world_id: usize) -> Self {
        let w = seed::mix64(sweep_seed, world_id as u64);
        Self {
            terrain: w,
            tasks: seed::mix64(w, 1),
            demos: seed::mix64(w, 2),
            train: seed::mix64(w, 3),
        }
    }
}

/// Generated data of one sweep world; cells train on prefixes of it.
#[derive(Debug, Clone)]
pub struct SweepWorld {
    pub world: World,
    pub demos: DemoSet,
    pub mdps: Vec<Mdp>,
    pub features: StateFeatures,
    pub seeds: WorldSeeds,
}

pub fn build_world(cfg: &SweepConfig, world_id: usize) -> Result<SweepWorld> {
    let seeds = WorldSeeds::derive(cfg.seed, world_id);
    let terrain = generate_terrain(&cfg.terrain, seeds.terrain)?;
    let tasks = make_tasks(&terrain, cfg.max_tasks(), cfg.goal_bonus, seeds.tasks)?;
    let max_len = cfg
        .max_len
        .unwrap_or_else(|| default_max_len(terrain.width, terrain.height));
    let demos = generate_demos(&terrain, &tasks, cfg.gamma, cfg.max_trajs(), cfg.demo_b, max_len, seeds.demos)?;
    let world = World::new(terrain, tasks, cfg.gamma)?;
    Ok(SweepWorld {
        mdps: world.mdps()?,
        features: world.features(),
        world,
        demos,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub world_id: usize,
    pub loss_kind: LossKind,
    pub n_tasks: usize,
    pub n_trajs: usize,
    pub task_id: usize,
    /// `Err(tag)` for failed cells or degenerate rewards.
    pub correlation: std::result::Result<f64, &'static str>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cell {
    world_id: usize,
    loss_kind: LossKind,
    n_tasks: usize,
    n_trajs: usize,
}

/// Trains one cell and scores every task in it.
fn run_cell(cfg: &SweepConfig, world: &SweepWorld, cell: Cell) -> Vec<SweepRecord> {
    let record = |task_id, correlation| SweepRecord {
        world_id: cell.world_id,
        loss_kind: cell.loss_kind,
        n_tasks: cell.n_tasks,
        n_trajs: cell.n_trajs,
        task_id,
        correlation,
    };
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = world.seeds.train;
    train_cfg.objective.sharing = SharingKind {
        kind: cell.loss_kind,
        ..cfg.train.objective.sharing
    };
    let demos = world.demos.prefix(cell.n_tasks, cell.n_trajs);
    let mdps = &world.mdps[..cell.n_tasks];
    match train(mdps, &world.features, &demos, &train_cfg) {
        Ok(res) => (0..cell.n_tasks)
            .map(|i| {
                let corr = vrfn::forward(&res.thetas[i], &world.features)
                    .map(|vr| vrfn::r_from_vr(&vr, &mdps[i], train_cfg.objective.backup))
                    .and_then(|r| evaluate_task(&r, &world.world.true_reward(i)))
                    .map_err(|e| e.tag());
                record(i, corr)
            })
            .collect(),
        Err(e) => (0..cell.n_tasks).map(|i| record(i, Err(e.tag()))).collect(),
    }
}

/// Runs every (world, loss, task count, trajectory count) cell on the current
/// rayon pool. Output order is fixed regardless of the pool size.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let worlds = (0..cfg.n_worlds)
        .into_par_iter()
        .map(|w| build_world(cfg, w))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for world_id in 0..cfg.n_worlds {
        for &loss_kind in &cfg.loss_kinds {
            for &n_tasks in &cfg.task_counts {
                for &n_trajs in &cfg.traj_counts {
                    cells.push(Cell {
                        world_id,
                        loss_kind,
                        n_tasks,
                        n_trajs,
                    });
                }
            }
        }
    }
    let records = cells
        .par_iter()
        .map(|&cell| run_cell(cfg, &worlds[cell.world_id], cell))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(SweepResult { records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub loss_kind: LossKind,
    pub n_tasks: usize,
    pub n_trajs: usize,
    /// `None` when every record of the cell failed.
    pub mean_correlation: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Mean correlation per (loss, task count, trajectory count) over worlds and tasks.
pub fn aggregate(result: &SweepResult) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(LossKind, usize, usize), Vec<&SweepRecord>> = BTreeMap::new();
    for r in &result.records {
        groups.entry((r.loss_kind, r.n_tasks, r.n_trajs)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((loss_kind, n_tasks, n_trajs), recs)| {
            let mut ok: Vec<f64> = recs.iter().filter_map(|r| r.correlation.ok()).collect();
            // fixed summation order makes the mean independent of record order
            ok.sort_by(f64::total_cmp);
            let n_ok = ok.len();
            AggregateRow {
                loss_kind,
                n_tasks,
                n_trajs,
                mean_correlation: (n_ok > 0).then(|| ok.iter().sum::<f64>() / n_ok as f64),
                n_ok,
                n_failed: recs.len() - n_ok,
            }
        })
        .collect()
}

pub fn write_results<W: Write>(writer: W, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["world_id", "loss_kind", "n_tasks", "n_trajs", "task_id", "correlation", "status"])?;
    for r in &result.records {
        let (corr, status) = match r.correlation {
            Ok(c) => (c.to_string(), "ok"),
            Err(tag) => (String::new(), tag),
        };
        w.write_record(&[
            r.world_id.to_string(),
            r.loss_kind.name().to_string(),
            r.n_tasks.to_string(),
            r.n_trajs.to_string(),
            r.task_id.to_string(),
            corr,
            status.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate<W: Write>(writer: W, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["loss_kind", "n_tasks", "n_trajs", "mean_correlation", "n_ok", "n_failed"])?;
    for r in rows {
        w.write_record(&[
            r.loss_kind.name().to_string(),
            r.n_tasks.to_string(),
            r.n_trajs.to_string(),
            r.mean_correlation.map(|m| m.to_string()).unwrap_or_default(),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const COLORS: [&str; 5] = ["#444444", "#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// One SVG chart per task count: mean correlation against trajectory count,
/// one line per loss kind.
pub fn plot_panels(rows: &[AggregateRow]) -> Vec<(usize, String)> {
    let mut task_counts: Vec<usize> = rows.iter().map(|r| r.n_tasks).collect();
    task_counts.sort_unstable();
    task_counts.dedup();
    task_counts
        .into_iter()
        .map(|n_tasks| (n_tasks, panel_svg(rows, n_tasks)))
        .collect()
}

fn panel_svg(rows: &[AggregateRow], n_tasks: usize) -> String {
    let (w, h, m) = (420.0, 300.0, 45.0);
    let panel: Vec<&AggregateRow> = rows.iter().filter(|r| r.n_tasks == n_tasks).collect();
    let x_max = panel.iter().map(|r| r.n_trajs).max().unwrap_or(1).max(2) as f64;
    let x_min = panel.iter().map(|r| r.n_trajs).min().unwrap_or(1) as f64;
    let y_min = panel
        .iter()
        .filter_map(|r| r.mean_correlation)
        .fold(0.0f64, f64::min)
        .floor()
        .max(-1.0);
    let sx = |x: f64| m + (x - x_min) / (x_max - x_min).max(1.0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y_min) / (1.0 - y_min) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{n_tasks} task{}</text>"#,
        w / 2.0,
        if n_tasks == 1 { "" } else { "s" }
    );
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#,
        h - m,
        w - m,
        h - m,
        h - m
    );
    for tick in [y_min, (y_min + 1.0) / 2.0, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{tick:.2}</text>"#,
            m - 4.0,
            sy(tick) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">trajectories per task</text>"#,
        w / 2.0,
        h - 10.0
    );
    for (k, kind) in LossKind::ALL.iter().enumerate() {
        let pts: Vec<String> = panel
            .iter()
            .filter(|r| r.loss_kind == *kind)
            .filter_map(|r| r.mean_correlation.map(|c| format!("{:.2},{:.2}", sx(r.n_trajs as f64), sy(c))))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            COLORS[k],
            pts.join(" ")
        );
        let ly = m + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11" fill="{}">{}</text>"#,
            w - m - 50.0,
            COLORS[k],
            kind.name()
        );
    }
    s.push_str("</svg>\n");
    s
}
