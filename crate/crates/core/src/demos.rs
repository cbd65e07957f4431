//! Demonstration trajectories sampled from a Boltzmann expert, and their CSV form.

use std::io::{Read, Write};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{boltzmann_policy, value_iteration, BackupOperator, Mdp, DEFAULT_VI_MAX_ITER, DEFAULT_VI_TOL};
use crate::seed;
use crate::terrain::{ground_truth_mdp, Task, Terrain, N_ACTIONS};

pub const DEFAULT_DEMO_B: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: usize,
    /// `(state, action)` pairs in visiting order.
    pub steps: Vec<(usize, usize)>,
    /// Set when the length cap was hit before the goal.
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks that every consecutive pair is reachable under `mdp`.
    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Format(format!("empty trajectory for task {}", self.task_id)));
        }
        for &(s, a) in &self.steps {
            if s >= mdp.n_states() || a >= mdp.n_actions() {
                return Err(Error::Format(format!("pair ({s}, {a}) out of range")));
            }
        }
        for w in self.steps.windows(2) {
            let ((s, a), (next, _)) = (w[0], w[1]);
            if mdp.prob(s, a, next) <= 0.0 {
                return Err(Error::Format(format!(
                    "task {}: transition {s} --{a}--> {next} is impossible",
                    self.task_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoProvenance {
    pub b: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    /// One bucket per task, indexed by task id.
    pub per_task: Vec<Vec<Trajectory>>,
    /// Generation parameters; absent for sets loaded from disk.
    pub provenance: Option<DemoProvenance>,
}

impl DemoSet {
    pub fn n_tasks(&self) -> usize {
        self.per_task.len()
    }

    /// The first `n_tasks` buckets, each cut to its first `n_trajs` trajectories.
    pub fn prefix(&self, n_tasks: usize, n_trajs: usize) -> DemoSet {
        DemoSet {
            per_task: self
                .per_task
                .iter()
                .take(n_tasks)
                .map(|bucket| bucket.iter().take(n_trajs).cloned().collect())
                .collect(),
            provenance: self.provenance,
        }
    }

    /// A one-bucket set holding only task `i`'s trajectories.
    pub fn single_task(&self, i: usize) -> DemoSet {
        DemoSet {
            per_task: vec![self.per_task[i].clone()],
            provenance: self.provenance,
        }
    }

    pub fn n_pairs(&self, task: usize) -> usize {
        self.per_task[task].iter().map(Trajectory::len).sum()
    }

    pub fn pairs(&self, task: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.per_task[task].iter().flat_map(|t| t.steps.iter().copied())
    }

    /// Sorted, deduplicated states visited in a task's demonstrations.
    pub fn visited_states(&self, task: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.pairs(task).map(|(s, _)| s).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

fn sample_categorical(rng: &mut seed::Rng, probs: impl IntoIterator<Item = f64>) -> Option<usize> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (i, p) in probs.into_iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return Some(i);
        }
    }
    last
}

/// Rolls out the Boltzmann policy on `q` from `start` until `goal` is visited
/// or `max_len` pairs have been recorded. The goal itself is recorded together
/// with the action sampled there, so every pair carries an action.
#[allow(clippy::too_many_arguments)]
pub fn sample_trajectory(
    mdp: &Mdp,
    q: &[f64],
    b: f64,
    start: usize,
    max_len: usize,
    goal: usize,
    task_id: usize,
    rng_seed: u64,
) -> Trajectory {
    let n_a = mdp.n_actions();
    let mut rng = seed::rng(rng_seed);
    let mut steps = Vec::new();
    let mut s = start;
    loop {
        let policy = boltzmann_policy(&q[s * n_a..(s + 1) * n_a], b);
        let a = sample_categorical(&mut rng, policy).expect("policy has mass");
        steps.push((s, a));
        if s == goal || steps.len() >= max_len.max(1) {
            break;
        }
        s = sample_categorical(&mut rng, mdp.successors(s, a).iter().map(|&(_, p)| p))
            .map(|i| mdp.successors(s, a)[i].0)
            .expect("transition row has mass");
    }
    Trajectory {
        task_id,
        truncated: s != goal,
        steps,
    }
}

/// Default trajectory length cap for a grid.
pub fn default_max_len(width: usize, height: usize) -> usize {
    25 * width.max(height)
}

/// Samples `n_traj` trajectories per task from uniformly random non-goal starts.
pub fn generate_demos(
    terrain: &Terrain,
    tasks: &[Task],
    gamma: f64,
    n_traj: usize,
    b: f64,
    max_len: usize,
    seed: u64,
) -> Result<DemoSet> {
    let per_task = tasks
        .par_iter()
        .enumerate()
        .map(|(task_id, task)| {
            let mdp = ground_truth_mdp(terrain, task, gamma, true)?;
            let sol = value_iteration(&mdp, BackupOperator::HardMax, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITER)?;
            let task_seed = seed::mix64(seed, task_id as u64);
            Ok((0..n_traj)
                .map(|j| {
                    let traj_seed = seed::mix64(task_seed, j as u64);
                    let mut rng = seed::rng(traj_seed);
                    let mut start = rng.gen_range(0..terrain.n_cells() - 1);
                    if start >= task.goal {
                        start += 1;
                    }
                    sample_trajectory(&mdp, &sol.q, b, start, max_len, task.goal, task_id, seed::mix64(traj_seed, 1))
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DemoSet {
        per_task,
        provenance: Some(DemoProvenance { b, seed }),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoRow {
    task_id: usize,
    traj_id: usize,
    t: usize,
    state_x: usize,
    state_y: usize,
    action: usize,
}

pub fn write_demos<W: Write>(writer: W, demos: &DemoSet, width: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    // The header must be present even when there are no rows.
    w.write_record(["task_id", "traj_id", "t", "state_x", "state_y", "action"])?;
    for (task_id, bucket) in demos.per_task.iter().enumerate() {
        for (traj_id, traj) in bucket.iter().enumerate() {
            for (t, &(s, a)) in traj.steps.iter().enumerate() {
                w.write_record(&[
                    task_id.to_string(),
                    traj_id.to_string(),
                    t.to_string(),
                    (s % width).to_string(),
                    (s / width).to_string(),
                    a.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a demo CSV for the given world, validating ordering and dynamics.
pub fn read_demos<R: Read>(reader: R, terrain: &Terrain, tasks: &[Task], gamma: f64) -> Result<DemoSet> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut per_task: Vec<Vec<Trajectory>> = vec![Vec::new(); tasks.len()];
    for row in rdr.deserialize() {
        let row: DemoRow = row?;
        if row.task_id >= tasks.len() {
            return Err(Error::Format(format!("task_id {} but world has {} tasks", row.task_id, tasks.len())));
        }
        if row.action >= N_ACTIONS {
            return Err(Error::Format(format!("action {} out of range", row.action)));
        }
        let s = terrain.cell_index(row.state_x, row.state_y)?;
        let bucket = &mut per_task[row.task_id];
        if row.t == 0 {
            if row.traj_id != bucket.len() {
                return Err(Error::Format(format!(
                    "task {}: trajectory {} out of order",
                    row.task_id, row.traj_id
                )));
            }
            bucket.push(Trajectory {
                task_id: row.task_id,
                steps: vec![(s, row.action)],
                truncated: false,
            });
        } else {
            let n = bucket.len();
            match bucket.last_mut() {
                Some(traj) if row.traj_id + 1 == n && traj.steps.len() == row.t => {
                    traj.steps.push((s, row.action))
                }
                _ => {
                    return Err(Error::Format(format!(
                        "task {} trajectory {}: step {} out of order",
                        row.task_id, row.traj_id, row.t
                    )))
                }
            }
        }
    }
    for (task_id, bucket) in per_task.iter_mut().enumerate() {
        let mdp = ground_truth_mdp(terrain, &tasks[task_id], gamma, true)?;
        for traj in bucket.iter_mut() {
            traj.validate(&mdp)?;
            traj.truncated = traj.steps.last().map(|&(s, _)| s) != Some(tasks[task_id].goal);
        }
    }
    Ok(DemoSet {
        per_task,
        provenance: None,
    })
}
