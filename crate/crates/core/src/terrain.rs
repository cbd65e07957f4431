//! Hilly cost landscapes, goal-conditioned tasks and their ground-truth MDPs.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::seed;

pub const N_ACTIONS: usize = 4;
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

/// A cost peak whose influence decays exponentially with Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hill {
    pub cx: f64,
    pub cy: f64,
    pub peak: f64,
    pub decay: f64,
}

impl Hill {
    pub fn cost_at(&self, x: f64, y: f64) -> f64 {
        let dist = ((x - self.cx).powi(2) + (y - self.cy).powi(2)).sqrt();
        self.peak * (-self.decay * dist).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    pub width: usize,
    pub height: usize,
    pub hills: Vec<Hill>,
    pub base_cost: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Task {
    pub goal: usize,
    pub goal_bonus: f64,
}

/// Generation parameters for [`generate_terrain`].
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainSpec {
    pub width: usize,
    pub height: usize,
    pub n_hills: usize,
    pub peak_range: (f64, f64),
    pub decay_range: (f64, f64),
    pub base_cost: f64,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self {
            width: 8,
            height: 8,
            n_hills: 3,
            peak_range: (1.0, 5.0),
            decay_range: (0.3, 1.0),
            base_cost: 0.1,
        }
    }
}

fn check_range(name: &'static str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo > 0.0 && hi >= lo && hi.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidRange { name, lo, hi })
    }
}

fn sample_in(rng: &mut seed::Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

pub fn generate_terrain(spec: &TerrainSpec, seed: u64) -> Result<Terrain> {
    if spec.width < 2 || spec.height < 2 {
        return Err(Error::Config(format!(
            "grid must be at least 2x2, got {}x{}",
            spec.width, spec.height
        )));
    }
    check_range("peak_range", spec.peak_range)?;
    check_range("decay_range", spec.decay_range)?;
    if !(spec.base_cost >= 0.0) {
        return Err(Error::Config(format!("base_cost {} < 0", spec.base_cost)));
    }
    let mut rng = seed::rng(seed);
    let max_x = (spec.width - 1) as f64;
    let max_y = (spec.height - 1) as f64;
    let hills = (0..spec.n_hills)
        .map(|_| Hill {
            cx: rng.gen_range(0.0..=max_x),
            cy: rng.gen_range(0.0..=max_y),
            peak: sample_in(&mut rng, spec.peak_range),
            decay: sample_in(&mut rng, spec.decay_range),
        })
        .collect();
    Ok(Terrain {
        width: spec.width,
        height: spec.height,
        hills,
        base_cost: spec.base_cost,
        seed,
    })
}

impl Terrain {
    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_index(&self, x: usize, y: usize) -> Result<usize> {
        if x < self.width && y < self.height {
            Ok(y * self.width + x)
        } else {
            Err(self.out_of_bounds(x, y))
        }
    }

    pub fn cell_xy(&self, s: usize) -> (usize, usize) {
        (s % self.width, s / self.width)
    }

    fn out_of_bounds(&self, x: usize, y: usize) -> Error {
        Error::OutOfBounds {
            x,
            y,
            width: self.width,
            height: self.height,
        }
    }

    pub fn cost_at(&self, x: usize, y: usize) -> Result<f64> {
        if x >= self.width || y >= self.height {
            return Err(self.out_of_bounds(x, y));
        }
        let (fx, fy) = (x as f64, y as f64);
        Ok(self.base_cost + self.hills.iter().map(|h| h.cost_at(fx, fy)).sum::<f64>())
    }

    /// Cost of every cell in state-index order.
    pub fn cost_map(&self) -> Vec<f64> {
        (0..self.n_cells())
            .map(|s| {
                let (x, y) = self.cell_xy(s);
                self.cost_at(x, y).expect("in bounds")
            })
            .collect()
    }

    /// Successor of a deterministic move; off-grid moves stay in place.
    pub fn step(&self, s: usize, action: usize) -> usize {
        let (x, y) = self.cell_xy(s);
        let (nx, ny) = match action {
            UP => (x, y.saturating_sub(1)),
            DOWN => (x, (y + 1).min(self.height - 1)),
            LEFT => (x.saturating_sub(1), y),
            RIGHT => ((x + 1).min(self.width - 1), y),
            _ => panic!("unknown action {action}"),
        };
        ny * self.width + nx
    }

    /// Normalized `(x / (w - 1), y / (h - 1))` coordinates, one row per state.
    pub fn state_features(&self) -> Vec<Vec<f64>> {
        let sx = (self.width - 1) as f64;
        let sy = (self.height - 1) as f64;
        (0..self.n_cells())
            .map(|s| {
                let (x, y) = self.cell_xy(s);
                vec![x as f64 / sx, y as f64 / sy]
            })
            .collect()
    }
}

/// Per-state reward of a task: `-cost`, plus the bonus at the goal.
pub fn task_reward(terrain: &Terrain, task: &Task) -> Vec<f64> {
    let mut r: Vec<f64> = terrain.cost_map().into_iter().map(|c| -c).collect();
    r[task.goal] += task.goal_bonus;
    r
}

pub fn ground_truth_mdp(terrain: &Terrain, task: &Task, gamma: f64, goal_absorbing: bool) -> Result<Mdp> {
    let n = terrain.n_cells();
    if task.goal >= n {
        return Err(Error::Config(format!("goal {} outside {} cells", task.goal, n)));
    }
    let mut transitions = Vec::with_capacity(n * N_ACTIONS);
    for s in 0..n {
        for a in 0..N_ACTIONS {
            let next = if goal_absorbing && s == task.goal {
                s
            } else {
                terrain.step(s, a)
            };
            transitions.push(vec![(next, 1.0)]);
        }
    }
    Mdp::new(n, N_ACTIONS, transitions, task_reward(terrain, task), gamma)
}

/// Distinct goal cells sampled without replacement.
pub fn make_tasks(terrain: &Terrain, n_tasks: usize, goal_bonus: f64, seed: u64) -> Result<Vec<Task>> {
    let cells = terrain.n_cells();
    if n_tasks > cells {
        return Err(Error::TooManyTasks {
            requested: n_tasks,
            cells,
        });
    }
    let mut rng = seed::rng(seed);
    Ok(index::sample(&mut rng, cells, n_tasks)
        .into_iter()
        .map(|goal| Task { goal, goal_bonus })
        .collect())
}
