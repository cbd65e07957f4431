//! A terrain with its tasks and discount: the unit written by world generation
//! and read by every downstream step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::terrain::{self, ground_truth_mdp, Hill, Task, Terrain};
use crate::vrfn::StateFeatures;

pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_GOAL_BONUS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub terrain: Terrain,
    pub tasks: Vec<Task>,
    pub gamma: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskJson {
    goal_x: usize,
    goal_y: usize,
    goal_bonus: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldJson {
    width: usize,
    height: usize,
    base_cost: f64,
    seed: u64,
    hills: Vec<Hill>,
    tasks: Vec<TaskJson>,
    gamma: f64,
}

impl World {
    pub fn new(terrain: Terrain, tasks: Vec<Task>, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} outside [0, 1)")));
        }
        if terrain.width < 2 || terrain.height < 2 {
            return Err(Error::Config("grid must be at least 2x2".into()));
        }
        for h in &terrain.hills {
            if !(h.peak > 0.0 && h.decay > 0.0) {
                return Err(Error::Config(format!("hill {h:?} needs positive peak and decay")));
            }
        }
        for t in &tasks {
            if t.goal >= terrain.n_cells() {
                return Err(Error::Config(format!("goal {} outside the grid", t.goal)));
            }
            if !(t.goal_bonus > 0.0) {
                return Err(Error::Config(format!("goal bonus {} must be positive", t.goal_bonus)));
            }
        }
        Ok(Self { terrain, tasks, gamma })
    }

    /// Ground-truth MDP of every task, goals absorbing.
    pub fn mdps(&self) -> Result<Vec<Mdp>> {
        self.tasks
            .iter()
            .map(|t| ground_truth_mdp(&self.terrain, t, self.gamma, true))
            .collect()
    }

    pub fn true_reward(&self, task: usize) -> Vec<f64> {
        terrain::task_reward(&self.terrain, &self.tasks[task])
    }

    pub fn features(&self) -> StateFeatures {
        StateFeatures::new(self.terrain.state_features()).expect("grid has at least one cell")
    }

    pub fn to_json(&self) -> String {
        let t = &self.terrain;
        let doc = WorldJson {
            width: t.width,
            height: t.height,
            base_cost: t.base_cost,
            seed: t.seed,
            hills: t.hills.clone(),
            tasks: self
                .tasks
                .iter()
                .map(|task| {
                    let (goal_x, goal_y) = t.cell_xy(task.goal);
                    TaskJson {
                        goal_x,
                        goal_y,
                        goal_bonus: task.goal_bonus,
                    }
                })
                .collect(),
            gamma: self.gamma,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("world serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: WorldJson = serde_json::from_str(text)?;
        let terrain = Terrain {
            width: doc.width,
            height: doc.height,
            hills: doc.hills,
            base_cost: doc.base_cost,
            seed: doc.seed,
        };
        let tasks = doc
            .tasks
            .iter()
            .map(|t| {
                Ok(Task {
                    goal: terrain.cell_index(t.goal_x, t.goal_y)?,
                    goal_bonus: t.goal_bonus,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        World::new(terrain, tasks, doc.gamma)
    }
}
