//! Run configuration document. Every field may be omitted; omitted fields
//! take the library defaults. The config hash is taken over the canonical
//! form (defaults filled in, keys sorted), so it does not depend on key order
//! or on whether a default was spelled out.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::SweepConfig;
use crate::losses::{Domain, LossKind, MetaObjectiveConfig, SharingKind};
use crate::mdp::BackupOperator;
use crate::terrain::TerrainSpec;
use crate::trainer::{AdamConfig, TrainConfig};
use crate::vrfn::Activation;
use crate::world::{DEFAULT_GAMMA, DEFAULT_GOAL_BONUS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainSection {
    pub width: usize,
    pub height: usize,
    pub n_hills: usize,
    pub peak_range: (f64, f64),
    pub decay_range: (f64, f64),
    pub base_cost: f64,
    pub goal_bonus: f64,
    pub gamma: f64,
}

impl Default for TerrainSection {
    fn default() -> Self {
        let t = TerrainSpec::default();
        Self {
            width: t.width,
            height: t.height,
            n_hills: t.n_hills,
            peak_range: t.peak_range,
            decay_range: t.decay_range,
            base_cost: t.base_cost,
            goal_bonus: DEFAULT_GOAL_BONUS,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl TerrainSection {
    pub fn spec(&self) -> TerrainSpec {
        TerrainSpec {
            width: self.width,
            height: self.height,
            n_hills: self.n_hills,
            peak_range: self.peak_range,
            decay_range: self.decay_range,
            base_cost: self.base_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    pub b: f64,
    /// Step cap per trajectory; `None` means the grid-size default.
    pub max_len: Option<usize>,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self {
            b: crate::demos::DEFAULT_DEMO_B,
            max_len: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainName {
    AllStates,
    VisitedStates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub b: f64,
    pub lambda: f64,
    pub huber_delta: f64,
    pub domain: DomainName,
    /// `max`, `lse` or `bgi`.
    pub backup: String,
    /// Sharpness of the `bgi` backup.
    pub k: Option<f64>,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        let d = MetaObjectiveConfig::default();
        Self {
            b: d.b,
            lambda: d.lambda,
            huber_delta: d.sharing.delta,
            domain: DomainName::AllStates,
            backup: d.backup.name().to_string(),
            k: None,
        }
    }
}

impl ObjectiveSection {
    pub fn objective(&self, kind: LossKind) -> Result<MetaObjectiveConfig> {
        let cfg = MetaObjectiveConfig {
            b: self.b,
            lambda: self.lambda,
            sharing: SharingKind {
                kind,
                delta: self.huber_delta,
                domain: match self.domain {
                    DomainName::AllStates => Domain::AllStates,
                    DomainName::VisitedStates => Domain::VisitedStates,
                },
            },
            backup: parse_backup(&self.backup, self.k)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub converge_tol: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            max_iters: t.max_iters,
            converge_tol: t.converge_tol,
            hidden: t.hidden,
            activation: t.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n_worlds: usize,
    pub task_counts: Vec<usize>,
    pub traj_counts: Vec<usize>,
    pub loss_kinds: Vec<String>,
    pub seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepConfig::default();
        Self {
            n_worlds: s.n_worlds,
            task_counts: s.task_counts,
            traj_counts: s.traj_counts,
            loss_kinds: s.loss_kinds.iter().map(|k| k.name().to_string()).collect(),
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub terrain: TerrainSection,
    pub demos: DemoSection,
    pub objective: ObjectiveSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
}

pub fn parse_backup(name: &str, k: Option<f64>) -> Result<BackupOperator> {
    match (name, k) {
        ("max", None) => Ok(BackupOperator::HardMax),
        ("lse", None) => Ok(BackupOperator::LogSumExp),
        ("bgi", Some(k)) => BackupOperator::bgi(k),
        ("bgi", None) => Err(Error::Config("bgi backup needs k".into())),
        ("max" | "lse", Some(_)) => Err(Error::Config(format!("k only applies to the bgi backup, not {name}"))),
        _ => Err(Error::Config(format!("unknown backup operator {name:?}"))),
    }
}

/// FNV-1a 64 digest of a string, as 16 hex digits.
pub fn digest(text: &str) -> String {
    let mut h = FnvHasher::default();
    h.write(text.as_bytes());
    format!("{:016x}", h.finish())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.sweep_config()?;
        Ok(cfg)
    }

    /// Compact JSON with defaults filled in and object keys sorted.
    pub fn canonical_json(&self) -> String {
        // serde_json::Value keeps object keys in a BTreeMap
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        digest(&self.canonical_json())
    }

    pub fn loss_kinds(&self) -> Result<Vec<LossKind>> {
        self.sweep.loss_kinds.iter().map(|k| LossKind::parse(k)).collect()
    }

    /// Training settings for one sharing kind.
    pub fn train_config(&self, kind: LossKind, seed: u64) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            max_iters: t.max_iters,
            converge_tol: t.converge_tol,
            seed,
            hidden: t.hidden.clone(),
            activation: t.activation,
            objective: self.objective.objective(kind)?,
            check_grads: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let cfg = SweepConfig {
            n_worlds: self.sweep.n_worlds,
            task_counts: self.sweep.task_counts.clone(),
            traj_counts: self.sweep.traj_counts.clone(),
            loss_kinds: self.loss_kinds()?,
            terrain: self.terrain.spec(),
            goal_bonus: self.terrain.goal_bonus,
            gamma: self.terrain.gamma,
            demo_b: self.demos.b,
            max_len: self.demos.max_len,
            train: self.train_config(LossKind::None, 0)?,
            seed: self.sweep.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
