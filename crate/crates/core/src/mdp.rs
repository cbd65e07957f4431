//! Finite MDPs, Bellman backup operators and an exact value-iteration solver.
//!
//! Rewards are attached to states and accrue on the state that is *entered*:
//! `q[s, a] = sum_{s'} P(s' | s, a) * (r[s'] + gamma * backup(q[s', .]))`.

use crate::error::{Error, Result};

/// Tolerance on the row sums of a transition distribution.
pub const PROB_SUM_TOL: f64 = 1e-12;

pub const DEFAULT_VI_TOL: f64 = 1e-9;
pub const DEFAULT_VI_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// Successor lists indexed by `s * n_actions + a`.
    transitions: Vec<Vec<(usize, f64)>>,
    reward: Vec<f64>,
    gamma: f64,
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        reward: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action set".into()));
        }
        if transitions.len() != n_states * n_actions {
            return Err(Error::InvalidMdp(format!(
                "expected {} transition rows, got {}",
                n_states * n_actions,
                transitions.len()
            )));
        }
        if reward.len() != n_states {
            return Err(Error::InvalidMdp(format!(
                "expected {} rewards, got {}",
                n_states,
                reward.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside [0, 1)")));
        }
        for (idx, row) in transitions.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidMdp(format!("row {idx} has no successors")));
            }
            let mut sum = 0.0;
            for &(next, p) in row {
                if next >= n_states {
                    return Err(Error::InvalidMdp(format!(
                        "row {idx} references state {next}"
                    )));
                }
                if !(p >= 0.0) {
                    return Err(Error::InvalidMdp(format!("row {idx} has probability {p}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidMdp(format!("row {idx} sums to {sum}")));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("non-finite reward".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            reward,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions + a]
    }

    /// Probability of landing in `next` after taking `a` in `s`.
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.successors(s, a)
            .iter()
            .filter(|(n, _)| *n == next)
            .map(|(_, p)| p)
            .sum()
    }

    /// Same dynamics with a different reward vector.
    pub fn with_reward(&self, reward: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transitions.clone(),
            reward,
            self.gamma,
        )
    }

    /// Expectation of a per-state quantity over successors: `out[s, a] = E[x[s'] | s, a]`.
    pub fn expect(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_states);
        self.transitions
            .iter()
            .map(|row| row.iter().map(|&(n, p)| p * x[n]).sum())
            .collect()
    }
}

/// Aggregation over actions that turns a Q row into a state value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackupOperator {
    HardMax,
    LogSumExp,
    /// `(1/k) log sum exp(k q)`, sharpening toward the hard max as `k` grows.
    Bgi { k: f64 },
}

impl BackupOperator {
    pub fn bgi(k: f64) -> Result<Self> {
        if k > 0.0 && k.is_finite() {
            Ok(BackupOperator::Bgi { k })
        } else {
            Err(Error::Config(format!("bgi sharpness must be positive, got {k}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BackupOperator::HardMax => "max",
            BackupOperator::LogSumExp => "lse",
            BackupOperator::Bgi { .. } => "bgi",
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn backup(q_row: &[f64], op: BackupOperator) -> f64 {
    assert!(!q_row.is_empty(), "backup of an empty action set");
    match op {
        BackupOperator::HardMax => q_row[argmax(q_row)],
        BackupOperator::LogSumExp => log_sum_exp(q_row),
        BackupOperator::Bgi { k } => {
            let m = q_row[argmax(q_row)];
            let s: f64 = q_row.iter().map(|q| (k * (q - m)).exp()).sum();
            m + s.ln() / k
        }
    }
}

/// Partial derivatives of [`backup`] with respect to each entry of `q_row`,
/// written into `out`. For the hard max this is the one-hot subgradient of the
/// lowest-index maximizer.
pub fn backup_weights(q_row: &[f64], op: BackupOperator, out: &mut [f64]) {
    debug_assert_eq!(q_row.len(), out.len());
    match op {
        BackupOperator::HardMax => {
            out.iter_mut().for_each(|w| *w = 0.0);
            out[argmax(q_row)] = 1.0;
        }
        BackupOperator::LogSumExp => softmax_scaled(q_row, 1.0, out),
        BackupOperator::Bgi { k } => softmax_scaled(q_row, k, out),
    }
}

fn softmax_scaled(xs: &[f64], scale: f64, out: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (scale * (x - m)).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Boltzmann action distribution `exp(b q) / sum exp(b q)`.
pub fn boltzmann_policy(q_row: &[f64], b: f64) -> Vec<f64> {
    assert!(!q_row.is_empty(), "policy over an empty action set");
    let mut out = vec![0.0; q_row.len()];
    softmax_scaled(q_row, b, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution {
    pub v: Vec<f64>,
    /// Row-major `n_states x n_actions`.
    pub q: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl ValueSolution {
    pub fn q_row(&self, s: usize) -> &[f64] {
        let n_actions = self.q.len() / self.v.len();
        &self.q[s * n_actions..(s + 1) * n_actions]
    }
}

/// Synchronous (Jacobi) value iteration until the sup-norm change of `q` is at
/// most `tol`.
pub fn value_iteration(
    mdp: &Mdp,
    op: BackupOperator,
    tol: f64,
    max_iter: usize,
) -> Result<ValueSolution> {
    let n_s = mdp.n_states();
    let n_a = mdp.n_actions();
    let gamma = mdp.gamma();
    let mut v = vec![0.0; n_s];
    let mut q = vec![0.0; n_s * n_a];
    let mut target = vec![0.0; n_s];
    let mut residual = f64::INFINITY;

    for iter in 1..=max_iter {
        for (t, (r, vv)) in target.iter_mut().zip(mdp.reward().iter().zip(&v)) {
            *t = r + gamma * vv;
        }
        let q_new = mdp.expect(&target);
        residual = q_new
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = q_new;
        for (s, vs) in v.iter_mut().enumerate() {
            *vs = backup(&q[s * n_a..(s + 1) * n_a], op);
        }
        if residual <= tol {
            return Ok(ValueSolution {
                v,
                q,
                iterations: iter,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}
