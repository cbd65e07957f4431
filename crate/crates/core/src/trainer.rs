//! Joint full-batch Adam descent over the baseline network and every task network.

use rand::Rng as _;

use crate::demos::DemoSet;
use crate::error::{Error, Result};
use crate::losses::{MetaObjectiveConfig, MetaProblem, ObjectiveTerms};
use crate::mdp::Mdp;
use crate::seed;
use crate::terrain::{ground_truth_mdp, Task, Terrain};
use crate::vrfn::{self, init_params, Activation, Arch, StateFeatures, VrParams};

/// Index mixed into the seed for the baseline network's initialization.
pub const BASELINE_SEED_INDEX: u64 = u64::MAX;

/// Finite-difference step and tolerance of the optional per-iteration gradient check.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOL: f64 = 1e-4;
pub const GRAD_CHECK_COORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

pub fn adam_step(params: &mut VrParams, grads: &VrParams, state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.arch(), grads.arch(), "gradient shape does not match parameters");
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t);
    let c2 = 1.0 - cfg.beta2.powi(state.t);
    for (((p, &g), m), v) in params
        .values_mut()
        .iter_mut()
        .zip(grads.values())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub max_iters: usize,
    /// Stop once the absolute change of the objective falls below this.
    pub converge_tol: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub objective: MetaObjectiveConfig,
    /// Spot-check gradients against finite differences every iteration.
    pub check_grads: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            max_iters: 2000,
            converge_tol: 1e-6,
            seed: 0,
            hidden: vec![64, 32],
            activation: Activation::Tanh,
            objective: MetaObjectiveConfig::default(),
            check_grads: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", a.lr)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.converge_tol >= 0.0) {
            return Err(Error::Config("converge_tol must be nonnegative".into()));
        }
        self.objective.validate()
    }

    pub fn arch(&self, input_dim: usize) -> Result<Arch> {
        Arch::new(input_dim, self.hidden.clone(), self.activation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub theta_b: VrParams,
    pub thetas: Vec<VrParams>,
    /// Objective at each iteration, evaluated before that iteration's update.
    pub history: Vec<ObjectiveTerms>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl TrainResult {
    /// Recovered per-state reward of task `i`.
    pub fn task_reward(&self, i: usize, mdp: &Mdp, features: &StateFeatures, cfg: &MetaObjectiveConfig) -> Result<Vec<f64>> {
        let vr = vrfn::forward(&self.thetas[i], features)?;
        Ok(vrfn::r_from_vr(&vr, mdp, cfg.backup))
    }
}

/// Initial parameters: the baseline from `mix64(seed, BASELINE_SEED_INDEX)`,
/// task `i` from `mix64(seed, i)`.
pub fn initial_params(arch: &Arch, seed: u64, n_tasks: usize) -> (VrParams, Vec<VrParams>) {
    let theta_b = init_params(arch, seed::mix64(seed, BASELINE_SEED_INDEX));
    let thetas = (0..n_tasks)
        .map(|i| init_params(arch, seed::mix64(seed, i as u64)))
        .collect();
    (theta_b, thetas)
}

/// Trains from the standard seeded initialization.
pub fn train(mdps: &[Mdp], features: &StateFeatures, demos: &DemoSet, cfg: &TrainConfig) -> Result<TrainResult> {
    let arch = cfg.arch(features.dim())?;
    let (theta_b, thetas) = initial_params(&arch, cfg.seed, mdps.len());
    train_from(mdps, features, demos, cfg, theta_b, thetas)
}

/// Builds the task MDPs of a world and trains on them with coordinate features.
pub fn train_world(terrain: &Terrain, tasks: &[Task], gamma: f64, demos: &DemoSet, cfg: &TrainConfig) -> Result<TrainResult> {
    let mdps = tasks
        .iter()
        .map(|t| ground_truth_mdp(terrain, t, gamma, true))
        .collect::<Result<Vec<_>>>()?;
    let features = StateFeatures::new(terrain.state_features())?;
    train(&mdps, &features, demos, cfg)
}

pub fn train_from(
    mdps: &[Mdp],
    features: &StateFeatures,
    demos: &DemoSet,
    cfg: &TrainConfig,
    mut theta_b: VrParams,
    mut thetas: Vec<VrParams>,
) -> Result<TrainResult> {
    cfg.validate()?;
    let problem = MetaProblem::new(mdps, features, demos, cfg.objective)?;
    let mut state_b = AdamState::new(theta_b.values().len());
    let mut states: Vec<AdamState> = thetas.iter().map(|t| AdamState::new(t.values().len())).collect();
    let mut history: Vec<ObjectiveTerms> = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;

    for iter in 0..cfg.max_iters {
        let grad = problem.gradient(&theta_b, &thetas)?;
        if !grad.terms.total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter });
        }
        if cfg.check_grads {
            spot_check(&problem, &theta_b, &thetas, &grad, seed::mix64(cfg.seed ^ 0x5eed, iter as u64), iter)?;
        }
        let done = history
            .last()
            .is_some_and(|prev| (grad.terms.total - prev.total).abs() < cfg.converge_tol);
        history.push(grad.terms);
        if done {
            converged = true;
            break;
        }
        adam_step(&mut theta_b, &grad.theta_b, &mut state_b, &cfg.adam);
        for ((theta, g), st) in thetas.iter_mut().zip(&grad.thetas).zip(states.iter_mut()) {
            adam_step(theta, g, st, &cfg.adam);
        }
        iterations_run += 1;
    }

    Ok(TrainResult {
        theta_b,
        thetas,
        history,
        iterations_run,
        converged,
    })
}

/// Relative error with a floor on the denominator so that coordinates whose
/// gradient is numerically zero are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn spot_check(
    problem: &MetaProblem<'_>,
    theta_b: &VrParams,
    thetas: &[VrParams],
    grad: &crate::losses::MetaGradient,
    check_seed: u64,
    iteration: usize,
) -> Result<()> {
    let mut rng = seed::rng(check_seed);
    let n_sets = thetas.len() + 1;
    for _ in 0..GRAD_CHECK_COORDS {
        let set = rng.gen_range(0..n_sets);
        let (params, g) = if set == 0 {
            (theta_b, &grad.theta_b)
        } else {
            (&thetas[set - 1], &grad.thetas[set - 1])
        };
        let idx = rng.gen_range(0..params.values().len());
        let eval = |delta: f64| -> Result<f64> {
            let mut p = params.clone();
            p.values_mut()[idx] += delta;
            if set == 0 {
                Ok(problem.objective(&p, thetas)?.total)
            } else {
                let mut ts = thetas.to_vec();
                ts[set - 1] = p;
                Ok(problem.objective(theta_b, &ts)?.total)
            }
        };
        let numeric = (eval(GRAD_CHECK_STEP)? - eval(-GRAD_CHECK_STEP)?) / (2.0 * GRAD_CHECK_STEP);
        let analytic = g.values()[idx];
        let err = relative_error(analytic, numeric);
        if err >= GRAD_CHECK_TOL {
            return Err(Error::GradientCheck {
                iteration,
                analytic,
                numeric,
            });
        }
    }
    Ok(())
}
