//! Demonstration likelihood, reward-sharing divergences and the joint objective.

use rayon::prelude::*;

use crate::demos::{DemoSet, Trajectory};
use crate::error::{Error, Result};
use crate::mdp::{log_sum_exp, BackupOperator, Mdp};
use crate::vrfn::{self, StateFeatures, VrParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    None,
    L2,
    Huber,
    Stdev,
    Entropy,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::None,
        LossKind::L2,
        LossKind::Huber,
        LossKind::Stdev,
        LossKind::Entropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::None => "none",
            LossKind::L2 => "l2",
            LossKind::Huber => "huber",
            LossKind::Stdev => "stdev",
            LossKind::Entropy => "entropy",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown sharing loss '{name}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    AllStates,
    VisitedStates,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharingKind {
    pub kind: LossKind,
    /// Huber threshold.
    pub delta: f64,
    pub domain: Domain,
}

impl SharingKind {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            delta: 1.0,
            domain: Domain::AllStates,
        }
    }
}

impl Default for SharingKind {
    fn default() -> Self {
        Self::new(LossKind::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaObjectiveConfig {
    /// Confidence of the Boltzmann action model.
    pub b: f64,
    /// Weight of the sharing term.
    pub lambda: f64,
    pub sharing: SharingKind,
    pub backup: BackupOperator,
}

impl Default for MetaObjectiveConfig {
    fn default() -> Self {
        Self {
            b: crate::demos::DEFAULT_DEMO_B,
            lambda: 1.0,
            sharing: SharingKind::default(),
            backup: BackupOperator::HardMax,
        }
    }
}

impl MetaObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::Config(format!("b must be positive, got {}", self.b)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.sharing.delta > 0.0) {
            return Err(Error::Config(format!("huber delta must be positive, got {}", self.sharing.delta)));
        }
        if let BackupOperator::Bgi { k } = self.backup {
            BackupOperator::bgi(k)?;
        }
        Ok(())
    }

    /// Whether the sharing term contributes at all.
    pub fn shares(&self) -> bool {
        self.sharing.kind != LossKind::None && self.lambda != 0.0
    }
}

/// Demonstrated `(state, action)` multiplicities for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCounts {
    n_actions: usize,
    /// `(state, per-action counts)` for every visited state, ascending.
    rows: Vec<(usize, Vec<f64>)>,
    total: usize,
}

impl PairCounts {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, n_states: usize, n_actions: usize) -> Result<Self> {
        let mut dense = vec![0.0; n_states * n_actions];
        let mut total = 0;
        for (s, a) in pairs {
            if s >= n_states || a >= n_actions {
                return Err(Error::Format(format!("pair ({s}, {a}) out of range")));
            }
            dense[s * n_actions + a] += 1.0;
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyDemos);
        }
        let rows = dense
            .chunks_exact(n_actions)
            .enumerate()
            .filter(|(_, row)| row.iter().any(|&c| c > 0.0))
            .map(|(s, row)| (s, row.to_vec()))
            .collect();
        Ok(Self { n_actions, rows, total })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn visited(&self) -> Vec<usize> {
        self.rows.iter().map(|(s, _)| *s).collect()
    }

    /// `sum over pairs of -log P(a | s)` under the Boltzmann model on `q`.
    pub fn nll(&self, q: &[f64], b: f64) -> f64 {
        let n_a = self.n_actions;
        let mut scaled = vec![0.0; n_a];
        let mut total = 0.0;
        for (s, counts) in &self.rows {
            let row = &q[s * n_a..(s + 1) * n_a];
            scaled.iter_mut().zip(row).for_each(|(x, q)| *x = b * q);
            let lse = log_sum_exp(&scaled);
            let n: f64 = counts.iter().sum();
            total += n * lse - counts.iter().zip(&scaled).map(|(c, x)| c * x).sum::<f64>();
        }
        total
    }

    /// Adds `d nll / d q` into `dq`.
    pub fn nll_grad(&self, q: &[f64], b: f64, dq: &mut [f64]) {
        let n_a = self.n_actions;
        let mut p = vec![0.0; n_a];
        for (s, counts) in &self.rows {
            let row = &q[s * n_a..(s + 1) * n_a];
            p.copy_from_slice(&crate::mdp::boltzmann_policy(row, b));
            let n: f64 = counts.iter().sum();
            for ((g, pa), c) in dq[s * n_a..(s + 1) * n_a].iter_mut().zip(&p).zip(counts) {
                *g += b * (n * pa - c);
            }
        }
    }
}

/// Negative log-likelihood of one task's demonstrations under the Boltzmann
/// model on `Q = P f(theta)`.
pub fn irl_nll(
    params: &VrParams,
    mdp: &Mdp,
    features: &StateFeatures,
    demos: &[Trajectory],
    b: f64,
) -> Result<f64> {
    let counts = PairCounts::from_pairs(
        demos.iter().flat_map(|t| t.steps.iter().copied()),
        mdp.n_states(),
        mdp.n_actions(),
    )?;
    let vr = vrfn::forward(params, features)?;
    Ok(counts.nll(&vrfn::q_from_vr(&vr, mdp), b))
}

fn restrict(r_i: &[f64], r_b: &[f64], mask: Option<&[usize]>) -> Vec<f64> {
    match mask {
        Some(states) => states.iter().map(|&s| r_i[s] - r_b[s]).collect(),
        None => r_i.iter().zip(r_b).map(|(a, b)| a - b).collect(),
    }
}

fn huber(a: f64, delta: f64) -> f64 {
    if a.abs() <= delta {
        0.5 * a * a
    } else {
        delta * (a.abs() - 0.5 * delta)
    }
}

fn mean(d: &[f64]) -> f64 {
    d.iter().sum::<f64>() / d.len() as f64
}

fn softmax(d: &[f64]) -> Vec<f64> {
    crate::mdp::boltzmann_policy(d, 1.0)
}

/// Divergence of a difference vector.
pub fn divergence(d: &[f64], kind: &SharingKind) -> Result<f64> {
    if kind.kind == LossKind::None {
        return Ok(0.0);
    }
    if d.is_empty() {
        return Err(Error::EmptyDomain);
    }
    Ok(match kind.kind {
        LossKind::None => 0.0,
        LossKind::L2 => d.iter().map(|x| x * x).sum::<f64>().sqrt(),
        LossKind::Huber => d.iter().map(|&x| huber(x, kind.delta)).sum(),
        LossKind::Stdev => {
            let m = mean(d);
            (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / d.len() as f64).sqrt()
        }
        LossKind::Entropy => {
            let lse = log_sum_exp(d);
            // H = -sum p log p with log p = d - lse
            softmax(d).iter().zip(d).map(|(p, x)| -p * (x - lse)).sum()
        }
    })
}

/// Writes `d divergence / d d` into `out`. Nondifferentiable points (zero
/// norm or zero spread) take the zero subgradient.
pub fn divergence_grad(d: &[f64], kind: &SharingKind, out: &mut [f64]) {
    match kind.kind {
        LossKind::None => out.iter_mut().for_each(|g| *g = 0.0),
        LossKind::L2 => {
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (g, x) in out.iter_mut().zip(d) {
                *g = if norm > 0.0 { x / norm } else { 0.0 };
            }
        }
        LossKind::Huber => {
            for (g, &x) in out.iter_mut().zip(d) {
                *g = x.clamp(-kind.delta, kind.delta);
            }
        }
        LossKind::Stdev => {
            let m = mean(d);
            let n = d.len() as f64;
            let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            for (g, x) in out.iter_mut().zip(d) {
                *g = if sd > 0.0 { (x - m) / (n * sd) } else { 0.0 };
            }
        }
        LossKind::Entropy => {
            let p = softmax(d);
            let avg: f64 = p.iter().zip(d).map(|(p, x)| p * x).sum();
            for ((g, pj), x) in out.iter_mut().zip(&p).zip(d) {
                *g = -pj * (x - avg);
            }
        }
    }
}

/// Divergence between a task reward and the baseline, optionally restricted
/// to a set of states.
pub fn sharing_divergence(r_i: &[f64], r_b: &[f64], mask: Option<&[usize]>, kind: &SharingKind) -> Result<f64> {
    if r_i.len() != r_b.len() {
        return Err(Error::ShapeMismatch(format!("reward lengths {} and {}", r_i.len(), r_b.len())));
    }
    if let Some(states) = mask {
        if let Some(&s) = states.iter().find(|&&s| s >= r_i.len()) {
            return Err(Error::ShapeMismatch(format!("mask state {s} out of range")));
        }
    }
    divergence(&restrict(r_i, r_b, mask), kind)
}

/// Value of the joint objective and its two parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveTerms {
    pub total: f64,
    pub irl: f64,
    pub sharing: f64,
}

#[derive(Debug, Clone)]
pub struct MetaGradient {
    pub terms: ObjectiveTerms,
    pub theta_b: VrParams,
    pub thetas: Vec<VrParams>,
}

/// Everything about a multi-task problem that stays fixed during training.
#[derive(Debug, Clone)]
pub struct MetaProblem<'a> {
    mdps: &'a [Mdp],
    features: &'a StateFeatures,
    counts: Vec<PairCounts>,
    masks: Vec<Option<Vec<usize>>>,
    cfg: MetaObjectiveConfig,
}

struct TaskPart {
    irl: f64,
    sharing: f64,
    grad: VrParams,
    /// Cotangent pushed onto the baseline reward.
    dr_b: Vec<f64>,
}

impl<'a> MetaProblem<'a> {
    pub fn new(mdps: &'a [Mdp], features: &'a StateFeatures, demos: &DemoSet, cfg: MetaObjectiveConfig) -> Result<Self> {
        cfg.validate()?;
        if mdps.len() != demos.n_tasks() {
            return Err(Error::ShapeMismatch(format!(
                "{} mdps but {} demo buckets",
                mdps.len(),
                demos.n_tasks()
            )));
        }
        let mut counts = Vec::with_capacity(mdps.len());
        for (i, mdp) in mdps.iter().enumerate() {
            if mdp.n_states() != features.n_states() {
                return Err(Error::ShapeMismatch(format!(
                    "task {i} has {} states, features have {}",
                    mdp.n_states(),
                    features.n_states()
                )));
            }
            counts.push(PairCounts::from_pairs(demos.pairs(i), mdp.n_states(), mdp.n_actions())?);
        }
        let masks = counts
            .iter()
            .map(|c| match cfg.sharing.domain {
                Domain::AllStates => None,
                Domain::VisitedStates => Some(c.visited()),
            })
            .collect();
        Ok(Self {
            mdps,
            features,
            counts,
            masks,
            cfg,
        })
    }

    pub fn config(&self) -> &MetaObjectiveConfig {
        &self.cfg
    }

    pub fn n_tasks(&self) -> usize {
        self.mdps.len()
    }

    fn check_lengths(&self, thetas: &[VrParams]) -> Result<()> {
        if thetas.len() != self.mdps.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} task networks for {} tasks",
                thetas.len(),
                self.mdps.len()
            )));
        }
        Ok(())
    }

    pub fn objective(&self, theta_b: &VrParams, thetas: &[VrParams]) -> Result<ObjectiveTerms> {
        self.check_lengths(thetas)?;
        let shares = self.cfg.shares();
        let r_b = if shares {
            vrfn::forward(theta_b, self.features)?
        } else {
            Vec::new()
        };
        let mut terms = ObjectiveTerms::default();
        for (i, theta) in thetas.iter().enumerate() {
            let mdp = &self.mdps[i];
            let vr = vrfn::forward(theta, self.features)?;
            let q = vrfn::q_from_vr(&vr, mdp);
            terms.irl += self.counts[i].nll(&q, self.cfg.b);
            if shares {
                let r_i = vrfn::r_from_vr(&vr, mdp, self.cfg.backup);
                terms.sharing += sharing_divergence(&r_i, &r_b, self.masks[i].as_deref(), &self.cfg.sharing)?;
            }
        }
        terms.total = terms.irl + self.cfg.lambda * terms.sharing;
        Ok(terms)
    }

    fn task_part(&self, i: usize, theta: &VrParams, r_b: &[f64]) -> Result<TaskPart> {
        let mdp = &self.mdps[i];
        let cfg = &self.cfg;
        let cache = vrfn::forward_cached(theta, self.features)?;
        let vr = &cache.output;
        let q = vrfn::q_from_vr(vr, mdp);
        let irl = self.counts[i].nll(&q, cfg.b);
        let mut dq = vec![0.0; q.len()];
        self.counts[i].nll_grad(&q, cfg.b, &mut dq);
        let mut dvr = vec![0.0; vr.len()];
        vrfn::q_from_vr_backward(mdp, &dq, &mut dvr);

        let mut sharing = 0.0;
        let mut dr_b = Vec::new();
        if cfg.shares() {
            let r_i = vrfn::r_from_vr(vr, mdp, cfg.backup);
            let mask = self.masks[i].as_deref();
            let d = restrict(&r_i, r_b, mask);
            sharing = divergence(&d, &cfg.sharing)?;
            let mut dd = vec![0.0; d.len()];
            divergence_grad(&d, &cfg.sharing, &mut dd);
            let mut dr = vec![0.0; r_i.len()];
            match mask {
                Some(states) => {
                    for (&s, g) in states.iter().zip(&dd) {
                        dr[s] = cfg.lambda * g;
                    }
                }
                None => dr.iter_mut().zip(&dd).for_each(|(o, g)| *o = cfg.lambda * g),
            }
            vrfn::r_from_vr_backward(&q, mdp, cfg.backup, &dr, &mut dvr);
            dr_b = dr.into_iter().map(|g| -g).collect();
        }
        let mut grad = VrParams::zeros(theta.arch());
        vrfn::backward(theta, self.features, &cache, &dvr, &mut grad);
        Ok(TaskPart {
            irl,
            sharing,
            grad,
            dr_b,
        })
    }

    /// Objective value and its exact gradient with respect to every network.
    /// Per-task parts are computed in parallel and reduced in task order.
    pub fn gradient(&self, theta_b: &VrParams, thetas: &[VrParams]) -> Result<MetaGradient> {
        self.check_lengths(thetas)?;
        let shares = self.cfg.shares();
        let base_cache = if shares {
            Some(vrfn::forward_cached(theta_b, self.features)?)
        } else {
            None
        };
        let r_b: &[f64] = base_cache.as_ref().map_or(&[], |c| &c.output);
        let parts = thetas
            .par_iter()
            .enumerate()
            .map(|(i, theta)| self.task_part(i, theta, r_b))
            .collect::<Result<Vec<_>>>()?;

        let mut terms = ObjectiveTerms::default();
        let mut dr_b = vec![0.0; self.features.n_states()];
        let mut grads = Vec::with_capacity(parts.len());
        for part in parts {
            terms.irl += part.irl;
            terms.sharing += part.sharing;
            for (acc, g) in dr_b.iter_mut().zip(&part.dr_b) {
                *acc += g;
            }
            grads.push(part.grad);
        }
        terms.total = terms.irl + self.cfg.lambda * terms.sharing;
        let mut grad_b = VrParams::zeros(theta_b.arch());
        if let Some(cache) = &base_cache {
            vrfn::backward(theta_b, self.features, cache, &dr_b, &mut grad_b);
        }
        Ok(MetaGradient {
            terms,
            theta_b: grad_b,
            thetas: grads,
        })
    }
}

/// Joint objective: per-task demonstration NLL plus `lambda` times the
/// divergence between each task reward and the baseline reward network output.
pub fn meta_objective(
    theta_b: &VrParams,
    thetas: &[VrParams],
    mdps: &[Mdp],
    features: &StateFeatures,
    demos: &DemoSet,
    cfg: &MetaObjectiveConfig,
) -> Result<ObjectiveTerms> {
    MetaProblem::new(mdps, features, demos, *cfg)?.objective(theta_b, thetas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::boltzmann_policy;
    use crate::vrfn::{init_params, Activation, Arch};
    use proptest::prelude::*;

    fn kind(k: LossKind) -> SharingKind {
        SharingKind::new(k)
    }

    #[test]
    fn huber_values() {
        let h = kind(LossKind::Huber);
        assert_eq!(divergence(&[0.5], &h).unwrap(), 0.125);
        assert_eq!(divergence(&[2.0], &h).unwrap(), 1.5);
        assert_eq!(divergence(&[-2.0], &h).unwrap(), 1.5);
    }

    #[test]
    fn equal_rewards_have_zero_divergence() {
        let r = [0.3, -1.0, 2.0];
        for k in [LossKind::L2, LossKind::Huber, LossKind::Stdev, LossKind::None] {
            assert_eq!(sharing_divergence(&r, &r, None, &kind(k)).unwrap(), 0.0);
        }
    }

    #[test]
    fn entropy_and_stdev_values() {
        for n in [1, 2, 5, 64] {
            let d = vec![1.7; n];
            let e = divergence(&d, &kind(LossKind::Entropy)).unwrap();
            assert!((e - (n as f64).ln()).abs() < 1e-12);
        }
        assert_eq!(divergence(&[0.0, 2.0], &kind(LossKind::Stdev)).unwrap(), 1.0);
    }

    #[test]
    fn empty_domain() {
        let r = [1.0, 2.0];
        let empty: [usize; 0] = [];
        assert!(matches!(
            sharing_divergence(&r, &r, Some(&empty), &kind(LossKind::L2)),
            Err(Error::EmptyDomain)
        ));
        assert_eq!(sharing_divergence(&r, &r, Some(&empty), &kind(LossKind::None)).unwrap(), 0.0);
        assert!(sharing_divergence(&r, &r, Some(&[2]), &kind(LossKind::L2)).is_err());
    }

    #[test]
    fn mask_restricts_states() {
        let r_i = [1.0, 5.0, 3.0];
        let r_b = [0.0, 5.0, 0.0];
        let l2 = kind(LossKind::L2);
        assert_eq!(sharing_divergence(&r_i, &r_b, Some(&[1]), &l2).unwrap(), 0.0);
        assert_eq!(sharing_divergence(&r_i, &r_b, Some(&[0, 2]), &l2).unwrap(), 10f64.sqrt());
    }

    fn single_state_mdp(n_a: usize) -> Mdp {
        // state 0 moves to state a+1 under action a
        let n = n_a + 1;
        let mut tr = Vec::new();
        for s in 0..n {
            for a in 0..n_a {
                tr.push(vec![(if s == 0 { a + 1 } else { s }, 1.0)]);
            }
        }
        Mdp::new(n, n_a, tr, vec![0.0; n], 0.9).unwrap()
    }

    #[test]
    fn nll_examples() {
        let q = vec![0.4; 4];
        let c = PairCounts::from_pairs([(0, 2)], 1, 4).unwrap();
        assert!((c.nll(&q, 3.0) - 4f64.ln()).abs() < 1e-14);

        let two = PairCounts::from_pairs([(0, 2), (0, 2)], 1, 4).unwrap();
        assert_eq!(two.nll(&q, 3.0), 2.0 * c.nll(&q, 3.0));

        let mut prev = 0.0;
        for drop in [0.0, 1.0, 5.0] {
            let q = vec![0.0, 0.0, -drop, 0.0];
            let l = c.nll(&q, 2.0);
            assert!(l > prev);
            prev = l;
        }
        assert!(matches!(PairCounts::from_pairs([], 1, 4), Err(Error::EmptyDemos)));
    }

    #[test]
    fn irl_nll_through_network() {
        let mdp = single_state_mdp(4);
        let arch = Arch::new(1, vec![], Activation::Tanh).unwrap();
        let features = StateFeatures::new((0..5).map(|s| vec![s as f64]).collect()).unwrap();
        let params = VrParams::from_values(&arch, vec![0.5, 0.1]).unwrap();
        let traj = Trajectory {
            task_id: 0,
            steps: vec![(0, 3)],
            truncated: false,
        };
        let q: Vec<f64> = (1..=4).map(|s| 0.5 * s as f64 + 0.1).collect();
        let expected = -boltzmann_policy(&q, 2.0)[3].ln();
        let got = irl_nll(&params, &mdp, &features, &[traj], 2.0).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!(matches!(irl_nll(&params, &mdp, &features, &[], 2.0), Err(Error::EmptyDemos)));
    }

    fn check_div_grad(d: &[f64], k: LossKind) {
        let sk = kind(k);
        let mut g = vec![0.0; d.len()];
        divergence_grad(d, &sk, &mut g);
        let h = 1e-6;
        for i in 0..d.len() {
            let mut p = d.to_vec();
            p[i] += h;
            let mut m = d.to_vec();
            m[i] -= h;
            let fd = (divergence(&p, &sk).unwrap() - divergence(&m, &sk).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{k:?} {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn divergence_gradients() {
        let d = [0.3, -1.7, 2.2, 0.05, -0.4];
        for k in LossKind::ALL {
            check_div_grad(&d, k);
        }
    }

    #[test]
    fn degenerate_gradients_are_zero() {
        let mut g = vec![1.0; 3];
        divergence_grad(&[0.0; 3], &kind(LossKind::L2), &mut g);
        assert_eq!(g, vec![0.0; 3]);
        let mut g = vec![1.0; 3];
        divergence_grad(&[2.0; 3], &kind(LossKind::Stdev), &mut g);
        assert_eq!(g, vec![0.0; 3]);
    }

    fn tiny_problem() -> (Vec<Mdp>, StateFeatures, DemoSet) {
        let mdp = single_state_mdp(3);
        let features = StateFeatures::new((0..4).map(|s| vec![s as f64 / 3.0, 1.0 - s as f64 / 3.0]).collect()).unwrap();
        let t = |task_id, a| Trajectory {
            task_id,
            steps: vec![(0, a)],
            truncated: false,
        };
        let demos = DemoSet {
            per_task: vec![vec![t(0, 0), t(0, 1)], vec![t(1, 2)]],
            provenance: None,
        };
        (vec![mdp.clone(), mdp], features, demos)
    }

    #[test]
    fn zero_lambda_decouples() {
        let (mdps, f, demos) = tiny_problem();
        let arch = Arch::new(2, vec![4], Activation::Tanh).unwrap();
        let tb = init_params(&arch, 0);
        let th = vec![init_params(&arch, 1), init_params(&arch, 2)];
        let irl: f64 = (0..2)
            .map(|i| irl_nll(&th[i], &mdps[i], &f, &demos.per_task[i], 10.0).unwrap())
            .sum();
        for (k, lambda) in [(LossKind::Huber, 0.0), (LossKind::None, 3.0)] {
            let cfg = MetaObjectiveConfig {
                lambda,
                sharing: kind(k),
                ..MetaObjectiveConfig::default()
            };
            let v = meta_objective(&tb, &th, &mdps, &f, &demos, &cfg).unwrap();
            assert!((v.total - irl).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_divergence_leaves_only_irl() {
        // linear networks: theta_b chosen so r_b equals r_1 exactly
        let mdp = Mdp::new(2, 1, vec![vec![(0, 1.0)], vec![(1, 1.0)]], vec![0.0; 2], 0.5).unwrap();
        let features = StateFeatures::new(vec![vec![1.0], vec![2.0]]).unwrap();
        let arch = Arch::new(1, vec![], Activation::Tanh).unwrap();
        let th = VrParams::from_values(&arch, vec![2.0, 1.0]).unwrap();
        // self loops: r = vr (1 - gamma) = 0.5 vr
        let tb = VrParams::from_values(&arch, vec![1.0, 0.5]).unwrap();
        let demos = DemoSet {
            per_task: vec![vec![Trajectory {
                task_id: 0,
                steps: vec![(0, 0), (0, 0)],
                truncated: false,
            }]],
            provenance: None,
        };
        let cfg = MetaObjectiveConfig {
            lambda: 7.0,
            sharing: kind(LossKind::L2),
            ..MetaObjectiveConfig::default()
        };
        let mdps = [mdp];
        let v = meta_objective(&tb, std::slice::from_ref(&th), &mdps, &features, &demos, &cfg).unwrap();
        assert_eq!(v.sharing, 0.0);
        assert_eq!(v.total, irl_nll(&th, &mdps[0], &features, &demos.per_task[0], cfg.b).unwrap());
    }

    #[test]
    fn gradient_value_matches_objective() {
        let (mdps, f, demos) = tiny_problem();
        let arch = Arch::new(2, vec![5, 3], Activation::Tanh).unwrap();
        let tb = init_params(&arch, 10);
        let th = vec![init_params(&arch, 11), init_params(&arch, 12)];
        for k in LossKind::ALL {
            let cfg = MetaObjectiveConfig {
                sharing: kind(k),
                ..MetaObjectiveConfig::default()
            };
            let p = MetaProblem::new(&mdps, &f, &demos, cfg).unwrap();
            let a = p.objective(&tb, &th).unwrap();
            let g = p.gradient(&tb, &th).unwrap();
            assert!((a.total - g.terms.total).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn symmetric_losses(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20)
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            for k in [LossKind::L2, LossKind::Huber] {
                let x = sharing_divergence(&a, &b, None, &kind(k)).unwrap();
                let y = sharing_divergence(&b, &a, None, &kind(k)).unwrap();
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert_eq!(x == 0.0, a == b);
            }
        }

        #[test]
        fn shift_invariances(d in prop::collection::vec(-5.0f64..5.0, 1..20), c in -10.0f64..10.0) {
            let shifted: Vec<f64> = d.iter().map(|x| x + c).collect();
            let sd = divergence(&d, &kind(LossKind::Stdev)).unwrap();
            let sd2 = divergence(&shifted, &kind(LossKind::Stdev)).unwrap();
            prop_assert!((sd - sd2).abs() < 1e-12);
            let e = divergence(&d, &kind(LossKind::Entropy)).unwrap();
            let e2 = divergence(&shifted, &kind(LossKind::Entropy)).unwrap();
            prop_assert!((e - e2).abs() < 1e-12);
        }

        #[test]
        fn nll_bounds(q in prop::collection::vec(-3.0f64..3.0, 4), a in 0usize..4, b in 0.1f64..10.0) {
            let c = PairCounts::from_pairs([(0, a), (0, (a + 1) % 4)], 1, 4).unwrap();
            let l = c.nll(&q, b);
            let gap = q.iter().copied().fold(f64::MIN, f64::max) - q.iter().copied().fold(f64::MAX, f64::min);
            prop_assert!(l >= 0.0);
            prop_assert!(l <= 2.0 * (b * gap + 4f64.ln()) + 1e-12);
        }
    }
}
