//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use metairl::demos::{generate_demos, Trajectory};
use metairl::eval::{run_sweep, SweepConfig, SweepResult};
use metairl::losses::{divergence, irl_nll, LossKind, MetaObjectiveConfig, MetaProblem, SharingKind};
use metairl::mdp::{boltzmann_policy, value_iteration, BackupOperator};
use metairl::seed::{self, mix64};
use metairl::terrain::{generate_terrain, make_tasks, TerrainSpec};
use metairl::trainer::{initial_params, relative_error};
use metairl::vrfn::{self, Activation, Arch, VrParams};
use metairl::world::World;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn world(seed: u64, size: usize, n_tasks: usize) -> World {
    let spec = TerrainSpec {
        width: size,
        height: size,
        ..TerrainSpec::default()
    };
    let t = generate_terrain(&spec, seed).unwrap();
    let tasks = make_tasks(&t, n_tasks, 10.0, mix64(seed, 1)).unwrap();
    World::new(t, tasks, 0.9).unwrap()
}

fn oracle_round_trip() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for w in 0..20 {
        let wd = world(mix64(1, w), 5, 1);
        let mdp = &wd.mdps().unwrap()[0];
        let sol = value_iteration(mdp, BackupOperator::HardMax, 1e-12, 100_000).unwrap();
        let r_true = wd.true_reward(0);
        let vr: Vec<f64> = r_true.iter().zip(&sol.v).map(|(r, v)| r + wd.gamma * v).collect();
        let v = vrfn::v_from_vr(&vr, mdp, BackupOperator::HardMax);
        let r = vrfn::r_from_vr(&vr, mdp, BackupOperator::HardMax);
        for s in 0..vr.len() {
            worst = worst.max((v[s] - sol.v[s]).abs()).max((r[s] - r_true[s]).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && secs < 5.0,
        format!("20 worlds, max error {worst:.2e} (<= 1e-6), {secs:.2}s (< 5s)"),
    )
}

fn objective_total(problem: &MetaProblem, theta_b: &VrParams, thetas: &[VrParams]) -> f64 {
    problem.objective(theta_b, thetas).unwrap().total
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let wd = world(21, 3, 2);
    let demos = generate_demos(&wd.terrain, &wd.tasks, wd.gamma, 1, 10.0, 30, 5).unwrap();
    let mdps = wd.mdps().unwrap();
    let features = wd.features();
    let cfg = MetaObjectiveConfig {
        sharing: SharingKind::new(LossKind::Huber),
        ..MetaObjectiveConfig::default()
    };
    let problem = MetaProblem::new(&mdps, &features, &demos, cfg).unwrap();
    let arch = Arch::new(2, vec![64, 32], Activation::Tanh).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut n_checked = 0;
    for init in 0..5u64 {
        let (mut theta_b, mut thetas) = initial_params(&arch, 100 + init, 2);
        let grad = problem.gradient(&theta_b, &thetas).unwrap();
        for j in 0..theta_b.values().len() {
            let x = theta_b.values()[j];
            theta_b.values_mut()[j] = x + h;
            let up = objective_total(&problem, &theta_b, &thetas);
            theta_b.values_mut()[j] = x - h;
            let down = objective_total(&problem, &theta_b, &thetas);
            theta_b.values_mut()[j] = x;
            worst = worst.max(relative_error(grad.theta_b.values()[j], (up - down) / (2.0 * h)));
            n_checked += 1;
        }
        for i in 0..thetas.len() {
            for j in 0..thetas[i].values().len() {
                let x = thetas[i].values()[j];
                thetas[i].values_mut()[j] = x + h;
                let up = objective_total(&problem, &theta_b, &thetas);
                thetas[i].values_mut()[j] = x - h;
                let down = objective_total(&problem, &theta_b, &thetas);
                thetas[i].values_mut()[j] = x;
                worst = worst.max(relative_error(grad.thetas[i].values()[j], (up - down) / (2.0 * h)));
                n_checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 30.0,
        format!("3x3 world, 2 tasks, 1 trajectory each: {n_checked} coordinates over 5 inits, max relative error {worst:.2e} (< 1e-4), {secs:.1}s (< 30s)"),
    )
}

fn likelihood_identities() -> Outcome {
    let mut rng = seed::rng(33);
    let mut worst_nll: f64 = 0.0;
    for inst in 0..1000u64 {
        let size = rng.gen_range(2..=5);
        let wd = world(mix64(2, inst), size, 1);
        let mdp = &wd.mdps().unwrap()[0];
        let features = wd.features();
        let hidden: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(2..=12)).collect();
        let act = if rng.gen_bool(0.5) { Activation::Tanh } else { Activation::Relu };
        let arch = Arch::new(2, hidden, act).unwrap();
        let mut params = vrfn::init_params(&arch, mix64(3, inst));
        let scale = rng.gen_range(0.5..4.0);
        params.values_mut().iter_mut().for_each(|x| *x *= scale);
        let b = rng.gen_range(0.05..20.0);
        let n_states = mdp.n_states();
        let demos: Vec<Trajectory> = (0..rng.gen_range(1..=4))
            .map(|_| Trajectory {
                task_id: 0,
                steps: (0..rng.gen_range(1..=12))
                    .map(|_| (rng.gen_range(0..n_states), rng.gen_range(0..4)))
                    .collect(),
                truncated: false,
            })
            .collect();
        let nll = irl_nll(&params, mdp, &features, &demos, b).unwrap();
        let q = vrfn::q_from_vr(&vrfn::forward(&params, &features).unwrap(), mdp);
        let direct: f64 = demos
            .iter()
            .flat_map(|t| &t.steps)
            .map(|&(s, a)| -boltzmann_policy(&q[s * 4..s * 4 + 4], b)[a].ln())
            .sum();
        worst_nll = worst_nll.max((nll - direct).abs());
    }
    let mut worst_sum: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=8);
        let mag = 10f64.powf(rng.gen_range(-3.0..3.0));
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-mag..mag)).collect();
        let b = 10f64.powf(rng.gen_range(-2.0..2.0));
        worst_sum = worst_sum.max((boltzmann_policy(&row, b).iter().sum::<f64>() - 1.0).abs());
    }
    check(
        worst_nll <= 1e-10 && worst_sum <= 1e-12,
        format!("1000 instances, max nll gap {worst_nll:.2e} (<= 1e-10); max policy row-sum error {worst_sum:.2e} (<= 1e-12)"),
    )
}

fn sharing_unit_values() -> Outcome {
    let huber = SharingKind::new(LossKind::Huber);
    let h_half = divergence(&[0.5], &huber).unwrap();
    let h_two = divergence(&[2.0], &huber).unwrap();
    let entropy = SharingKind::new(LossKind::Entropy);
    let mut worst_entropy: f64 = 0.0;
    for n in 1..=64 {
        for c in [-3.0, 0.0, 0.7, 42.0] {
            let e = divergence(&vec![c; n], &entropy).unwrap();
            worst_entropy = worst_entropy.max((e - (n as f64).ln()).abs());
        }
    }
    let stdev = SharingKind::new(LossKind::Stdev);
    // exactly representable differences and shifts: no rounding anywhere
    let d = [0.25, -1.5, 3.0, 0.0, 2.75, -0.5, 1.0, 0.5];
    let base = divergence(&d, &stdev).unwrap();
    let exact = [-64.0, -1.0, 0.5, 8.0, 1024.0].iter().all(|c| {
        let shifted: Vec<f64> = d.iter().map(|x| x + c).collect();
        divergence(&shifted, &stdev).unwrap() == base
    });
    let ok = h_half == 0.125 && h_two == 1.5 && worst_entropy < 1e-12 && exact;
    check(
        ok,
        format!(
            "huber(0.5) = {h_half}, huber(2) = {h_two}, entropy vs ln n max gap {worst_entropy:.1e}, stdev shift-invariant exactly: {exact}"
        ),
    )
}

struct Replication {
    per_world: BTreeMap<LossKind, Vec<f64>>,
    n_failed: usize,
    secs: f64,
}

impl Replication {
    fn pooled(&self, kind: LossKind) -> f64 {
        let m = &self.per_world[&kind];
        m.iter().sum::<f64>() / m.len() as f64
    }
}

fn replicate() -> Replication {
    let mut cfg = SweepConfig {
        n_worlds: 10,
        task_counts: vec![8],
        traj_counts: vec![5],
        loss_kinds: LossKind::ALL.to_vec(),
        ..SweepConfig::default()
    };
    cfg.terrain.width = 8;
    cfg.terrain.height = 8;
    cfg.train.max_iters = 1500;
    cfg.train.adam.lr = 0.01;
    let start = Instant::now();
    let SweepResult { records } = run_sweep(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut sums: BTreeMap<(LossKind, usize), Vec<f64>> = BTreeMap::new();
    let mut n_failed = 0;
    for r in &records {
        match r.correlation {
            Ok(c) => sums.entry((r.loss_kind, r.world_id)).or_default().push(c),
            Err(_) => n_failed += 1,
        }
    }
    let per_world = LossKind::ALL
        .iter()
        .map(|&k| {
            let means = (0..cfg.n_worlds)
                .map(|w| {
                    let v = sums.get(&(k, w)).map(Vec::as_slice).unwrap_or(&[]);
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .collect();
            (k, means)
        })
        .collect();
    Replication {
        per_world,
        n_failed,
        secs,
    }
}

fn improvement_trend(rep: &Replication) -> Outcome {
    let huber = &rep.per_world[&LossKind::Huber];
    let none = &rep.per_world[&LossKind::None];
    let wins = huber.iter().zip(none).filter(|(h, n)| h > n).count();
    let gain = rep.pooled(LossKind::Huber) - rep.pooled(LossKind::None);
    let budget = if rayon::current_num_threads() >= 8 { 240.0 } else { 900.0 };
    check(
        wins >= 7 && gain >= 0.03 && rep.n_failed == 0 && rep.secs < budget,
        format!(
            "huber beats none in {wins}/10 worlds (>= 7), pooled {:.4} vs {:.4}, gain {gain:.4} (>= 0.03), {} failed cells, {:.0}s on {} threads (< {budget:.0}s)",
            rep.pooled(LossKind::Huber),
            rep.pooled(LossKind::None),
            rep.n_failed,
            rep.secs,
            rayon::current_num_threads(),
        ),
    )
}

fn loss_ranking(rep: &Replication) -> Outcome {
    let mut ranked: Vec<(LossKind, f64)> = LossKind::ALL.iter().map(|&k| (k, rep.pooled(k))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let entropy_rank = ranked.iter().position(|(k, _)| *k == LossKind::Entropy).unwrap();
    let huber_ok = rep.pooled(LossKind::Huber) >= rep.pooled(LossKind::L2) - 0.02;
    let listing: Vec<String> = ranked.iter().map(|(k, m)| format!("{} {m:.4}", k.name())).collect();
    check(
        huber_ok && entropy_rank >= 3,
        format!("ranking: {} (huber >= l2 - 0.02: {huber_ok}; entropy rank {}/5)", listing.join(", "), entropy_rank + 1),
    )
}

fn bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_metairl"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(
        &cfg,
        r#"{"sweep": {"n_worlds": 1, "task_counts": [1, 2], "traj_counts": [1, 2], "loss_kinds": ["none", "huber"]}}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    let mut slowest = Duration::ZERO;
    for (run, jobs) in [(0, "1"), (1, "8"), (2, "1")] {
        let out = dir.path().join(format!("run{run}"));
        let start = Instant::now();
        bin(&["sweep", "--config", p(&cfg), "--out-dir", p(&out), "--jobs", jobs])?;
        slowest = slowest.max(start.elapsed());
        let files = ["results.csv", "aggregate.csv", "panel_tasks_01.svg", "panel_tasks_02.svg"]
            .map(|f| fs::read(out.join(f)).unwrap());
        outputs.push(files);
    }
    let same = outputs[0] == outputs[1] && outputs[0] == outputs[2];
    let rows = outputs[0][0].iter().filter(|&&b| b == b'\n').count() - 1;
    check(
        same && slowest.as_secs_f64() < 60.0,
        format!(
            "--jobs 1, --jobs 8, --jobs 1 byte-identical: {same} ({rows} result rows); slowest run {:.1}s (< 60s)",
            slowest.as_secs_f64()
        ),
    )
}

fn decoupling_identity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("world.json");
    let d = dir.path().join("demos.csv");
    bin(&["gen-world", "--seed", "12", "--width", "5", "--height", "5", "--tasks", "3", "--out", p(&w)])?;
    bin(&["gen-demos", "--world", p(&w), "--n-traj", "5", "--seed", "2", "--out", p(&d)])?;
    let none = dir.path().join("none");
    let l2 = dir.path().join("l2");
    let common = ["--world", p(&w), "--demos", p(&d), "--iters", "300", "--seed", "8"];
    bin(&[&["train"][..], &common, &["--loss", "none", "--out-dir", p(&none)]].concat())?;
    bin(&[&["train"][..], &common, &["--loss", "l2", "--lambda", "0", "--out-dir", p(&l2)]].concat())?;
    let files = ["theta_b.json", "theta_0.json", "theta_1.json", "theta_2.json", "train_log.csv"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(none.join(f)).unwrap() != fs::read(l2.join(f)).unwrap())
        .collect();
    check(
        differing.is_empty(),
        format!("{} checkpoint/log files compared byte-for-byte, differing: {differing:?}", files.len()),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} [{status}] {name}: {detail}");
    };
    report(1, "oracle round-trip", oracle_round_trip());
    report(2, "gradient correctness", gradient_check());
    report(3, "likelihood identities", likelihood_identities());
    report(4, "sharing-loss unit values", sharing_unit_values());
    let rep = replicate();
    report(5, "meta-learning improvement trend", improvement_trend(&rep));
    report(6, "loss-ranking consistency", loss_ranking(&rep));
    report(7, "end-to-end determinism", end_to_end_determinism());
    report(8, "decoupling identity", decoupling_identity());
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 8 acceptance criteria passed");
}
