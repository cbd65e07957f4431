//! Ten-world comparison of sharing losses at 8 tasks and 5 demonstrations each.

use std::collections::BTreeMap;
use std::time::Instant;

use metairl::eval::{run_sweep, SweepConfig};
use metairl::losses::LossKind;

fn main() -> metairl::Result<()> {
    let mut cfg = SweepConfig {
        task_counts: vec![8],
        traj_counts: vec![5],
        ..SweepConfig::default()
    };
    cfg.train.max_iters = 1500;
    if let Some(s) = std::env::args().nth(1) {
        cfg.seed = s.parse().expect("seed");
    }
    let start = Instant::now();
    let res = run_sweep(&cfg)?;
    let mut per_world: BTreeMap<(LossKind, usize), Vec<f64>> = BTreeMap::new();
    for r in &res.records {
        if let Ok(c) = r.correlation {
            per_world.entry((r.loss_kind, r.world_id)).or_default().push(c);
        }
    }
    for kind in LossKind::ALL {
        let means: Vec<f64> = (0..cfg.n_worlds)
            .map(|w| {
                let v = &per_world[&(kind, w)];
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        let pooled = means.iter().sum::<f64>() / means.len() as f64;
        let cells: Vec<String> = means.iter().map(|m| format!("{m:.3}")).collect();
        println!("{:8} pooled {pooled:.4}  [{}]", kind.name(), cells.join(" "));
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
