//! Tunes the oscillator's fidelity knobs with GP-UCB.

use fidelity_falsify::bo::{optimize_fidelity, BoOptions};
use fidelity_falsify::campaign::{make_tasks, TaskSettings};
use fidelity_falsify::sim::{Oscillator, Simulator};
use fidelity_falsify::Seed;

fn main() -> fidelity_falsify::Result<()> {
    let sim = Oscillator::new();
    let tasks = make_tasks(&sim.spec().environment_space, &TaskSettings { count: 3, per_task: 2, seed: 4, weights: None })?;
    let result = optimize_fidelity(&sim, &tasks, |_| Vec::new(), 25, BoOptions::default(), Seed(8))?;
    for r in &result.regret.records {
        println!("t {:>2}  f {:?}  loss {:?}", r.t, r.fidelity, r.loss);
    }
    println!("best {:?} with loss {:.4e}", result.best_fidelity.values(), result.best_loss);
    Ok(())
}
