//! Searches for a rear-end collision in the braking benchmark at two
//! fidelity settings.

use fidelity_falsify::falsify::{falsify, FalsifyBudget};
use fidelity_falsify::sim::{Braking, Simulator};
use fidelity_falsify::{SafetySpec, Seed};

fn main() -> fidelity_falsify::Result<()> {
    let sim = Braking::new();
    let phi = SafetySpec::parse("G(gap > 0)")?;
    let budget = FalsifyBudget::new(400).with_population(40);
    for f in [sim.spec().fidelity_space.max_fidelity(), sim.spec().fidelity_space.uniform(0.3)] {
        let r = falsify(&sim, &phi, &f, &budget, Seed(1))?;
        println!("f = {:?}", f.values());
        println!("  robustness {:.4} after {} evaluations", r.best_robustness.value(), r.evaluations_used);
        println!("  gap, speed, lead_decel = {:?}", r.best_config.values());
        println!("  counterexample found: {}", r.counterexample_found);
    }
    Ok(())
}
