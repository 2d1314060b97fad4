//! Runs both built-in benchmarks at several fidelity settings and prints
//! the trajectory loss and cost of each.

use fidelity_falsify::loss::mse_loss;
use fidelity_falsify::sim::builtin_simulator;
use fidelity_falsify::Seed;

fn main() -> fidelity_falsify::Result<()> {
    for id in ["oscillator", "braking"] {
        let sim = builtin_simulator(id)?;
        let spec = sim.spec();
        let e = spec.environment_space.center();
        let high = sim.simulate_high(&e, Seed(0))?;
        println!("{id}: e = {:?}, {} steps of {}", e.values(), spec.steps, spec.base_dt);
        for v in [1.0, 0.75, 0.5, 0.25, 0.0] {
            let f = spec.fidelity_space.uniform(v);
            let low = sim.simulate_low(&e, &f, Seed(0))?;
            println!(
                "  f = {v:.2}  loss {:.4e}  steps {:>5}  noisy {}",
                mse_loss(&high, &low)?.value(),
                spec.low_cost(&f),
                spec.is_noisy(&f)
            );
        }
    }
    Ok(())
}
