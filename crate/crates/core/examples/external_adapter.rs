//! Drives a Python simulator through the JSON adapter protocol. Run from
//! the crate directory so the adapter script path resolves.

use fidelity_falsify::campaign::CampaignConfig;
use fidelity_falsify::falsify::{falsify, FalsifyBudget};
use fidelity_falsify::{SafetySpec, Seed};

fn main() -> fidelity_falsify::Result<()> {
    let config = CampaignConfig::load("configs/decay_external.json".as_ref())?;
    let sim = config.simulator.resolve()?;
    let spec = sim.spec();
    let e = spec.environment_space.center();
    let high = sim.simulate_high(&e, Seed(0))?;
    println!("x(t) at e = {:?}: {:?}", e.values(), &high.channel("x").unwrap_or_default()[..5]);

    let phi = SafetySpec::parse(spec.spec_of_record.as_deref().unwrap_or("F[0,2](x < 0.4)"))?;
    for v in [1.0, 0.0] {
        let f = spec.fidelity_space.uniform(v);
        let r = falsify(sim.as_ref(), &phi, &f, &FalsifyBudget::new(40).with_population(10), Seed(1))?;
        println!("f = {v}: robustness {:.4} at {:?}", r.best_robustness.value(), r.best_config.values());
    }
    Ok(())
}
