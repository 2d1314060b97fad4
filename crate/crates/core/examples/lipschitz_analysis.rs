//! Empirical Lipschitz constants of robustness in e and f, with held-out
//! validation, plus a frozen-counterexample sensitivity.

use fidelity_falsify::analysis::{
    estimate_lipschitz_env, estimate_lipschitz_fidelity, sensitivity, validate_lipschitz_env,
    validate_lipschitz_fidelity,
};
use fidelity_falsify::falsify::FalsifyBudget;
use fidelity_falsify::sim::{Oscillator, Simulator};
use fidelity_falsify::{SafetySpec, Seed};

fn main() -> fidelity_falsify::Result<()> {
    let sim = Oscillator::new();
    let spec = sim.spec();
    let phi = SafetySpec::parse(spec.spec_of_record.as_deref().unwrap_or("G(x < 1.5)"))?;
    let f = spec.fidelity_space.max_fidelity();

    let le = estimate_lipschitz_env(&sim, &phi, &f, 100, None, Seed(1))?;
    let ve = validate_lipschitz_env(&sim, &phi, &f, &le, 200, None, Seed(2))?;
    println!("L_e = {:.4} from {} pairs; {:.1}% of held-out pairs within the bound", le.constant, le.pairs_used, 100.0 * ve.fraction());

    let e = spec.environment_space.from_unit(&[0.8, 0.8, 0.6]);
    let lf = estimate_lipschitz_fidelity(&sim, &phi, &e, 100, Seed(3))?;
    let vf = validate_lipschitz_fidelity(&sim, &phi, &e, &lf, 200, Seed(4))?;
    println!("L_f = {:.4} at e = {:?}; {:.1}% within the bound", lf.constant, e.values(), 100.0 * vf.fraction());

    let g = spec.fidelity_space.setting(vec![0.6, 0.6, 1.0])?;
    let s = sensitivity(&sim, &phi, &g, 1e-3, &FalsifyBudget::new(200), None, Seed(5))?;
    println!("d rho / d f at {:?} = {:?} ({})", g.values(), s.gradient, s.method);
    Ok(())
}
