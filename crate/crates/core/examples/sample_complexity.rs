//! Hoeffding sample sizes for a range of accuracy targets.

use fidelity_falsify::analysis::{hoeffding_n, SampleComplexityPlan};

fn main() -> fidelity_falsify::Result<()> {
    let delta = 0.05;
    println!("{:>8} {:>8} {:>12}", "L", "eps", "n");
    for l in [0.5, 1.0, 2.0] {
        for eps in [0.2, 0.1, 0.05] {
            println!("{l:>8} {eps:>8} {:>12}", hoeffding_n(l, eps, delta)?);
        }
    }
    let plan = SampleComplexityPlan::new(0.1, delta, &[2.3, 0.02, 1.1], 600, 20)?;
    println!(
        "plan: n = {} per iteration, {} x {} iterations, {} samples in total",
        plan.n_per_iteration, plan.k1, plan.k2, plan.total_samples
    );
    Ok(())
}
