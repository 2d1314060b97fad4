//! GP-UCB on a known 2-d objective, with exact regret and its growth rate.

use fidelity_falsify::bo::{optimize, regret_growth_fit, BoOptions};
use fidelity_falsify::{FidelitySpace, Seed};

fn main() -> fidelity_falsify::Result<()> {
    let space = FidelitySpace::unnamed(2)?;
    let options = BoOptions { reference_optimum: Some(0.0), ..BoOptions::default() };
    let result = optimize(&space, 40, options, Seed(3), |f, _| {
        let v = f.values();
        Ok((v[0] - 0.3).powi(2) + 2.0 * (v[1] - 0.7).powi(2))
    })?;
    let cumulative = result.regret.cumulative();
    for t in [1, 5, 10, 20, 40] {
        println!("R_{t:<2} = {:.4}", cumulative[t - 1]);
    }
    println!("best {:?} (loss {:.2e})", result.best_fidelity.values(), result.best_loss);
    println!("log-log slope of R_T: {:.3}", regret_growth_fit(&result.regret)?);
    Ok(())
}
