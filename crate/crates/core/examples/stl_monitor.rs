//! Parses a specification and monitors a hand-built trajectory.

use fidelity_falsify::stl::{robustness_signal, satisfied};
use fidelity_falsify::{robustness, SafetySpec, Trajectory};

fn main() -> fidelity_falsify::Result<()> {
    let dt = 0.1;
    let speed: Vec<f64> = (0..=50).map(|i| 20.0 + 8.0 * (i as f64 * dt).sin()).collect();
    let gap: Vec<f64> = (0..=50).map(|i| 30.0 - 0.5 * i as f64).collect();
    let traj = Trajectory::new(0.0, dt, vec!["speed".into(), "gap".into()], vec![speed, gap])?;

    for text in ["G(gap > 0)", "G[0,2](speed < 27)", "F[3,D](gap < 5) | G(speed > 10)", "!(G(gap > 2) & F(speed > 27.5))"] {
        let phi = SafetySpec::parse(text)?;
        let rho = robustness(&phi, &traj)?;
        println!("{phi:<40} robustness {:>8.4}  satisfied {}", rho.value(), satisfied(&phi, &traj)?);
    }

    let phi = SafetySpec::parse("gap > 10")?;
    let signal = robustness_signal(&phi, &traj)?;
    let first = signal.iter().position(|r| *r < 0.0);
    println!("gap > 10 first fails at t = {:?}", first.map(|i| traj.time(i)));
    Ok(())
}
