//! Built-in benchmark systems.

use super::{add_noise, integrate, FidelityMapping, Simulator, SimulatorSpec};
use crate::error::{Error, Result};
use crate::space::{EnvironmentConfig, EnvironmentSpace, FidelitySetting, FidelitySpace, Seed, Trajectory};

fn standard_fidelity_space() -> FidelitySpace {
    FidelitySpace::new(
        ["step", "model", "noise"],
        [
            "integration step multiplier, 32x at 0 down to 1x at 1",
            "blend from simplified (0) to full (1) dynamics",
            "observation noise std, 0.1 at 0 down to none at 1",
        ],
    )
    .expect("three knobs")
}

fn to_trajectory<const N: usize>(
    spec: &SimulatorSpec,
    states: Vec<[f64; N]>,
    noise: f64,
    seed: Seed,
) -> Result<Trajectory> {
    let mut samples: Vec<Vec<f64>> = (0..N).map(|i| states.iter().map(|x| x[i]).collect()).collect();
    add_noise(&mut samples, noise, seed);
    Trajectory::new(0.0, spec.base_dt, spec.channels.clone(), samples)
}

/// Oscillator with cubic drag: `x'' = -w^2 x - c v^3`.
///
/// Environment: initial position `x0`, initial velocity `v0`, drag `c`.
/// The simplified model replaces the cubic drag by linear drag `c v`.
#[derive(Clone, Debug)]
pub struct Oscillator {
    spec: SimulatorSpec,
    omega: f64,
}

impl Oscillator {
    pub const OMEGA: f64 = 2.0;

    pub fn new() -> Self {
        let spec = SimulatorSpec {
            id: "oscillator".into(),
            environment_space: EnvironmentSpace::new(["x0", "v0", "drag"], vec![-2.0, -2.0, 0.0], vec![2.0, 2.0, 1.0])
                .expect("static bounds"),
            fidelity_space: standard_fidelity_space(),
            channels: vec!["x".into(), "v".into()],
            base_dt: 1e-3,
            steps: 5000,
            mapping: FidelityMapping::standard(),
            spec_of_record: Some("G[0,D]((x < 1.5) & (x > -1.5))".into()),
        };
        Oscillator { spec, omega: Self::OMEGA }
    }

    fn run(&self, e: &EnvironmentConfig, multiplier: f64, blend: f64) -> Result<Vec<[f64; 2]>> {
        let [x0, v0, c] = [e.values()[0], e.values()[1], e.values()[2]];
        let w2 = self.omega * self.omega;
        integrate([x0, v0], self.spec.base_dt, self.spec.steps, multiplier, |_, s| {
            let v = s[1];
            let drag = (1.0 - blend) * c * v * v * v + blend * c * v;
            [v, -w2 * s[0] - drag]
        })
    }
}

impl Default for Oscillator {
    fn default() -> Self {
        Self::new()
    }
}

impl Simulator for Oscillator {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn simulate_high(&self, e: &EnvironmentConfig, seed: Seed) -> Result<Trajectory> {
        self.spec.check_env(e)?;
        to_trajectory(&self.spec, self.run(e, 1.0, 0.0)?, 0.0, seed)
    }

    fn simulate_low(&self, e: &EnvironmentConfig, f: &FidelitySetting, seed: Seed) -> Result<Trajectory> {
        self.spec.check_env(e)?;
        self.spec.check_fidelity(f)?;
        let m = &self.spec.mapping;
        let states = self.run(e, m.step_multiplier(f), m.blend(f))?;
        to_trajectory(&self.spec, states, m.noise_scale(f), seed)
    }
}

/// Car-following emergency braking.
///
/// Both vehicles start at the ego speed with the given gap. The lead car
/// brakes at a constant rate from t = 0. The ego car reacts after
/// [`Braking::REACTION_TIME`] and its deceleration ramps up to
/// [`Braking::EGO_DECEL`] with time constant [`Braking::RAMP`]; the
/// simplified model applies the full deceleration as a step. Speeds decay
/// smoothly to zero instead of changing sign.
#[derive(Clone, Debug)]
pub struct Braking {
    spec: SimulatorSpec,
}

impl Braking {
    pub const REACTION_TIME: f64 = 0.8;
    pub const EGO_DECEL: f64 = 8.0;
    pub const RAMP: f64 = 0.25;
    const STOP_SMOOTHING: f64 = 0.5;

    pub fn new() -> Self {
        let spec = SimulatorSpec {
            id: "braking".into(),
            environment_space: EnvironmentSpace::new(
                ["gap", "speed", "lead_decel"],
                vec![5.0, 10.0, 1.0],
                vec![100.0, 35.0, 9.0],
            )
            .expect("static bounds"),
            fidelity_space: standard_fidelity_space(),
            channels: vec!["gap".into(), "v_ego".into(), "v_lead".into()],
            base_dt: 1e-2,
            steps: 1000,
            mapping: FidelityMapping::standard(),
            spec_of_record: Some("G[0,D](gap > 0)".into()),
        };
        Braking { spec }
    }

    fn run(&self, e: &EnvironmentConfig, multiplier: f64, blend: f64) -> Result<Vec<[f64; 3]>> {
        let [gap, speed, lead_decel] = [e.values()[0], e.values()[1], e.values()[2]];
        integrate([gap, speed, speed], self.spec.base_dt, self.spec.steps, multiplier, |t, s| {
            let braking = if t > Self::REACTION_TIME {
                let ramp = 1.0 - (-(t - Self::REACTION_TIME) / Self::RAMP).exp();
                Self::EGO_DECEL * ((1.0 - blend) * ramp + blend)
            } else {
                0.0
            };
            let ego = -braking * (s[1] / Self::STOP_SMOOTHING).tanh();
            let lead = -lead_decel * (s[2] / Self::STOP_SMOOTHING).tanh();
            [s[2] - s[1], ego, lead]
        })
    }
}

impl Default for Braking {
    fn default() -> Self {
        Self::new()
    }
}

impl Simulator for Braking {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn simulate_high(&self, e: &EnvironmentConfig, seed: Seed) -> Result<Trajectory> {
        self.spec.check_env(e)?;
        to_trajectory(&self.spec, self.run(e, 1.0, 0.0)?, 0.0, seed)
    }

    fn simulate_low(&self, e: &EnvironmentConfig, f: &FidelitySetting, seed: Seed) -> Result<Trajectory> {
        self.spec.check_env(e)?;
        self.spec.check_fidelity(f)?;
        let m = &self.spec.mapping;
        let states = self.run(e, m.step_multiplier(f), m.blend(f))?;
        to_trajectory(&self.spec, states, m.noise_scale(f), seed)
    }
}

/// Specs of the two built-in systems: `oscillator` and `braking`.
pub fn builtin_benchmarks() -> Vec<SimulatorSpec> {
    vec![Oscillator::new().spec.clone(), Braking::new().spec.clone()]
}

pub fn builtin_simulator(id: &str) -> Result<Box<dyn Simulator>> {
    match id {
        "oscillator" => Ok(Box::new(Oscillator::new())),
        "braking" => Ok(Box::new(Braking::new())),
        other => Err(Error::invalid(format!("unknown simulator `{other}` (expected oscillator or braking)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::{robustness, SafetySpec};

    fn cfg(sim: &dyn Simulator, v: [f64; 3]) -> EnvironmentConfig {
        sim.spec().environment_space.config(v.to_vec()).unwrap()
    }

    #[test]
    fn specs_are_valid() {
        let specs = builtin_benchmarks();
        assert_eq!(specs.len(), 2);
        for s in &specs {
            s.validate().unwrap();
            assert!(s.duration() >= 10.0 * s.base_dt);
        }
        assert!(specs[1].channels.iter().any(|c| c == "gap"));
        assert!(builtin_simulator("nope").is_err());
    }

    #[test]
    fn undamped_oscillator_matches_cosine() {
        let sim = Oscillator::new();
        let t = sim.simulate_high(&cfg(&sim, [1.0, 0.0, 0.0]), Seed(0)).unwrap();
        let x = t.channel("x").unwrap();
        for (k, v) in x.iter().enumerate() {
            let want = (Oscillator::OMEGA * t.time(k)).cos();
            assert!((v - want).abs() < 1e-6, "step {k}: {v} vs {want}");
        }
    }

    #[test]
    fn far_gap_never_crashes() {
        // Lead never brakes harder than the ego, so the gap can shrink by at
        // most the ego's travel during its reaction and ramp.
        let sim = Braking::new();
        let t = sim.simulate_high(&cfg(&sim, [100.0, 35.0, 1.0]), Seed(0)).unwrap();
        let gap = t.channel("gap").unwrap();
        let (ve, vl) = (t.channel("v_ego").unwrap(), t.channel("v_lead").unwrap());
        let mut integral = 100.0;
        for k in 1..gap.len() {
            integral += 0.5 * t.dt() * ((vl[k] - ve[k]) + (vl[k - 1] - ve[k - 1]));
            assert!((gap[k] - integral).abs() < 1e-3, "kinematics drift at {k}");
            assert!(gap[k] > 0.0);
        }
    }

    #[test]
    fn crash_and_safe_corners() {
        let sim = Braking::new();
        let phi = SafetySpec::parse("G[0,D](gap > 0)").unwrap();
        let bad = sim.simulate_high(&cfg(&sim, [5.0, 35.0, 9.0]), Seed(0)).unwrap();
        assert!(robustness(&phi, &bad).unwrap().value() < 0.0);
        let good = sim.simulate_high(&cfg(&sim, [100.0, 10.0, 1.0]), Seed(0)).unwrap();
        assert!(robustness(&phi, &good).unwrap().value() > 0.0);
    }

    #[test]
    fn max_fidelity_is_exact() {
        for sim in [builtin_simulator("oscillator").unwrap(), builtin_simulator("braking").unwrap()] {
            let e = sim.spec().environment_space.center();
            let f = sim.spec().fidelity_space.max_fidelity();
            let hi = sim.simulate_high(&e, Seed(3)).unwrap();
            let lo = sim.simulate_low(&e, &f, Seed(3)).unwrap();
            assert_eq!(hi, lo);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let sim = Oscillator::new();
        let e = cfg(&sim, [1.0, 0.5, 0.3]);
        let f = sim.spec().fidelity_space.setting(vec![1.0, 1.0, 0.0]).unwrap();
        let a = sim.simulate_low(&e, &f, Seed(1)).unwrap();
        let b = sim.simulate_low(&e, &f, Seed(2)).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, sim.simulate_low(&e, &f, Seed(1)).unwrap());
    }

    #[test]
    fn out_of_bounds_rejected() {
        let sim = Braking::new();
        let other = EnvironmentSpace::new(["a", "b", "c"], vec![0.0; 3], vec![1000.0; 3]).unwrap();
        let e = other.config(vec![500.0, 20.0, 2.0]).unwrap();
        assert!(matches!(sim.simulate_high(&e, Seed(0)), Err(Error::OutOfBounds { .. })));
    }
}
