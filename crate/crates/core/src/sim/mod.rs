//! Multi-fidelity simulators.
//!
//! A [`Simulator`] produces a ground-truth trajectory for an environment
//! configuration (`simulate_high`) and an approximate one for a
//! configuration plus a normalized fidelity setting (`simulate_low`). At
//! the all-ones fidelity setting the two agree.
//!
//! Fidelity knobs are stored in `[0,1]` and mapped affinely to physical
//! values by a [`FidelityMapping`]. The built-in benchmarks use three
//! knobs: integration step multiplier (`[1,32]`), model-simplification
//! blend (`[0,1]`) and additive observation-noise standard deviation
//! (`[0,0.1]`).

mod benchmarks;
mod external;
mod synthetic;

use std::sync::atomic::{AtomicU64, Ordering};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use benchmarks::{builtin_benchmarks, builtin_simulator, Braking, Oscillator};
pub use external::{AdapterRequest, ExternalSimulator};
pub use synthetic::FnSimulator;

use crate::error::{Error, Result};
use crate::space::{EnvironmentConfig, EnvironmentSpace, FidelitySetting, FidelitySpace, Seed, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnobRole {
    StepMultiplier,
    ModelBlend,
    NoiseScale,
}

/// Affine map of one normalized knob to its physical range. `at_one` is
/// the physical value of the most faithful setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnobMap {
    pub knob: usize,
    pub role: KnobRole,
    pub at_zero: f64,
    pub at_one: f64,
}

impl KnobMap {
    pub fn to_physical(&self, normalized: f64) -> f64 {
        self.at_zero + (self.at_one - self.at_zero) * normalized
    }

    pub fn to_normalized(&self, physical: f64) -> f64 {
        (physical - self.at_zero) / (self.at_one - self.at_zero)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FidelityMapping {
    pub knobs: Vec<KnobMap>,
}

impl FidelityMapping {
    /// Step multiplier, model blend and noise on knobs 0, 1, 2.
    pub fn standard() -> Self {
        FidelityMapping {
            knobs: vec![
                KnobMap { knob: 0, role: KnobRole::StepMultiplier, at_zero: 32.0, at_one: 1.0 },
                KnobMap { knob: 1, role: KnobRole::ModelBlend, at_zero: 1.0, at_one: 0.0 },
                KnobMap { knob: 2, role: KnobRole::NoiseScale, at_zero: 0.1, at_one: 0.0 },
            ],
        }
    }

    pub fn none() -> Self {
        FidelityMapping::default()
    }

    fn role(&self, role: KnobRole) -> Option<&KnobMap> {
        self.knobs.iter().find(|k| k.role == role)
    }

    fn physical(&self, role: KnobRole, f: &FidelitySetting, default: f64) -> f64 {
        self.role(role).map_or(default, |k| k.to_physical(f.values()[k.knob]))
    }

    pub fn step_multiplier(&self, f: &FidelitySetting) -> f64 {
        self.physical(KnobRole::StepMultiplier, f, 1.0)
    }

    pub fn blend(&self, f: &FidelitySetting) -> f64 {
        self.physical(KnobRole::ModelBlend, f, 0.0)
    }

    pub fn noise_scale(&self, f: &FidelitySetting) -> f64 {
        self.physical(KnobRole::NoiseScale, f, 0.0)
    }

    /// Index of the noise knob, if any.
    pub fn noise_knob(&self) -> Option<usize> {
        self.role(KnobRole::NoiseScale).map(|k| k.knob)
    }

    /// Physical value of every mapped knob, in mapping order.
    pub fn to_physical(&self, f: &FidelitySetting) -> Vec<f64> {
        self.knobs.iter().map(|k| k.to_physical(f.values()[k.knob])).collect()
    }

    /// Inverse of [`to_physical`](Self::to_physical); unmapped knobs are 1.
    pub fn from_physical(&self, space: &FidelitySpace, physical: &[f64]) -> Result<FidelitySetting> {
        if physical.len() != self.knobs.len() {
            return Err(Error::invalid("one physical value per mapped knob"));
        }
        let mut values = vec![1.0; space.dim()];
        for (k, p) in self.knobs.iter().zip(physical) {
            values[k.knob] = k.to_normalized(*p);
        }
        let values = values
            .into_iter()
            .map(|v| if (-1e-12..0.0).contains(&v) { 0.0 } else if v > 1.0 && v < 1.0 + 1e-12 { 1.0 } else { v })
            .collect();
        space.setting(values)
    }

    /// Copy of `f` with the noise knob at its noise-free end.
    pub fn without_noise(&self, space: &FidelitySpace, f: &FidelitySetting) -> FidelitySetting {
        match self.role(KnobRole::NoiseScale) {
            Some(k) => {
                let mut v = f.values().to_vec();
                v[k.knob] = k.to_normalized(0.0);
                space.clamp(v)
            }
            None => f.clone(),
        }
    }
}

/// Static description of a simulator pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatorSpec {
    pub id: String,
    pub environment_space: EnvironmentSpace,
    pub fidelity_space: FidelitySpace,
    pub channels: Vec<String>,
    pub base_dt: f64,
    /// High-fidelity integration steps; `duration = steps * base_dt`.
    pub steps: usize,
    pub mapping: FidelityMapping,
    /// Safety specification the benchmark is usually checked against.
    pub spec_of_record: Option<String>,
}

impl SimulatorSpec {
    pub fn duration(&self) -> f64 {
        self.steps as f64 * self.base_dt
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_dt > 0.0 && self.base_dt.is_finite()) {
            return Err(Error::invalid(format!("{}: base_dt must be positive", self.id)));
        }
        if self.steps < 10 {
            return Err(Error::invalid(format!("{}: duration must cover at least 10 steps", self.id)));
        }
        if self.channels.is_empty() {
            return Err(Error::invalid(format!("{}: no output channels", self.id)));
        }
        if let Some(k) = self.mapping.knobs.iter().find(|k| k.knob >= self.fidelity_space.dim()) {
            return Err(Error::invalid(format!("{}: knob {} outside fidelity space", self.id, k.knob)));
        }
        Ok(())
    }

    pub fn check_env(&self, e: &EnvironmentConfig) -> Result<()> {
        if e.dim() != self.environment_space.dim() {
            return Err(Error::invalid(format!(
                "{}: expected {} environment values, got {}",
                self.id,
                self.environment_space.dim(),
                e.dim()
            )));
        }
        self.environment_space.config(e.values().to_vec()).map(|_| ())
    }

    pub fn check_fidelity(&self, f: &FidelitySetting) -> Result<()> {
        self.fidelity_space.setting(f.values().to_vec()).map(|_| ())
    }

    /// Whether `f` turns on observation noise.
    pub fn is_noisy(&self, f: &FidelitySetting) -> bool {
        self.mapping.noise_scale(f) > 0.0
    }

    /// Integration steps of a low-fidelity run at `f`.
    pub fn low_cost(&self, f: &FidelitySetting) -> u64 {
        let m = self.mapping.step_multiplier(f);
        (self.steps as f64 / m - 1e-9).ceil().max(1.0) as u64
    }
}

/// A high/low fidelity simulator pair. Implementations are stateless given
/// their inputs, so calls may run concurrently.
pub trait Simulator: Send + Sync {
    fn spec(&self) -> &SimulatorSpec;

    fn simulate_high(&self, e: &EnvironmentConfig, seed: Seed) -> Result<Trajectory>;

    fn simulate_low(&self, e: &EnvironmentConfig, f: &FidelitySetting, seed: Seed) -> Result<Trajectory>;

    /// Cost of one call in simulated steps; `None` is the high-fidelity run.
    fn cost(&self, f: Option<&FidelitySetting>) -> u64 {
        match f {
            None => self.spec().steps as u64,
            Some(f) => self.spec().low_cost(f),
        }
    }
}

impl<S: Simulator + ?Sized> Simulator for &S {
    fn spec(&self) -> &SimulatorSpec {
        (**self).spec()
    }

    fn simulate_high(&self, e: &EnvironmentConfig, seed: Seed) -> Result<Trajectory> {
        (**self).simulate_high(e, seed)
    }

    fn simulate_low(&self, e: &EnvironmentConfig, f: &FidelitySetting, seed: Seed) -> Result<Trajectory> {
        (**self).simulate_low(e, f, seed)
    }

    fn cost(&self, f: Option<&FidelitySetting>) -> u64 {
        (**self).cost(f)
    }
}

impl<S: Simulator + ?Sized> Simulator for Box<S> {
    fn spec(&self) -> &SimulatorSpec {
        (**self).spec()
    }

    fn simulate_high(&self, e: &EnvironmentConfig, seed: Seed) -> Result<Trajectory> {
        (**self).simulate_high(e, seed)
    }

    fn simulate_low(&self, e: &EnvironmentConfig, f: &FidelitySetting, seed: Seed) -> Result<Trajectory> {
        (**self).simulate_low(e, f, seed)
    }

    fn cost(&self, f: Option<&FidelitySetting>) -> u64 {
        (**self).cost(f)
    }
}

/// Simulator call totals by fidelity class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimCounts {
    pub high_calls: u64,
    pub low_calls: u64,
    pub high_steps: u64,
    pub low_steps: u64,
}

impl SimCounts {
    pub fn calls(&self) -> u64 {
        self.high_calls + self.low_calls
    }

    pub fn since(&self, earlier: &SimCounts) -> SimCounts {
        SimCounts {
            high_calls: self.high_calls - earlier.high_calls,
            low_calls: self.low_calls - earlier.low_calls,
            high_steps: self.high_steps - earlier.high_steps,
            low_steps: self.low_steps - earlier.low_steps,
        }
    }
}

impl std::ops::Add for SimCounts {
    type Output = SimCounts;

    fn add(self, o: SimCounts) -> SimCounts {
        SimCounts {
            high_calls: self.high_calls + o.high_calls,
            low_calls: self.low_calls + o.low_calls,
            high_steps: self.high_steps + o.high_steps,
            low_steps: self.low_steps + o.low_steps,
        }
    }
}

/// Wraps a simulator and counts every call, including failed ones.
pub struct CountingSimulator<S> {
    inner: S,
    high_calls: AtomicU64,
    low_calls: AtomicU64,
    high_steps: AtomicU64,
    low_steps: AtomicU64,
}

impl<S: Simulator> CountingSimulator<S> {
    pub fn new(inner: S) -> Self {
        CountingSimulator {
            inner,
            high_calls: AtomicU64::new(0),
            low_calls: AtomicU64::new(0),
            high_steps: AtomicU64::new(0),
            low_steps: AtomicU64::new(0),
        }
    }

    pub fn counts(&self) -> SimCounts {
        SimCounts {
            high_calls: self.high_calls.load(Ordering::SeqCst),
            low_calls: self.low_calls.load(Ordering::SeqCst),
            high_steps: self.high_steps.load(Ordering::SeqCst),
            low_steps: self.low_steps.load(Ordering::SeqCst),
        }
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: Simulator> Simulator for CountingSimulator<S> {
    fn spec(&self) -> &SimulatorSpec {
        self.inner.spec()
    }

    fn simulate_high(&self, e: &EnvironmentConfig, seed: Seed) -> Result<Trajectory> {
        self.high_calls.fetch_add(1, Ordering::SeqCst);
        self.high_steps.fetch_add(self.inner.cost(None), Ordering::SeqCst);
        self.inner.simulate_high(e, seed)
    }

    fn simulate_low(&self, e: &EnvironmentConfig, f: &FidelitySetting, seed: Seed) -> Result<Trajectory> {
        self.low_calls.fetch_add(1, Ordering::SeqCst);
        self.low_steps.fetch_add(self.inner.cost(Some(f)), Ordering::SeqCst);
        self.inner.simulate_low(e, f, seed)
    }

    fn cost(&self, f: Option<&FidelitySetting>) -> u64 {
        self.inner.cost(f)
    }
}

/// Fixed-step RK4 over `[0, steps * base_dt]` with the step scaled by
/// `multiplier`, resampled linearly onto the base grid.
///
/// A step that does not divide the horizon ends with one shorter step so
/// that the output is continuous in `multiplier`. With `multiplier == 1`
/// the integration runs on the base grid itself.
pub(crate) fn integrate<const N: usize>(
    x0: [f64; N],
    base_dt: f64,
    steps: usize,
    multiplier: f64,
    rhs: impl Fn(f64, &[f64; N]) -> [f64; N],
) -> Result<Vec<[f64; N]>> {
    let rk4 = |t: f64, x: &[f64; N], h: f64| -> [f64; N] {
        let k1 = rhs(t, x);
        let k2 = rhs(t + 0.5 * h, &axpy(x, 0.5 * h, &k1));
        let k3 = rhs(t + 0.5 * h, &axpy(x, 0.5 * h, &k2));
        let k4 = rhs(t + h, &axpy(x, h, &k3));
        let mut out = *x;
        for i in 0..N {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    };
    let check = |x: &[f64; N], t: f64| {
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::SimulationDiverged { time: t })
        }
    };

    if multiplier == 1.0 {
        let mut out = Vec::with_capacity(steps + 1);
        let mut x = x0;
        out.push(x);
        for k in 0..steps {
            let t = k as f64 * base_dt;
            x = rk4(t, &x, base_dt);
            check(&x, t + base_dt)?;
            out.push(x);
        }
        return Ok(out);
    }

    let horizon = steps as f64 * base_dt;
    let h = base_dt * multiplier;
    let full = (horizon / h + 1e-9).floor() as usize;
    let mut times = Vec::with_capacity(full + 2);
    let mut states = Vec::with_capacity(full + 2);
    let mut x = x0;
    times.push(0.0);
    states.push(x);
    for k in 0..full {
        let t = k as f64 * h;
        x = rk4(t, &x, h);
        check(&x, t + h)?;
        times.push(t + h);
        states.push(x);
    }
    let tail = horizon - full as f64 * h;
    if tail > 1e-9 * h {
        let t = full as f64 * h;
        x = rk4(t, &x, tail);
        check(&x, horizon)?;
        times.push(horizon);
        states.push(x);
    }

    let mut out = Vec::with_capacity(steps + 1);
    let mut seg = 0;
    for j in 0..=steps {
        let t = j as f64 * base_dt;
        while seg + 2 < times.len() && times[seg + 1] < t {
            seg += 1;
        }
        let (t0, t1) = (times[seg], times[(seg + 1).min(times.len() - 1)]);
        let w = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (&states[seg], &states[(seg + 1).min(states.len() - 1)]);
        let mut p = [0.0; N];
        for i in 0..N {
            p[i] = a[i] + w * (b[i] - a[i]);
        }
        out.push(p);
    }
    Ok(out)
}

fn axpy<const N: usize>(x: &[f64; N], a: f64, y: &[f64; N]) -> [f64; N] {
    let mut out = *x;
    for i in 0..N {
        out[i] += a * y[i];
    }
    out
}

/// Adds seeded Gaussian noise of standard deviation `scale` to every sample.
pub(crate) fn add_noise(samples: &mut [Vec<f64>], scale: f64, seed: Seed) {
    if scale <= 0.0 {
        return;
    }
    let mut rng = seed.derive("observation-noise", 0).rng();
    for row in samples.iter_mut() {
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += scale * z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_round_trip() {
        let space = FidelitySpace::unnamed(3).unwrap();
        let m = FidelityMapping::standard();
        for v in [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.3, 0.77, 0.123456789]] {
            let f = space.setting(v.to_vec()).unwrap();
            let back = m.from_physical(&space, &m.to_physical(&f)).unwrap();
            for (a, b) in f.values().iter().zip(back.values()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        let top = space.max_fidelity();
        assert_eq!(m.step_multiplier(&top), 1.0);
        assert_eq!(m.blend(&top), 0.0);
        assert_eq!(m.noise_scale(&top), 0.0);
        let bottom = space.uniform(0.0);
        assert_eq!(m.step_multiplier(&bottom), 32.0);
        assert_eq!(m.noise_scale(&bottom), 0.1);
    }

    #[test]
    fn mapping_is_monotone() {
        for k in FidelityMapping::standard().knobs {
            let vals: Vec<f64> = (0..=10).map(|i| k.to_physical(i as f64 / 10.0)).collect();
            let inc = vals.windows(2).all(|w| w[1] >= w[0]);
            let dec = vals.windows(2).all(|w| w[1] <= w[0]);
            assert!(inc || dec);
        }
    }

    #[test]
    fn rk4_tail_step_lands_on_horizon() {
        // x' = 1 is integrated exactly by any step.
        for m in [1.0, 1.5, 3.0, 7.3, 32.0] {
            let out = integrate([0.0], 0.01, 100, m, |_, _| [1.0]).unwrap();
            assert_eq!(out.len(), 101);
            for (j, x) in out.iter().enumerate() {
                assert!((x[0] - j as f64 * 0.01).abs() < 1e-12, "m {m} j {j}");
            }
        }
    }

    #[test]
    fn divergence_detected() {
        let r = integrate([1.0], 0.1, 100, 1.0, |_, x| [x[0] * x[0] * 100.0]);
        assert!(matches!(r, Err(Error::SimulationDiverged { .. })));
    }
}
