use std::sync::Arc;

use super::{FidelityMapping, Simulator, SimulatorSpec};
use crate::error::Result;
use crate::space::{EnvironmentConfig, EnvironmentSpace, FidelitySetting, FidelitySpace, Seed, Trajectory};

type LowFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type HighFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Simulator whose output is a constant signal `y` given by a closure, so
/// that `G[0,D](y > 0)` has robustness equal to the closure value.
///
/// By default the high-fidelity output is the closure at the all-ones
/// fidelity setting; [`with_high`](Self::with_high) overrides it.
#[derive(Clone)]
pub struct FnSimulator {
    spec: SimulatorSpec,
    low: Arc<LowFn>,
    high: Option<Arc<HighFn>>,
}

impl FnSimulator {
    pub const CHANNEL: &'static str = "y";
    pub const SPEC: &'static str = "G[0,D](y > 0)";

    pub fn new(
        environment_space: EnvironmentSpace,
        fidelity_dims: usize,
        value: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let spec = SimulatorSpec {
            id: "synthetic".into(),
            environment_space,
            fidelity_space: FidelitySpace::unnamed(fidelity_dims)?,
            channels: vec![Self::CHANNEL.into()],
            base_dt: 0.1,
            steps: 10,
            mapping: FidelityMapping::none(),
            spec_of_record: Some(Self::SPEC.into()),
        };
        Ok(FnSimulator { spec, low: Arc::new(value), high: None })
    }

    pub fn with_high(mut self, high: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.high = Some(Arc::new(high));
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.spec.id = id.into();
        self
    }

    fn constant(&self, v: f64) -> Result<Trajectory> {
        Trajectory::new(0.0, self.spec.base_dt, self.spec.channels.clone(), vec![vec![v; self.spec.steps + 1]])
    }
}

impl Simulator for FnSimulator {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn simulate_high(&self, e: &EnvironmentConfig, _seed: Seed) -> Result<Trajectory> {
        self.spec.check_env(e)?;
        let v = match &self.high {
            Some(h) => h(e.values()),
            None => (self.low)(e.values(), &vec![1.0; self.spec.fidelity_space.dim()]),
        };
        self.constant(v)
    }

    fn simulate_low(&self, e: &EnvironmentConfig, f: &FidelitySetting, _seed: Seed) -> Result<Trajectory> {
        self.spec.check_env(e)?;
        self.spec.check_fidelity(f)?;
        self.constant((self.low)(e.values(), f.values()))
    }
}
