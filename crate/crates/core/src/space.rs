//! Domain types shared by every stage of the pipeline: bounded search
//! boxes, the points that live in them, sampled trajectories and tasks.
//!
//! All randomness in the crate flows from a [`Seed`] through
//! [`Seed::rng`], which instantiates ChaCha8 (a counter-based stream
//! cipher generator). Outputs are therefore reproducible across runs and
//! platforms. Sub-seeds are derived with [`Seed::derive`], a SplitMix64
//! finalizer applied to the parent seed, an FNV-1a hash of a stream label
//! and an index; distinct `(label, index)` pairs give independent streams.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 64-bit seed for every stochastic operation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Seed {
    /// Child seed for the stream `label`, element `index`.
    pub fn derive(self, label: &str, index: u64) -> Seed {
        let inner = splitmix64(fnv1a(label) ^ splitmix64(index));
        Seed(splitmix64(self.0 ^ inner))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

/// Axis-aligned box of environment configurations.
///
/// A dimension with `lower == upper` is allowed and pins that coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpace {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl EnvironmentSpace {
    pub fn new<S: Into<String>>(
        names: impl IntoIterator<Item = S>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::invalid("environment space needs at least one dimension"));
        }
        if names.len() != lower.len() || names.len() != upper.len() {
            return Err(Error::invalid("names and bounds must have equal length"));
        }
        for ((n, lo), hi) in names.iter().zip(&lower).zip(&upper) {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::invalid(format!("bad bounds for `{n}`: [{lo}, {hi}]")));
            }
        }
        Ok(Self { names, lower, upper })
    }

    /// Unit box `[0,1]^dim` with names `e0, e1, ...`.
    pub fn unit(dim: usize) -> Result<Self> {
        Self::new((0..dim).map(|i| format!("e{i}")), vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| l == u)
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.dim()
            && values
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// Validates `values` and wraps them as a configuration of this space.
    pub fn config(&self, values: Vec<f64>) -> Result<EnvironmentConfig> {
        if values.len() != self.dim() {
            return Err(Error::invalid(format!(
                "expected {} environment values, got {}",
                self.dim(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !(v.is_finite() && *v >= self.lower[i] && *v <= self.upper[i]) {
                return Err(Error::OutOfBounds {
                    name: self.names[i].clone(),
                    value: *v,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(EnvironmentConfig { names: self.names.clone(), values })
    }

    /// Clamps into the box and wraps; never fails for finite input.
    pub fn clamp(&self, mut values: Vec<f64>) -> EnvironmentConfig {
        for (i, v) in values.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
        EnvironmentConfig { names: self.names.clone(), values }
    }

    /// Maps a point of the unit cube affinely into the box.
    pub fn from_unit(&self, unit: &[f64]) -> EnvironmentConfig {
        let values = unit
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(u, (l, h))| (l + u * (h - l)).clamp(*l, *h))
            .collect();
        EnvironmentConfig { names: self.names.clone(), values }
    }

    pub fn center(&self) -> EnvironmentConfig {
        self.from_unit(&vec![0.5; self.dim()])
    }
}

/// A point `e` of an [`EnvironmentSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    names: Vec<String>,
    values: Vec<f64>,
}

impl EnvironmentConfig {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn distance(&self, other: &EnvironmentConfig) -> f64 {
        euclidean(&self.values, &other.values)
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
}

/// The normalized fidelity box `[0,1]^dim`. Knob value 1 is the most
/// faithful setting of that knob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelitySpace {
    names: Vec<String>,
    descriptions: Vec<String>,
    metric: DistanceMetric,
}

impl FidelitySpace {
    pub fn new<S: Into<String>, D: Into<String>>(
        names: impl IntoIterator<Item = S>,
        descriptions: impl IntoIterator<Item = D>,
    ) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let descriptions: Vec<String> = descriptions.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::invalid("fidelity space needs at least one knob"));
        }
        if names.len() != descriptions.len() {
            return Err(Error::invalid("one description per fidelity knob"));
        }
        Ok(Self { names, descriptions, metric: DistanceMetric::Euclidean })
    }

    pub fn unnamed(dim: usize) -> Result<Self> {
        Self::new((0..dim).map(|i| format!("f{i}")), (0..dim).map(|_| ""))
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn descriptions(&self) -> &[String] {
        &self.descriptions
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn setting(&self, values: Vec<f64>) -> Result<FidelitySetting> {
        if values.len() != self.dim() {
            return Err(Error::invalid(format!(
                "expected {} fidelity values, got {}",
                self.dim(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !(v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(Error::OutOfBounds {
                    name: self.names[i].clone(),
                    value: *v,
                    lower: 0.0,
                    upper: 1.0,
                });
            }
        }
        Ok(FidelitySetting { names: self.names.clone(), values })
    }

    pub fn clamp(&self, values: Vec<f64>) -> FidelitySetting {
        FidelitySetting {
            names: self.names.clone(),
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// All knobs at 1.
    pub fn max_fidelity(&self) -> FidelitySetting {
        self.uniform(1.0)
    }

    pub fn uniform(&self, v: f64) -> FidelitySetting {
        self.clamp(vec![v; self.dim()])
    }
}

/// A point `f` of a [`FidelitySpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelitySetting {
    names: Vec<String>,
    values: Vec<f64>,
}

impl FidelitySetting {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn distance(&self, other: &FidelitySetting) -> f64 {
        euclidean(&self.values, &other.values)
    }
}

/// Finite-horizon, uniformly sampled multichannel signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    start_time: f64,
    dt: f64,
    channels: Vec<String>,
    /// `samples[channel][step]`
    samples: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(start_time: f64, dt: f64, channels: Vec<String>, samples: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !start_time.is_finite() {
            return Err(Error::invalid(format!("bad time grid: start {start_time}, dt {dt}")));
        }
        if channels.is_empty() || channels.len() != samples.len() {
            return Err(Error::invalid("one sample row per channel required"));
        }
        let steps = samples[0].len();
        if steps < 2 {
            return Err(Error::invalid("a trajectory needs at least two samples"));
        }
        if samples.iter().any(|row| row.len() != steps) {
            return Err(Error::invalid("channels have different sample counts"));
        }
        for row in &samples {
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::SimulationDiverged { time: start_time + i as f64 * dt });
            }
        }
        Ok(Self { start_time, dt, channels, samples })
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.samples[0].len()
    }

    /// `(steps - 1) * dt`
    pub fn duration(&self) -> f64 {
        (self.steps() - 1) as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration()
    }

    pub fn time(&self, step: usize) -> f64 {
        self.start_time + step as f64 * self.dt
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .position(|c| c == name)
            .map(|i| self.samples[i].as_slice())
    }

    /// Linear interpolation of channel `index` at time `t`, clamped to the horizon.
    pub fn interpolate(&self, index: usize, t: f64) -> f64 {
        let row = &self.samples[index];
        let x = ((t - self.start_time) / self.dt).clamp(0.0, (row.len() - 1) as f64);
        let k = (x.floor() as usize).min(row.len() - 2);
        let w = x - k as f64;
        if w == 0.0 {
            row[k]
        } else {
            row[k] + w * (row[k + 1] - row[k])
        }
    }

    /// Sup-norm distance over all channels and samples; `None` if the
    /// shapes differ.
    pub fn sup_distance(&self, other: &Trajectory) -> Option<f64> {
        if self.channels != other.channels || self.steps() != other.steps() {
            return None;
        }
        Some(
            self.samples
                .iter()
                .zip(&other.samples)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max),
        )
    }

    /// Returns a copy with `f` applied to every sample of `channel`.
    pub fn map_channel(&self, channel: &str, f: impl Fn(f64) -> f64) -> Result<Trajectory> {
        let i = self
            .channels
            .iter()
            .position(|c| c == channel)
            .ok_or_else(|| Error::UnknownChannel(channel.to_string()))?;
        let mut samples = self.samples.clone();
        samples[i].iter_mut().for_each(|v| *v = f(*v));
        Trajectory::new(self.start_time, self.dt, self.channels.clone(), samples)
    }
}

fn default_weight() -> f64 {
    1.0
}

/// A sampled task `t_i` with its parameter configurations `p_ij`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    id: String,
    parameter_space: EnvironmentSpace,
    sampled_params: Vec<EnvironmentConfig>,
    #[serde(default = "default_weight")]
    weight: f64,
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        parameter_space: EnvironmentSpace,
        sampled_params: Vec<EnvironmentConfig>,
    ) -> Result<Self> {
        if sampled_params.is_empty() {
            return Err(Error::invalid("a task needs at least one parameter configuration"));
        }
        if let Some(p) = sampled_params.iter().find(|p| !parameter_space.contains(p.values())) {
            return Err(Error::invalid(format!("task parameter {:?} outside its space", p.values())));
        }
        Ok(Self { id: id.into(), parameter_space, sampled_params, weight: 1.0 })
    }

    /// Draws `count` parameter configurations by Latin hypercube sampling.
    pub fn sample(id: impl Into<String>, parameter_space: EnvironmentSpace, count: usize, seed: Seed) -> Result<Self> {
        let params = latin_hypercube(&parameter_space, count, seed)?;
        Self::new(id, parameter_space, params)
    }

    pub fn with_weight(mut self, weight: f64) -> Result<Self> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::invalid(format!("task weight must be finite and >= 0, got {weight}")));
        }
        self.weight = weight;
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn parameter_space(&self) -> &EnvironmentSpace {
        &self.parameter_space
    }

    pub fn params(&self) -> &[EnvironmentConfig] {
        &self.sampled_params
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

/// Independent uniform draws from the box.
pub fn sample_uniform(space: &EnvironmentSpace, count: usize, seed: Seed) -> Result<Vec<EnvironmentConfig>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = seed.rng();
    Ok((0..count)
        .map(|_| {
            let unit: Vec<f64> = (0..space.dim()).map(|_| rng.random::<f64>()).collect();
            space.from_unit(&unit)
        })
        .collect())
}

/// Latin hypercube design on the unit cube: each column is a random
/// permutation of the `count` strata with a uniform jitter inside each.
pub fn latin_hypercube_unit(dim: usize, count: usize, seed: Seed) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = seed.rng();
    let n = count as f64;
    let mut points = vec![vec![0.0; dim]; count];
    let mut perm: Vec<usize> = (0..count).collect();
    for d in 0..dim {
        perm.shuffle(&mut rng);
        for (p, &stratum) in points.iter_mut().zip(&perm) {
            p[d] = (stratum as f64 + rng.random::<f64>()) / n;
        }
    }
    Ok(points)
}

pub fn latin_hypercube(space: &EnvironmentSpace, count: usize, seed: Seed) -> Result<Vec<EnvironmentConfig>> {
    Ok(latin_hypercube_unit(space.dim(), count, seed)?
        .iter()
        .map(|u| space.from_unit(u))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit1() -> EnvironmentSpace {
        EnvironmentSpace::new(["x"], vec![0.0], vec![1.0]).unwrap()
    }

    #[test]
    fn uniform_is_deterministic() {
        let a = sample_uniform(&unit1(), 3, Seed(7)).unwrap();
        let b = sample_uniform(&unit1(), 3, Seed(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| (0.0..=1.0).contains(&p.values()[0])));
        assert_ne!(a, sample_uniform(&unit1(), 3, Seed(8)).unwrap());
    }

    #[test]
    fn degenerate_box_pins_points() {
        let eps = 1e-12;
        let s = EnvironmentSpace::new(["x"], vec![2.0], vec![2.0 + eps]).unwrap();
        for p in sample_uniform(&s, 50, Seed(1)).unwrap() {
            assert!((p.values()[0] - 2.0).abs() <= eps);
        }
        let pinned = EnvironmentSpace::new(["x"], vec![2.0], vec![2.0]).unwrap();
        assert!(pinned.is_degenerate());
    }

    #[test]
    fn uniform_mean_matches_law_of_large_numbers() {
        let s = EnvironmentSpace::unit(2).unwrap();
        let pts = sample_uniform(&s, 1000, Seed(1)).unwrap();
        for d in 0..2 {
            let mean = pts.iter().map(|p| p.values()[d]).sum::<f64>() / 1000.0;
            assert!((mean - 0.5).abs() < 0.05, "dim {d} mean {mean}");
        }
    }

    #[test]
    fn zero_count_rejected() {
        assert!(matches!(sample_uniform(&unit1(), 0, Seed(1)), Err(Error::InvalidArgument(_))));
        assert!(matches!(latin_hypercube(&unit1(), 0, Seed(1)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lhs_one_point_per_quartile() {
        let pts = latin_hypercube(&unit1(), 4, Seed(0)).unwrap();
        let mut strata: Vec<usize> = pts.iter().map(|p| ((p.values()[0] * 4.0) as usize).min(3)).collect();
        strata.sort();
        assert_eq!(strata, vec![0, 1, 2, 3]);
        assert_eq!(latin_hypercube(&unit1(), 1, Seed(0)).unwrap().len(), 1);
    }

    #[test]
    fn lhs_strata_occupancy_by_binning() {
        let s = EnvironmentSpace::new(["a", "b"], vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let pts = latin_hypercube(&s, 8, Seed(3)).unwrap();
        for d in 0..2 {
            let mut bins = [0usize; 8];
            for p in &pts {
                let b = ((p.values()[d] / 10.0 * 8.0).floor() as usize).min(7);
                bins[b] += 1;
            }
            assert!(bins.iter().all(|&c| c == 1), "dim {d}: {bins:?}");
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let s = Seed(42);
        assert_ne!(s.derive("a", 0), s.derive("a", 1));
        assert_ne!(s.derive("a", 0), s.derive("b", 0));
        assert_eq!(s.derive("a", 0), Seed(42).derive("a", 0));
    }

    #[test]
    fn config_validation() {
        let s = unit1();
        assert!(s.config(vec![0.5]).is_ok());
        assert!(matches!(s.config(vec![1.5]), Err(Error::OutOfBounds { .. })));
        assert!(s.config(vec![0.5, 0.5]).is_err());
        assert!(EnvironmentSpace::new(["x"], vec![1.0], vec![0.0]).is_err());
        let f = FidelitySpace::unnamed(2).unwrap();
        assert!(f.setting(vec![0.0, 1.0]).is_ok());
        assert!(f.setting(vec![-0.1, 1.0]).is_err());
    }

    #[test]
    fn trajectory_invariants() {
        let ch = vec!["x".to_string()];
        assert!(Trajectory::new(0.0, 0.1, ch.clone(), vec![vec![1.0]]).is_err());
        assert!(Trajectory::new(0.0, 0.0, ch.clone(), vec![vec![1.0, 2.0]]).is_err());
        assert!(matches!(
            Trajectory::new(0.0, 0.1, ch.clone(), vec![vec![1.0, f64::NAN]]),
            Err(Error::SimulationDiverged { .. })
        ));
        let t = Trajectory::new(0.0, 0.5, ch, vec![vec![0.0, 1.0, 2.0]]).unwrap();
        assert_eq!(t.duration(), 1.0);
        assert_eq!(t.interpolate(0, 0.25), 0.5);
        assert_eq!(t.interpolate(0, 5.0), 2.0);
    }
}
