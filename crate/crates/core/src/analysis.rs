//! Empirical estimators: Lipschitz constants, robustness sensitivity to
//! fidelity, Hoeffding sample sizes and convergence diagnostics.
//!
//! Lipschitz constants are estimated as the largest slope over sampled
//! pairs: half drawn as independent Latin hypercube points, half as
//! near-pairs at normalized distance `1e-3` that probe local slopes. All
//! evaluations use fixed seeds, so every estimate is a deterministic
//! function of its inputs. Robustness-based estimators refuse to run at a
//! noisy fidelity setting unless a repeat count for averaging is given.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::falsify::{falsify, mean_robustness, noise_seeds, FalsifyBudget};
use crate::loss::{aggregate_loss, mse_loss};
use crate::sim::Simulator;
use crate::space::{latin_hypercube_unit, EnvironmentConfig, FidelitySetting, Seed, Task, Trajectory};
use crate::stl::SafetySpec;

/// Normalized distance of the near-pairs.
pub const NEAR_PAIR_DISTANCE: f64 = 1e-3;
/// Inflation applied to an estimate when validating it on fresh pairs.
pub const VALIDATION_FACTOR: f64 = 1.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub constant: f64,
    /// Pairs with nonzero distance that entered the maximum.
    pub pairs_used: usize,
    /// The pair attaining the maximum slope.
    pub max_pair: (Vec<f64>, Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzValidation {
    pub checked: usize,
    pub satisfied: usize,
    pub factor: f64,
}

impl LipschitzValidation {
    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.satisfied as f64 / self.checked as f64
        }
    }
}

type Pair = (Vec<f64>, Vec<f64>);

/// `count` pairs of points in the unit cube of dimension `dim`.
pub fn sample_pairs(dim: usize, count: usize, seed: Seed) -> Result<Vec<Pair>> {
    let far = count / 2;
    let near = count - far;
    let mut out = Vec::with_capacity(count);
    if far > 0 {
        let a = latin_hypercube_unit(dim, far, seed.derive("pairs/a", 0))?;
        let b = latin_hypercube_unit(dim, far, seed.derive("pairs/b", 0))?;
        out.extend(a.into_iter().zip(b));
    }
    let base = latin_hypercube_unit(dim, near, seed.derive("pairs/near", 0))?;
    let mut rng = seed.derive("pairs/dir", 0).rng();
    for p in base {
        let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-300);
        // Step away from the nearer face so the partner stays inside.
        let q = p
            .iter()
            .zip(&dir)
            .map(|(x, d)| {
                let step = NEAR_PAIR_DISTANCE * d / norm;
                if (x + step).clamp(0.0, 1.0) == x + step {
                    x + step
                } else {
                    x - step
                }
            })
            .collect();
        out.push((p, q));
    }
    Ok(out)
}

struct Slopes {
    slopes: Vec<Option<f64>>,
}

/// Evaluates `g` at both ends of every pair (in parallel) and returns
/// `|g(a) - g(b)| / dist(a, b)`, `None` for zero-distance pairs.
fn slopes<P: Sync>(
    pairs: &[(P, P)],
    dist: impl Fn(&P, &P) -> f64 + Sync,
    g: impl Fn(&P) -> Result<f64> + Sync,
) -> Result<Slopes> {
    let slopes = pairs
        .par_iter()
        .map(|(a, b)| {
            let d = dist(a, b);
            if d <= 0.0 {
                return Ok(None);
            }
            Ok(Some((g(a)? - g(b)?).abs() / d))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Slopes { slopes })
}

impl Slopes {
    fn estimate(&self, pairs: &[Pair]) -> Result<LipschitzEstimate> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.slopes.iter().enumerate() {
            if let Some(s) = s {
                if !s.is_finite() {
                    return Err(Error::Numerical("non-finite slope".into()));
                }
                if best.is_none_or(|(_, b)| *s > b) {
                    best = Some((i, *s));
                }
            }
        }
        let (i, constant) = best.ok_or_else(|| Error::invalid("every sampled pair has zero distance"))?;
        Ok(LipschitzEstimate {
            constant,
            pairs_used: self.slopes.iter().flatten().count(),
            max_pair: pairs[i].clone(),
        })
    }

    fn validate(&self, constant: f64, factor: f64) -> LipschitzValidation {
        let checked: Vec<f64> = self.slopes.iter().flatten().copied().collect();
        LipschitzValidation {
            checked: checked.len(),
            satisfied: checked.iter().filter(|s| **s <= factor * constant).count(),
            factor,
        }
    }
}

fn check_pairs(pairs: usize) -> Result<()> {
    if pairs < 10 {
        return Err(Error::invalid(format!("at least 10 pairs are required, got {pairs}")));
    }
    Ok(())
}

fn robustness_seeds(sim: &dyn Simulator, f: &FidelitySetting, repeats: Option<usize>, seed: Seed) -> Result<Vec<Seed>> {
    match repeats {
        Some(0) => Err(Error::invalid("repeat count must be >= 1")),
        Some(n) => Ok(noise_seeds(seed, n)),
        None if sim.spec().is_noisy(f) => {
            Err(Error::invalid("the noise knob is active; supply a repeat count for averaging"))
        }
        None => Ok(vec![seed.derive("analysis/sim", 0)]),
    }
}

fn env_pairs(sim: &dyn Simulator, count: usize, seed: Seed) -> Result<Vec<(EnvironmentConfig, EnvironmentConfig)>> {
    let space = &sim.spec().environment_space;
    Ok(sample_pairs(space.dim(), count, seed)?
        .into_iter()
        .map(|(a, b)| (space.from_unit(&a), space.from_unit(&b)))
        .collect())
}

fn fidelity_pairs(sim: &dyn Simulator, count: usize, seed: Seed) -> Result<Vec<(FidelitySetting, FidelitySetting)>> {
    let spec = sim.spec();
    let space = &spec.fidelity_space;
    let quiet = |u: Vec<f64>| spec.mapping.without_noise(space, &space.clamp(u));
    Ok(sample_pairs(space.dim(), count, seed)?.into_iter().map(|(a, b)| (quiet(a), quiet(b))).collect())
}

fn env_slopes(
    sim: &dyn Simulator,
    phi: &SafetySpec,
    f: &FidelitySetting,
    pairs: &[(EnvironmentConfig, EnvironmentConfig)],
    seeds: &[Seed],
) -> Result<Slopes> {
    slopes(pairs, |a, b| a.distance(b), |e| mean_robustness(sim, phi, e, f, seeds))
}

fn values_of<T>(pairs: &[(T, T)], v: impl Fn(&T) -> Vec<f64>) -> Vec<Pair> {
    pairs.iter().map(|(a, b)| (v(a), v(b))).collect()
}

/// Lipschitz constant of `e -> rho(e; f)`.
pub fn estimate_lipschitz_env(
    sim: &dyn Simulator,
    phi: &SafetySpec,
    f: &FidelitySetting,
    pairs: usize,
    repeats: Option<usize>,
    seed: Seed,
) -> Result<LipschitzEstimate> {
    check_pairs(pairs)?;
    sim.spec().check_fidelity(f)?;
    let seeds = robustness_seeds(sim, f, repeats, seed)?;
    let pts = env_pairs(sim, pairs, seed.derive("lipschitz/env", 0))?;
    env_slopes(sim, phi, f, &pts, &seeds)?.estimate(&values_of(&pts, |e| e.values().to_vec()))
}

/// Fraction of `pairs` fresh pairs on which `estimate * factor` bounds the
/// slope of `e -> rho(e; f)`.
pub fn validate_lipschitz_env(
    sim: &dyn Simulator,
    phi: &SafetySpec,
    f: &FidelitySetting,
    estimate: &LipschitzEstimate,
    pairs: usize,
    repeats: Option<usize>,
    seed: Seed,
) -> Result<LipschitzValidation> {
    let seeds = robustness_seeds(sim, f, repeats, seed)?;
    let pts = env_pairs(sim, pairs, seed.derive("lipschitz/env-holdout", 0))?;
    Ok(env_slopes(sim, phi, f, &pts, &seeds)?.validate(estimate.constant, VALIDATION_FACTOR))
}

fn fidelity_slopes(
    sim: &dyn Simulator,
    phi: &SafetySpec,
    e: &EnvironmentConfig,
    pairs: &[(FidelitySetting, FidelitySetting)],
    seed: Seed,
) -> Result<Slopes> {
    let seeds = [seed.derive("analysis/sim", 0)];
    slopes(pairs, |a, b| a.distance(b), |f| mean_robustness(sim, phi, e, f, &seeds))
}

/// Lipschitz constant of `f -> rho(e; f)` with the noise knob held at its
/// noise-free end.
pub fn estimate_lipschitz_fidelity(
    sim: &dyn Simulator,
    phi: &SafetySpec,
    e: &EnvironmentConfig,
    pairs: usize,
    seed: Seed,
) -> Result<LipschitzEstimate> {
    check_pairs(pairs)?;
    sim.spec().check_env(e)?;
    let pts = fidelity_pairs(sim, pairs, seed.derive("lipschitz/fid", 0))?;
    fidelity_slopes(sim, phi, e, &pts, seed)?.estimate(&values_of(&pts, |f| f.values().to_vec()))
}

pub fn validate_lipschitz_fidelity(
    sim: &dyn Simulator,
    phi: &SafetySpec,
    e: &EnvironmentConfig,
    estimate: &LipschitzEstimate,
    pairs: usize,
    seed: Seed,
) -> Result<LipschitzValidation> {
    let pts = fidelity_pairs(sim, pairs, seed.derive("lipschitz/fid-holdout", 0))?;
    Ok(fidelity_slopes(sim, phi, e, &pts, seed)?.validate(estimate.constant, VALIDATION_FACTOR))
}

/// `|l(h1, l1) - l(h2, l2)| / (|h1 - h2|_inf + |l1 - l2|_inf)`, or `None`
/// when both trajectory pairs coincide.
pub fn loss_lipschitz_ratio(h1: &Trajectory, l1: &Trajectory, h2: &Trajectory, l2: &Trajectory) -> Result<Option<f64>> {
    let dh = h1
        .sup_distance(h2)
        .ok_or_else(|| Error::ChannelMismatch("high-fidelity trajectories differ in shape".into()))?;
    let dl = l1
        .sup_distance(l2)
        .ok_or_else(|| Error::ChannelMismatch("low-fidelity trajectories differ in shape".into()))?;
    let denom = dh + dl;
    if denom == 0.0 {
        return Ok(None);
    }
    let a = mse_loss(h1, l1)?.value();
    let b = mse_loss(h2, l2)?.value();
    Ok(Some((a - b).abs() / denom))
}

/// Lipschitz constant of the trajectory loss, over pairs of `(e, f)`
/// points whose environment part is a task parameter configuration
/// (far pairs) or a small perturbation of one (near pairs).
pub fn estimate_lipschitz_loss(sim: &dyn Simulator, tasks: &[Task], pairs: usize, seed: Seed) -> Result<LipschitzEstimate> {
    check_pairs(pairs)?;
    let params: Vec<&EnvironmentConfig> = tasks.iter().flat_map(|t| t.params()).collect();
    if params.is_empty() {
        return Err(Error::invalid("loss Lipschitz estimation needs task parameters"));
    }
    let spec = sim.spec();
    let env = &spec.environment_space;
    let fids = fidelity_pairs(sim, pairs, seed.derive("lipschitz/loss-f", 0))?;
    let mut rng = seed.derive("lipschitz/loss-e", 0).rng();
    let near_from = pairs / 2;
    let to_unit = |e: &EnvironmentConfig| -> Vec<f64> {
        e.values()
            .iter()
            .zip(env.lower().iter().zip(env.upper()))
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
            .collect()
    };
    let mut pts: Vec<((EnvironmentConfig, FidelitySetting), (EnvironmentConfig, FidelitySetting))> = Vec::new();
    for (k, (fa, fb)) in fids.into_iter().enumerate() {
        let ea = params[rng.random_range(0..params.len())].clone();
        let eb = if k < near_from {
            params[rng.random_range(0..params.len())].clone()
        } else {
            let u: Vec<f64> = to_unit(&ea)
                .into_iter()
                .map(|x| (x + rng.random_range(-1.0..1.0) * NEAR_PAIR_DISTANCE).clamp(0.0, 1.0))
                .collect();
            env.from_unit(&u)
        };
        pts.push(((ea, fa), (eb, fb)));
    }
    let sim_seed = seed.derive("analysis/sim", 0);
    let ratios = pts
        .par_iter()
        .map(|((ea, fa), (eb, fb))| {
            let h1 = sim.simulate_high(ea, sim_seed)?;
            let l1 = sim.simulate_low(ea, fa, sim_seed)?;
            let h2 = sim.simulate_high(eb, sim_seed)?;
            let l2 = sim.simulate_low(eb, fb, sim_seed)?;
            loss_lipschitz_ratio(&h1, &l1, &h2, &l2)
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<Pair> = pts
        .iter()
        .map(|((ea, fa), (eb, fb))| {
            ([ea.values(), fa.values()].concat(), [eb.values(), fb.values()].concat())
        })
        .collect();
    Slopes { slopes: ratios }.estimate(&flat)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub fidelity: FidelitySetting,
    /// `dS/df_k` per fidelity dimension.
    pub gradient: Vec<f64>,
    pub step: f64,
    pub method: String,
    /// Dimensions where the stencil was clipped to a one-sided difference.
    pub one_sided: Vec<usize>,
    /// The configuration `e*(f)` held fixed across the stencil.
    pub frozen_config: EnvironmentConfig,
    pub robustness: f64,
}

/// Finite difference along every axis of the fidelity box, one-sided
/// where `f +- h` leaves `[0, 1]`.
fn stencil_gradient(
    f: &FidelitySetting,
    h: f64,
    clamp: impl Fn(Vec<f64>) -> FidelitySetting + Sync,
    g: impl Fn(&FidelitySetting) -> Result<f64> + Sync,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if !(h > 0.0 && h < 0.5) {
        return Err(Error::invalid(format!("finite-difference step must lie in (0, 0.5), got {h}")));
    }
    let center = g(f)?;
    let dims: Vec<(f64, bool)> = (0..f.dim())
        .into_par_iter()
        .map(|k| {
            let x = f.values()[k];
            let shifted = |d: f64| {
                let mut v = f.values().to_vec();
                v[k] = x + d;
                clamp(v)
            };
            if x + h > 1.0 {
                Ok(((center - g(&shifted(-h))?) / h, true))
            } else if x - h < 0.0 {
                Ok(((g(&shifted(h))? - center) / h, true))
            } else {
                Ok(((g(&shifted(h))? - g(&shifted(-h))?) / (2.0 * h), false))
            }
        })
        .collect::<Result<_>>()?;
    let one_sided = dims.iter().enumerate().filter(|d| d.1 .1).map(|d| d.0).collect();
    Ok((dims.into_iter().map(|d| d.0).collect(), one_sided))
}

/// Finite-difference sensitivity `S(f)` of the falsified robustness, with
/// the counterexample `e*(f)` frozen at the centre point.
pub fn sensitivity(
    sim: &dyn Simulator,
    phi: &SafetySpec,
    f: &FidelitySetting,
    h: f64,
    budget: &FalsifyBudget,
    repeats: Option<usize>,
    seed: Seed,
) -> Result<SensitivityReport> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let seeds = robustness_seeds(sim, f, repeats, seed)?;
    let found = falsify(sim, phi, f, budget, seed.derive("sensitivity/falsify", 0))?;
    let e = found.best_config;
    let space = &sim.spec().fidelity_space;
    let (gradient, one_sided) =
        stencil_gradient(f, h, |v| space.clamp(v), |g| mean_robustness(sim, phi, &e, g, &seeds))?;
    if !one_sided.is_empty() {
        log::info!("sensitivity stencil clipped at the boundary along {one_sided:?}");
    }
    Ok(SensitivityReport {
        fidelity: f.clone(),
        gradient,
        step: h,
        method: "central-difference, frozen counterexample".into(),
        one_sided,
        frozen_config: e,
        robustness: found.best_robustness.value(),
    })
}

/// Total-derivative counterpart of [`sensitivity`]: the stencil re-runs
/// falsification at every shifted fidelity instead of freezing `e*`. All
/// runs share one search seed. The largest componentwise difference from
/// `frozen` is logged.
pub fn reoptimized_sensitivity(
    sim: &dyn Simulator,
    phi: &SafetySpec,
    frozen: &SensitivityReport,
    budget: &FalsifyBudget,
    seed: Seed,
) -> Result<Vec<f64>> {
    let space = &sim.spec().fidelity_space;
    let search = seed.derive("sensitivity/reoptimize", 0);
    let (gradient, _) = stencil_gradient(&frozen.fidelity, frozen.step, |v| space.clamp(v), |g| {
        Ok(falsify(sim, phi, g, budget, search)?.best_robustness.value())
    })?;
    let gap = gradient.iter().zip(&frozen.gradient).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    log::info!("sensitivity: frozen and re-optimized counterexamples differ by up to {gap:.3e} per knob");
    Ok(gradient)
}

/// Finite-difference gradient of the aggregate loss over `tasks`.
pub fn outer_loss_gradient(sim: &dyn Simulator, tasks: &[Task], f: &FidelitySetting, h: f64, seed: Seed) -> Result<Vec<f64>> {
    if tasks.is_empty() {
        return Err(Error::invalid("loss gradient needs at least one task"));
    }
    sim.spec().check_fidelity(f)?;
    let space = &sim.spec().fidelity_space;
    let (g, _) = stencil_gradient(f, h, |v| space.clamp(v), |x| Ok(aggregate_loss(sim, x, tasks, &[], seed)?.sum))?;
    Ok(g)
}

/// Hoeffding sample size `ceil(2 L^2 / eps^2 * ln(2 / delta))`.
pub fn hoeffding_n(lipschitz: f64, epsilon: f64, delta: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta <= 2.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 2], got {delta}")));
    }
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err(Error::invalid(format!("Lipschitz constant must be finite and >= 0, got {lipschitz}")));
    }
    let n = (2.0 * lipschitz * lipschitz / (epsilon * epsilon) * (2.0 / delta).ln()).ceil();
    if !(n < u64::MAX as f64) {
        return Err(Error::Numerical(format!("sample size {n} does not fit in 64 bits")));
    }
    Ok(n.max(0.0) as u64)
}

/// Largest [`hoeffding_n`] over several constants (for example the
/// robustness and loss constants together).
pub fn hoeffding_n_max(lipschitz: &[f64], epsilon: f64, delta: f64) -> Result<u64> {
    if lipschitz.is_empty() {
        return Err(Error::invalid("no Lipschitz constant given"));
    }
    lipschitz.iter().try_fold(0, |acc, l| Ok(acc.max(hoeffding_n(*l, epsilon, delta)?)))
}

/// `N = n * K1 * K2`.
pub fn total_samples(n: u64, k1: u64, k2: u64) -> Result<u64> {
    n.checked_mul(k1)
        .and_then(|x| x.checked_mul(k2))
        .ok_or_else(|| Error::Numerical(format!("{n} * {k1} * {k2} overflows")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleComplexityPlan {
    pub epsilon: f64,
    pub delta: f64,
    pub lipschitz: f64,
    pub n_per_iteration: u64,
    pub k1: u64,
    pub k2: u64,
    pub total_samples: u64,
}

impl SampleComplexityPlan {
    /// Plan for the largest of `lipschitz`, with observed loop lengths.
    pub fn new(epsilon: f64, delta: f64, lipschitz: &[f64], k1: u64, k2: u64) -> Result<Self> {
        let n = hoeffding_n_max(lipschitz, epsilon, delta)?;
        Ok(SampleComplexityPlan {
            epsilon,
            delta,
            lipschitz: lipschitz.iter().fold(0.0, |a, b| a.max(*b)),
            n_per_iteration: n,
            k1,
            k2,
            total_samples: total_samples(n, k1, k2)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// Decrease of the best-so-far value over the trailing window.
    pub gap: f64,
    pub window: usize,
}

/// Declares a minimization trace converged when its best-so-far value
/// moved by at most `tol` over the last `window` entries.
pub fn convergence_report(trace: &[f64], window: usize, tol: f64) -> Result<ConvergenceReport> {
    if window < 2 || trace.len() < window {
        return Err(Error::invalid(format!(
            "convergence needs window >= 2 and at least `window` entries (window {window}, length {})",
            trace.len()
        )));
    }
    if trace.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("trace contains NaN"));
    }
    let mut best = f64::INFINITY;
    let best_so_far: Vec<f64> = trace
        .iter()
        .map(|v| {
            best = best.min(*v);
            best
        })
        .collect();
    let n = trace.len();
    let (a, b) = (best_so_far[n - window], best_so_far[n - 1]);
    let gap = if a == b { 0.0 } else { a - b };
    Ok(ConvergenceReport { converged: gap <= tol, gap, window })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::FnSimulator;
    use crate::space::EnvironmentSpace;

    fn phi() -> SafetySpec {
        SafetySpec::parse(FnSimulator::SPEC).unwrap()
    }

    fn linear(a: f64) -> FnSimulator {
        FnSimulator::new(EnvironmentSpace::unit(1).unwrap(), 1, move |e, f| a * e[0] + a * f[0]).unwrap()
    }

    #[test]
    fn pairs_stay_in_the_cube() {
        let p = sample_pairs(3, 41, Seed(2)).unwrap();
        assert_eq!(p.len(), 41);
        for (a, b) in &p {
            assert!(a.iter().chain(b).all(|x| (0.0..=1.0).contains(x)));
        }
        for (a, b) in &p[20..] {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!((d - NEAR_PAIR_DISTANCE).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_robustness_has_its_slope() {
        let sim = linear(3.0);
        let f = sim.spec().fidelity_space.uniform(0.5);
        let est = estimate_lipschitz_env(&sim, &phi(), &f, 50, None, Seed(1)).unwrap();
        assert!((est.constant - 3.0).abs() < 1e-6);
        assert_eq!(est.pairs_used, 50);
        let e = sim.spec().environment_space.config(vec![0.2]).unwrap();
        let est = estimate_lipschitz_fidelity(&sim, &phi(), &e, 50, Seed(1)).unwrap();
        assert!((est.constant - 3.0).abs() < 1e-6);
    }

    #[test]
    fn constant_robustness_is_flat() {
        let sim = linear(0.0);
        let f = sim.spec().fidelity_space.uniform(0.5);
        assert_eq!(estimate_lipschitz_env(&sim, &phi(), &f, 20, None, Seed(1)).unwrap().constant, 0.0);
    }

    #[test]
    fn too_few_or_degenerate_pairs() {
        let sim = linear(1.0);
        let f = sim.spec().fidelity_space.uniform(0.5);
        assert!(estimate_lipschitz_env(&sim, &phi(), &f, 9, None, Seed(1)).is_err());
        let point = FnSimulator::new(EnvironmentSpace::new(vec!["p"], vec![1.0], vec![1.0]).unwrap(), 1, |e, _| e[0])
            .unwrap();
        assert!(estimate_lipschitz_env(&point, &phi(), &f, 20, None, Seed(1)).is_err());
    }

    #[test]
    fn constant_offset_loss_ratio() {
        let t = |v: f64| Trajectory::new(0.0, 0.1, vec!["y".into()], vec![vec![v; 11]]).unwrap();
        let d = 0.25;
        let r = loss_lipschitz_ratio(&t(1.0), &t(1.0 + d), &t(1.0), &t(1.0 + 2.0 * d)).unwrap().unwrap();
        // (4 d^2 - d^2) / d
        assert!((r - 3.0 * d * d / d).abs() < 1e-6);
        assert_eq!(loss_lipschitz_ratio(&t(1.0), &t(2.0), &t(1.0), &t(2.0)).unwrap(), None);
    }

    #[test]
    fn identical_loss_pairs_are_rejected() {
        let space = EnvironmentSpace::unit(1).unwrap();
        let sim = FnSimulator::new(space.clone(), 1, |_, _| 1.0).unwrap();
        let task = Task::sample("t", space, 3, Seed(1)).unwrap();
        assert!(estimate_lipschitz_loss(&sim, &[task], 10, Seed(0)).is_err());
    }

    #[test]
    fn sensitivity_of_analytic_robustness() {
        let space = EnvironmentSpace::new(vec!["a", "b"], vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let budget = FalsifyBudget::new(400);
        let lin = FnSimulator::new(space.clone(), 1, |e, f| e[0] * e[0] + e[1] * e[1] + 2.5 * f[0]).unwrap();
        let f = lin.spec().fidelity_space.uniform(0.4);
        let r = sensitivity(&lin, &phi(), &f, 1e-3, &budget, None, Seed(4)).unwrap();
        assert!((r.gradient[0] - 2.5).abs() < 1e-6);
        let quad = FnSimulator::new(space, 1, |e, f| e[0] * e[0] + e[1] * e[1] + f[0] * f[0]).unwrap();
        let r = sensitivity(&quad, &phi(), &f, 1e-3, &budget, None, Seed(4)).unwrap();
        assert!((r.gradient[0] - 0.8).abs() < 1e-4);
        assert!(sensitivity(&quad, &phi(), &f, 0.0, &budget, None, Seed(4)).is_err());
        let top = quad.spec().fidelity_space.uniform(1.0);
        assert_eq!(sensitivity(&quad, &phi(), &top, 1e-3, &budget, None, Seed(4)).unwrap().one_sided, vec![0]);
    }

    #[test]
    fn reoptimized_sensitivity_agrees_at_an_interior_optimum() {
        let sim = FnSimulator::new(EnvironmentSpace::unit(1).unwrap(), 1, |e, f| (e[0] - f[0]).powi(2) + 3.0 * f[0]).unwrap();
        let f = sim.spec().fidelity_space.uniform(0.4);
        let budget = FalsifyBudget::new(400);
        let frozen = sensitivity(&sim, &phi(), &f, 1e-2, &budget, None, Seed(2)).unwrap();
        let total = reoptimized_sensitivity(&sim, &phi(), &frozen, &budget, Seed(2)).unwrap();
        assert!((frozen.gradient[0] - 3.0).abs() < 1e-2, "{:?}", frozen.gradient);
        assert!((total[0] - 3.0).abs() < 1e-2, "{total:?}");
    }

    fn offset_sim() -> FnSimulator {
        FnSimulator::new(EnvironmentSpace::unit(1).unwrap(), 1, |_, f| 1.0 + (f[0] - 0.3)).unwrap().with_high(|_| 1.0)
    }

    #[test]
    fn loss_gradient_of_quadratic() {
        let sim = offset_sim();
        let task = Task::sample("t", sim.spec().environment_space.clone(), 1, Seed(0)).unwrap();
        let f = sim.spec().fidelity_space.uniform(0.5);
        let g = outer_loss_gradient(&sim, &[task], &f, 1e-3, Seed(0)).unwrap();
        assert!((g[0] - 0.4).abs() < 1e-4);
    }

    #[test]
    fn loss_gradient_is_additive() {
        let sim = offset_sim();
        let space = sim.spec().environment_space.clone();
        let a = Task::sample("a", space.clone(), 2, Seed(1)).unwrap();
        let b = Task::sample("b", space, 3, Seed(2)).unwrap();
        let f = sim.spec().fidelity_space.uniform(0.7);
        let ga = outer_loss_gradient(&sim, std::slice::from_ref(&a), &f, 1e-3, Seed(0)).unwrap();
        let gb = outer_loss_gradient(&sim, std::slice::from_ref(&b), &f, 1e-3, Seed(0)).unwrap();
        let gab = outer_loss_gradient(&sim, &[a, b], &f, 1e-3, Seed(0)).unwrap();
        assert!((gab[0] - ga[0] - gb[0]).abs() < 1e-9);
    }

    #[test]
    fn hoeffding_values() {
        assert_eq!(hoeffding_n(1.0, 0.1, 0.05).unwrap(), 738);
        assert_eq!((200.0 * 40f64.ln()).ceil(), 738.0);
        assert_eq!(hoeffding_n(1.0, 0.1, 2.0).unwrap(), 0);
        assert_eq!(hoeffding_n(0.0, 0.1, 0.05).unwrap(), 0);
        assert!(hoeffding_n(1.0, 0.0, 0.05).is_err());
        assert!(hoeffding_n(1.0, -1.0, 0.05).is_err());
        assert!(hoeffding_n(1.0, 0.1, 0.0).is_err());
        assert_eq!(hoeffding_n_max(&[0.5, 1.0], 0.1, 0.05).unwrap(), 738);
    }

    #[test]
    fn total_sample_products() {
        assert_eq!(total_samples(10, 5, 4).unwrap(), 200);
        assert_eq!(total_samples(17, 1, 1).unwrap(), 17);
        assert!(total_samples(u64::MAX, 2, 1).is_err());
        let plan = SampleComplexityPlan::new(0.1, 0.05, &[1.0], 5, 4).unwrap();
        assert_eq!(plan.total_samples, 738 * 20);
    }

    #[test]
    fn convergence_examples() {
        let r = convergence_report(&[5.0, 3.0, 2.0, 2.0, 2.0, 2.0], 3, 1e-9).unwrap();
        assert!(r.converged);
        assert_eq!(r.gap, 0.0);
        let dec: Vec<f64> = (1..=20).map(|t| 1.0 / t as f64).collect();
        assert!(!convergence_report(&dec, 3, 1e-9).unwrap().converged);
        assert!(convergence_report(&[1.0], 2, 0.0).is_err());
        assert!(convergence_report(&[1.0, 2.0, 3.0], 1, 0.0).is_err());
    }

    #[test]
    fn cem_trace_on_convex_case_converges() {
        let space = EnvironmentSpace::unit(2).unwrap();
        let sim = FnSimulator::new(space, 1, |e, _| (e[0] - 0.3).powi(2) + (e[1] - 0.6).powi(2) - 0.01).unwrap();
        let f = sim.spec().fidelity_space.uniform(1.0);
        let r = falsify(&sim, &phi(), &f, &FalsifyBudget::new(2000), Seed(7)).unwrap();
        assert!(r.evaluations_used <= 2000);
        assert!(convergence_report(&r.trace, 3, 1e-6).unwrap().converged);
    }
}
