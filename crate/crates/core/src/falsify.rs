//! Inner loop: search for the environment configuration that minimizes
//! robustness at a fixed fidelity setting.
//!
//! The search runs a Latin hypercube exploration phase followed by the
//! cross-entropy method (CEM) on normalized coordinates: each generation
//! is drawn from a diagonal Gaussian, clipped to the box, and the
//! distribution is refit (with smoothing) to the elite fraction of the
//! generation. Every random draw is derived from the seed and the
//! generation index, and the evaluation order of a generation never
//! influences selection, so results are reproducible and parallel
//! evaluation is safe.
//!
//! With a fixed exploration size, a run with a larger evaluation budget
//! evaluates a superset of the points of a smaller run (same seed), so its
//! best robustness is never worse.

use std::cmp::Ordering;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Simulator;
use crate::space::{latin_hypercube_unit, EnvironmentConfig, FidelitySetting, Seed};
use crate::stl::{robustness, Robustness, SafetySpec};

const SMOOTHING: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FalsifyBudget {
    pub max_evaluations: usize,
    /// Size of the Latin hypercube phase; a quarter of the budget if unset.
    #[serde(default)]
    pub exploration: Option<usize>,
    #[serde(default = "FalsifyBudget::default_population")]
    pub population: usize,
    #[serde(default = "FalsifyBudget::default_elite_fraction")]
    pub elite_fraction: f64,
    #[serde(default = "FalsifyBudget::default_stop_tolerance")]
    pub stop_tolerance: f64,
    /// Simulator runs averaged per evaluation (`n`).
    #[serde(default = "FalsifyBudget::default_samples")]
    pub samples_per_eval: usize,
}

impl FalsifyBudget {
    fn default_population() -> usize {
        50
    }

    fn default_elite_fraction() -> f64 {
        0.2
    }

    fn default_stop_tolerance() -> f64 {
        1e-4
    }

    fn default_samples() -> usize {
        1
    }

    pub fn new(max_evaluations: usize) -> Self {
        FalsifyBudget {
            max_evaluations,
            exploration: None,
            population: Self::default_population(),
            elite_fraction: Self::default_elite_fraction(),
            stop_tolerance: Self::default_stop_tolerance(),
            samples_per_eval: Self::default_samples(),
        }
    }

    pub fn with_budget(mut self, max_evaluations: usize) -> Self {
        self.max_evaluations = max_evaluations;
        self
    }

    pub fn with_population(mut self, population: usize) -> Self {
        self.population = population;
        self
    }

    pub fn with_exploration(mut self, exploration: usize) -> Self {
        self.exploration = Some(exploration);
        self
    }

    pub fn with_samples_per_eval(mut self, n: usize) -> Self {
        self.samples_per_eval = n;
        self
    }

    pub fn with_stop_tolerance(mut self, tol: f64) -> Self {
        self.stop_tolerance = tol;
        self
    }

    pub fn exploration(&self) -> usize {
        self.exploration.unwrap_or(self.max_evaluations / 4).min(self.max_evaluations)
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::invalid(format!("population must be >= 4, got {}", self.population)));
        }
        if self.max_evaluations < self.population {
            return Err(Error::invalid(format!(
                "max_evaluations ({}) must be >= population ({})",
                self.max_evaluations, self.population
            )));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return Err(Error::invalid("elite_fraction must lie in (0,1)"));
        }
        if !(self.stop_tolerance >= 0.0) {
            return Err(Error::invalid("stop_tolerance must be >= 0"));
        }
        if self.samples_per_eval == 0 {
            return Err(Error::invalid("samples_per_eval must be >= 1"));
        }
        if self.exploration() == 0 {
            return Err(Error::invalid("exploration phase needs at least one evaluation"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsificationResult {
    pub best_config: EnvironmentConfig,
    pub best_robustness: Robustness,
    pub counterexample_found: bool,
    pub evaluations_used: usize,
    /// Exploration phase plus CEM generations.
    pub iterations: usize,
    /// Best robustness so far after each iteration.
    pub trace: Vec<f64>,
    /// Simulator runs: `evaluations_used * samples_per_eval`.
    pub simulations: u64,
}

/// Robustness averaged over one low-fidelity run per seed.
pub fn mean_robustness(
    sim: &dyn Simulator,
    phi: &SafetySpec,
    e: &EnvironmentConfig,
    f: &FidelitySetting,
    seeds: &[Seed],
) -> Result<f64> {
    let mut acc = 0.0;
    for s in seeds {
        let traj = sim.simulate_low(e, f, *s)?;
        acc += robustness(phi, &traj)?.value();
    }
    Ok(acc / seeds.len() as f64)
}

/// Common random numbers shared by every evaluation of one search.
pub fn noise_seeds(seed: Seed, n: usize) -> Vec<Seed> {
    (0..n as u64).map(|r| seed.derive("falsify/noise", r)).collect()
}

fn score_order(a: (f64, &[f64]), b: (f64, &[f64])) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| {
        a.1.iter()
            .zip(b.1)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

struct Search<'a> {
    sim: &'a dyn Simulator,
    phi: &'a SafetySpec,
    f: &'a FidelitySetting,
    seeds: Vec<Seed>,
    used: usize,
    best: Option<(f64, EnvironmentConfig)>,
    trace: Vec<f64>,
}

impl Search<'_> {
    /// Scores unit-cube points; diverged simulations score `+inf`.
    fn evaluate(&mut self, unit: &[Vec<f64>]) -> Result<Vec<f64>> {
        let space = &self.sim.spec().environment_space;
        let configs: Vec<EnvironmentConfig> = unit.iter().map(|u| space.from_unit(u)).collect();
        let scores: Vec<Result<f64>> = configs
            .par_iter()
            .map(|e| match mean_robustness(self.sim, self.phi, e, self.f, &self.seeds) {
                Err(Error::SimulationDiverged { time }) => {
                    log::debug!("simulation diverged at t = {time} for {:?}", e.values());
                    Ok(f64::INFINITY)
                }
                other => other,
            })
            .collect();
        let scores = scores.into_iter().collect::<Result<Vec<f64>>>()?;
        self.used += unit.len();
        for (s, e) in scores.iter().zip(configs) {
            let better = match &self.best {
                None => true,
                Some((b, be)) => score_order((*s, e.values()), (*b, be.values())) == Ordering::Less,
            };
            if better {
                self.best = Some((*s, e));
            }
        }
        if scores.iter().all(|s| s.is_infinite()) {
            return Err(Error::FalsificationFailed(format!(
                "all {} simulations of a population diverged",
                scores.len()
            )));
        }
        self.trace.push(self.best.as_ref().map_or(f64::INFINITY, |b| b.0));
        Ok(scores)
    }
}

/// Elite mean and standard deviation per coordinate.
fn refit(points: &[Vec<f64>], scores: &[f64], elite_fraction: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut order: Vec<usize> = (0..points.len()).filter(|&i| scores[i].is_finite()).collect();
    if order.is_empty() {
        return None;
    }
    order.sort_by(|&a, &b| score_order((scores[a], &points[a]), (scores[b], &points[b])));
    let k = ((elite_fraction * points.len() as f64).ceil() as usize).clamp(1, order.len());
    let elites = &order[..k];
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for &i in elites {
        for d in 0..dim {
            mean[d] += points[i][d] / k as f64;
        }
    }
    let std = if k < 2 {
        vec![0.1; dim]
    } else {
        (0..dim)
            .map(|d| (elites.iter().map(|&i| (points[i][d] - mean[d]).powi(2)).sum::<f64>() / k as f64).sqrt())
            .collect()
    };
    Some((mean, std))
}

/// Finds `e*(f)`, the configuration minimizing robustness of `phi` under
/// fidelity `f`, within `budget` evaluations.
pub fn falsify(
    sim: &dyn Simulator,
    phi: &SafetySpec,
    f: &FidelitySetting,
    budget: &FalsifyBudget,
    seed: Seed,
) -> Result<FalsificationResult> {
    budget.validate()?;
    sim.spec().check_fidelity(f)?;
    let space = &sim.spec().environment_space;
    let dim = space.dim();
    let mut search = Search {
        sim,
        phi,
        f,
        seeds: noise_seeds(seed, budget.samples_per_eval),
        used: 0,
        best: None,
        trace: Vec::new(),
    };

    if space.is_degenerate() {
        search.evaluate(&[vec![0.5; dim]])?;
    } else {
        let unit = latin_hypercube_unit(dim, budget.exploration(), seed.derive("falsify/lhs", 0))?;
        let scores = search.evaluate(&unit)?;
        let (mut mean, mut std) = refit(&unit, &scores, budget.elite_fraction).expect("non-diverged point exists");

        let mut generation = 0u64;
        while search.used < budget.max_evaluations {
            let size = budget.population.min(budget.max_evaluations - search.used);
            let mut rng = seed.derive("falsify/cem", generation).rng();
            generation += 1;
            let pop: Vec<Vec<f64>> = (0..size)
                .map(|_| {
                    (0..dim)
                        .map(|d| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (mean[d] + std[d] * z).clamp(0.0, 1.0)
                        })
                        .collect()
                })
                .collect();
            let scores = search.evaluate(&pop)?;
            if let Some((m, s)) = refit(&pop, &scores, budget.elite_fraction) {
                for d in 0..dim {
                    mean[d] = SMOOTHING * m[d] + (1.0 - SMOOTHING) * mean[d];
                    std[d] = SMOOTHING * s[d] + (1.0 - SMOOTHING) * std[d];
                }
            }
            if std.iter().fold(0.0_f64, |a, b| a.max(*b)) < budget.stop_tolerance {
                break;
            }
        }
    }

    let (score, best_config) = search.best.expect("at least one evaluation");
    if !score.is_finite() {
        return Err(Error::FalsificationFailed("every simulation diverged".into()));
    }
    Ok(FalsificationResult {
        best_config,
        best_robustness: Robustness::from_finite(score),
        counterexample_found: score < 0.0,
        evaluations_used: search.used,
        iterations: search.trace.len(),
        trace: search.trace,
        simulations: (search.used * budget.samples_per_eval) as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Braking, FnSimulator};
    use crate::space::EnvironmentSpace;

    fn bowl(e0: [f64; 2]) -> FnSimulator {
        let space = EnvironmentSpace::unit(2).unwrap();
        FnSimulator::new(space, 1, move |e, _| (e[0] - e0[0]).powi(2) + (e[1] - e0[1]).powi(2) - 0.01).unwrap()
    }

    fn phi() -> SafetySpec {
        SafetySpec::parse(FnSimulator::SPEC).unwrap()
    }

    #[test]
    fn finds_analytic_minimum() {
        let e0 = [0.3, 0.65];
        let sim = bowl(e0);
        let f = sim.spec().fidelity_space.max_fidelity();
        let r = falsify(&sim, &phi(), &f, &FalsifyBudget::new(2000), Seed(11)).unwrap();
        let v = r.best_config.values();
        let dist = ((v[0] - e0[0]).powi(2) + (v[1] - e0[1]).powi(2)).sqrt();
        assert!(dist < 0.02, "distance {dist}");
        assert!(r.counterexample_found);
        assert!(r.evaluations_used <= 2000);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.iterations, r.trace.len());
        assert_eq!(r.counterexample_found, r.best_robustness.value() < 0.0);
    }

    #[test]
    fn rejects_budget_below_population() {
        let sim = bowl([0.5, 0.5]);
        let f = sim.spec().fidelity_space.max_fidelity();
        let b = FalsifyBudget::new(49).with_population(50);
        assert!(matches!(falsify(&sim, &phi(), &f, &b, Seed(0)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn degenerate_space_single_evaluation() {
        let space = EnvironmentSpace::new(["a"], vec![0.4], vec![0.4]).unwrap();
        let sim = FnSimulator::new(space, 1, |e, _| e[0] - 1.0).unwrap();
        let f = sim.spec().fidelity_space.max_fidelity();
        let r = falsify(&sim, &phi(), &f, &FalsifyBudget::new(100), Seed(0)).unwrap();
        assert_eq!(r.evaluations_used, 1);
        assert_eq!(r.best_config.values(), &[0.4]);
        assert!((r.best_robustness.value() + 0.6).abs() < 1e-12);
    }

    #[test]
    fn all_diverged_is_failure() {
        let sim = FnSimulator::new(EnvironmentSpace::unit(1).unwrap(), 1, |_, _| f64::INFINITY).unwrap();
        let f = sim.spec().fidelity_space.max_fidelity();
        assert!(matches!(
            falsify(&sim, &phi(), &f, &FalsifyBudget::new(100), Seed(0)),
            Err(Error::FalsificationFailed(_))
        ));
    }

    #[test]
    fn partially_diverged_points_are_skipped() {
        let sim = FnSimulator::new(EnvironmentSpace::unit(1).unwrap(), 1, |e, _| {
            if e[0] < 0.2 {
                f64::NAN
            } else {
                e[0] - 0.3
            }
        })
        .unwrap();
        let f = sim.spec().fidelity_space.max_fidelity();
        let r = falsify(&sim, &phi(), &f, &FalsifyBudget::new(400), Seed(4)).unwrap();
        assert!(r.best_config.values()[0] >= 0.2);
        assert!(r.counterexample_found);
    }

    #[test]
    fn deterministic_given_seed() {
        let sim = Braking::new();
        let phi = SafetySpec::parse("G[0,D](gap > 0)").unwrap();
        let f = sim.spec().fidelity_space.setting(vec![0.5, 0.5, 1.0]).unwrap();
        let b = FalsifyBudget::new(200);
        let a = falsify(&sim, &phi, &f, &b, Seed(5)).unwrap();
        assert_eq!(a, falsify(&sim, &phi, &f, &b, Seed(5)).unwrap());
    }

    #[test]
    fn anytime_contract() {
        let sim = bowl([0.8, 0.1]);
        let f = sim.spec().fidelity_space.max_fidelity();
        let base = FalsifyBudget::new(100).with_exploration(40).with_stop_tolerance(0.0);
        let mut prev = f64::INFINITY;
        for b in [100, 130, 260, 777] {
            let budget = FalsifyBudget { max_evaluations: b, ..base.clone() };
            let r = falsify(&sim, &phi(), &f, &budget, Seed(2)).unwrap();
            assert!(r.best_robustness.value() <= prev);
            prev = r.best_robustness.value();
        }
    }

    #[test]
    fn budget_serde_defaults() {
        let b: FalsifyBudget = serde_json::from_str(r#"{"max_evaluations": 400}"#).unwrap();
        assert_eq!(b, FalsifyBudget::new(400));
        assert_eq!(b.exploration(), 100);
    }
}
