//! Trajectory discrepancy and the aggregate fidelity objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Simulator;
use crate::space::{EnvironmentConfig, FidelitySetting, Seed, Task, Trajectory};

/// Nonnegative discrepancy, in squared channel units.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossValue(f64);

impl LossValue {
    pub fn new(v: f64) -> Result<Self> {
        if v.is_finite() && v >= 0.0 {
            Ok(LossValue(v))
        } else {
            Err(Error::Numerical(format!("loss must be finite and nonnegative, got {v}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Time-averaged squared Euclidean distance between two trajectories.
///
/// `low` is linearly resampled onto the grid points of `high` that fall
/// inside the common time domain, and the integral is taken with the
/// trapezoidal rule, then divided by the length of that domain.
pub fn mse_loss(high: &Trajectory, low: &Trajectory) -> Result<LossValue> {
    let mut hc: Vec<&String> = high.channels().iter().collect();
    let mut lc: Vec<&String> = low.channels().iter().collect();
    hc.sort();
    lc.sort();
    if hc != lc {
        return Err(Error::ChannelMismatch(format!("{:?} vs {:?}", high.channels(), low.channels())));
    }
    let low_index: Vec<usize> = high
        .channels()
        .iter()
        .map(|c| low.channels().iter().position(|x| x == c).expect("same channel set"))
        .collect();

    let tol = 1e-9 * high.dt();
    let start = high.start_time().max(low.start_time());
    let end = high.end_time().min(low.end_time());
    let first = (0..high.steps()).find(|&k| high.time(k) >= start - tol);
    let last = (0..high.steps()).rev().find(|&k| high.time(k) <= end + tol);
    let (first, last) = match (first, last) {
        (Some(a), Some(b)) if b > a => (a, b),
        _ => return Err(Error::NoOverlap),
    };

    let same_grid = high.dt() == low.dt() && high.start_time() == low.start_time();
    let integrand = |k: usize| -> f64 {
        let t = high.time(k);
        high.samples()
            .iter()
            .zip(&low_index)
            .map(|(row, &li)| {
                let l = if same_grid { low.samples()[li][k] } else { low.interpolate(li, t) };
                let d = row[k] - l;
                d * d
            })
            .sum()
    };

    let mut acc = 0.0;
    let mut prev = integrand(first);
    for k in first + 1..=last {
        let cur = integrand(k);
        acc += 0.5 * (prev + cur);
        prev = cur;
    }
    let span = (last - first) as f64;
    LossValue::new(acc / span)
}

/// Sum and mean of per-configuration losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateLoss {
    pub sum: f64,
    pub mean: f64,
    pub evaluations: usize,
}

/// One `(task, parameter)` summand.
fn pair_loss(
    sim: &dyn Simulator,
    e: &EnvironmentConfig,
    f: &FidelitySetting,
    seed: Seed,
) -> Result<f64> {
    let high = sim.simulate_high(e, seed)?;
    let low = sim.simulate_low(e, f, seed)?;
    Ok(mse_loss(&high, &low)?.value())
}

/// Weighted sum of [`mse_loss`] over every task parameter configuration,
/// plus one unweighted term per extra configuration.
///
/// Summand seeds depend on the task id and parameter index only, so a task
/// contributes the same value wherever it appears in the list. Failures
/// are reported with `task` = position in `tasks` (or `tasks.len()` for
/// the extra configurations) and `param` = index within it.
pub fn aggregate_loss(
    sim: &dyn Simulator,
    f: &FidelitySetting,
    tasks: &[Task],
    extra_configs: &[EnvironmentConfig],
    seed: Seed,
) -> Result<AggregateLoss> {
    if tasks.is_empty() && extra_configs.is_empty() {
        return Err(Error::invalid("aggregate loss needs at least one task or extra configuration"));
    }
    let mut jobs: Vec<(usize, usize, &EnvironmentConfig, f64, Seed)> = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        for (j, p) in task.params().iter().enumerate() {
            jobs.push((i, j, p, task.weight(), seed.derive(&format!("loss/{}", task.id()), j as u64)));
        }
    }
    for (j, e) in extra_configs.iter().enumerate() {
        jobs.push((tasks.len(), j, e, 1.0, seed.derive("loss/extra", j as u64)));
    }

    let terms: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(i, j, e, w, s)| {
            pair_loss(sim, e, f, s)
                .map(|l| w * l)
                .map_err(|err| Error::Evaluation { task: i, param: j, source: Box::new(err) })
        })
        .collect();

    let mut sum = 0.0;
    for t in terms {
        sum += t?;
    }
    Ok(AggregateLoss { sum, mean: sum / jobs.len() as f64, evaluations: jobs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{FnSimulator, Oscillator};
    use crate::space::EnvironmentSpace;

    fn constant(v: f64, steps: usize, dt: f64) -> Trajectory {
        Trajectory::new(0.0, dt, vec!["y".into()], vec![vec![v; steps]]).unwrap()
    }

    #[test]
    fn identical_is_zero() {
        let t = Trajectory::new(0.0, 0.1, vec!["a".into(), "b".into()], vec![vec![1.0, 2.0, 3.0], vec![0.0, -1.0, 5.0]])
            .unwrap();
        assert_eq!(mse_loss(&t, &t).unwrap().value(), 0.0);
    }

    #[test]
    fn constant_offset() {
        assert_eq!(mse_loss(&constant(1.0, 11, 0.1), &constant(0.0, 11, 0.1)).unwrap().value(), 1.0);
    }

    #[test]
    fn sine_against_zero_is_half() {
        // Nominal step 1e-3, adjusted so the grid ends exactly at 2 pi.
        let two_pi = 2.0 * std::f64::consts::PI;
        let n = (two_pi / 1e-3).round() as usize + 1;
        let dt = two_pi / (n - 1) as f64;
        let s: Vec<f64> = (0..n).map(|k| (k as f64 * dt).sin()).collect();
        let hi = Trajectory::new(0.0, dt, vec!["y".into()], vec![s]).unwrap();
        let lo = constant(0.0, n, dt);
        assert!((mse_loss(&hi, &lo).unwrap().value() - 0.5).abs() < 1e-5);
    }

    #[test]
    fn channel_order_is_irrelevant() {
        let a = Trajectory::new(0.0, 1.0, vec!["p".into(), "q".into()], vec![vec![0.0, 0.0], vec![3.0, 3.0]]).unwrap();
        let b = Trajectory::new(0.0, 1.0, vec!["q".into(), "p".into()], vec![vec![0.0, 0.0], vec![4.0, 4.0]]).unwrap();
        // |(0,3) - (4,0)|^2 = 25
        assert_eq!(mse_loss(&a, &b).unwrap().value(), 25.0);
    }

    #[test]
    fn coarser_low_grid_is_resampled() {
        let hi = Trajectory::new(0.0, 0.5, vec!["y".into()], vec![vec![0.0, 0.5, 1.0, 1.5, 2.0]]).unwrap();
        let lo = Trajectory::new(0.0, 1.0, vec!["y".into()], vec![vec![0.0, 1.0, 2.0]]).unwrap();
        assert!(mse_loss(&hi, &lo).unwrap().value() < 1e-15);
    }

    #[test]
    fn mismatch_and_overlap_errors() {
        let a = constant(0.0, 5, 1.0);
        let b = Trajectory::new(0.0, 1.0, vec!["z".into()], vec![vec![0.0; 5]]).unwrap();
        assert!(matches!(mse_loss(&a, &b), Err(Error::ChannelMismatch(_))));
        let late = Trajectory::new(10.0, 1.0, vec!["y".into()], vec![vec![0.0; 5]]).unwrap();
        assert!(matches!(mse_loss(&a, &late), Err(Error::NoOverlap)));
    }

    fn osc_tasks(seed: u64) -> Vec<Task> {
        let sim = Oscillator::new();
        (0..2)
            .map(|i| Task::sample(format!("t{i}"), sim.spec().environment_space.clone(), 2, Seed(seed + i)).unwrap())
            .collect()
    }

    #[test]
    fn max_fidelity_aggregate_is_zero() {
        let sim = Oscillator::new();
        let f = sim.spec().fidelity_space.max_fidelity();
        let agg = aggregate_loss(&sim, &f, &osc_tasks(1), &[], Seed(0)).unwrap();
        assert!(agg.sum.abs() <= 1e-12);
        assert_eq!(agg.evaluations, 4);
    }

    #[test]
    fn single_term_equals_pair_loss() {
        let sim = Oscillator::new();
        let task = Task::sample("only", sim.spec().environment_space.clone(), 1, Seed(5)).unwrap();
        let f = sim.spec().fidelity_space.setting(vec![0.2, 0.6, 1.0]).unwrap();
        let agg = aggregate_loss(&sim, &f, std::slice::from_ref(&task), &[], Seed(9)).unwrap();
        let e = &task.params()[0];
        let direct = mse_loss(&sim.simulate_high(e, Seed(0)).unwrap(), &sim.simulate_low(e, &f, Seed(0)).unwrap())
            .unwrap()
            .value();
        assert_eq!(agg.sum, direct);
        assert_eq!(agg.mean, direct);
    }

    #[test]
    fn coarse_fidelity_costs_more() {
        let sim = Oscillator::new();
        let tasks = osc_tasks(3);
        let coarse = sim.spec().fidelity_space.setting(vec![0.0, 0.0, 1.0]).unwrap();
        let fine = sim.spec().fidelity_space.setting(vec![0.9, 0.9, 1.0]).unwrap();
        let a = aggregate_loss(&sim, &coarse, &tasks, &[], Seed(0)).unwrap().sum;
        let b = aggregate_loss(&sim, &fine, &tasks, &[], Seed(0)).unwrap().sum;
        assert!(a > b, "coarse {a} fine {b}");
    }

    #[test]
    fn errors_name_the_summand() {
        let space = EnvironmentSpace::unit(1).unwrap();
        let sim = FnSimulator::new(space.clone(), 1, |e, _| if e[0] > 0.5 { f64::NAN } else { 0.0 }).unwrap();
        let task = Task::new("t", space.clone(), vec![space.config(vec![0.1]).unwrap(), space.config(vec![0.9]).unwrap()])
            .unwrap();
        let f = sim.spec().fidelity_space.uniform(0.5);
        match aggregate_loss(&sim, &f, &[task], &[], Seed(0)) {
            Err(Error::Evaluation { task: 0, param: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(aggregate_loss(&sim, &f, &[], &[], Seed(0)).is_err());
    }
}
