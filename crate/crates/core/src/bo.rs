//! Outer loop: GP-UCB over the normalized fidelity box.
//!
//! The objective is minimized, so candidates are ranked by the lower
//! confidence bound `mu_t(f) - sqrt(beta_t) * sigma_t(f)`, which is the
//! usual upper confidence bound applied to the negated objective. Regret
//! is reported as `r_t = loss(f_t) - loss(f*) >= 0`.
//!
//! Surrogate: squared-exponential GP with fixed
//! length-scales (0.2 on the unit box), prior mean and amplitude set to the
//! running mean and standard deviation of the observed losses, and a
//! nugget of `1e-6 * amplitude^2`. Candidates are a fresh seeded Latin
//! hypercube grid per iteration plus every previously observed point; the
//! lowest index wins ties.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::aggregate_loss;
use crate::sim::Simulator;
use crate::space::{latin_hypercube_unit, EnvironmentConfig, FidelitySetting, FidelitySpace, Seed, Task};

/// Squared-exponential kernel with per-dimension length-scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub length_scales: Vec<f64>,
    /// Prior standard deviation of the latent function.
    pub amplitude: f64,
    pub noise_variance: f64,
}

impl Kernel {
    pub fn isotropic(dim: usize, length_scale: f64, amplitude: f64, noise_variance: f64) -> Self {
        Kernel { length_scales: vec![length_scale; dim], amplitude, noise_variance }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.amplitude * self.amplitude * (-0.5 * r2).exp()
    }

    fn validate(&self) -> Result<()> {
        if self.length_scales.is_empty() || self.length_scales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("length-scales must be positive"));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid("amplitude must be positive"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::invalid("noise variance must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GpData {
    kernel: Kernel,
    prior_mean: f64,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

/// Exact GP regression posterior with a cached Cholesky factor.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GpData", into = "GpData")]
pub struct GpState {
    data: GpData,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    /// Diagonal jitter that was needed on top of the noise variance.
    jitter: f64,
}

impl PartialEq for GpState {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl TryFrom<GpData> for GpState {
    type Error = Error;

    fn try_from(d: GpData) -> Result<Self> {
        GpState::fit(d.kernel, d.prior_mean, d.inputs, d.targets)
    }
}

impl From<GpState> for GpData {
    fn from(g: GpState) -> Self {
        g.data
    }
}

impl GpState {
    /// Prior-only GP.
    pub fn new(kernel: Kernel) -> Result<Self> {
        Self::fit(kernel, 0.0, Vec::new(), Vec::new())
    }

    pub fn fit(kernel: Kernel, prior_mean: f64, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        kernel.validate()?;
        if inputs.len() != targets.len() {
            return Err(Error::invalid("one target per input"));
        }
        if targets.iter().any(|y| !y.is_finite()) || !prior_mean.is_finite() {
            return Err(Error::invalid("GP observations must be finite"));
        }
        if inputs.iter().any(|x| x.len() != kernel.length_scales.len()) {
            return Err(Error::invalid("input dimension does not match kernel"));
        }
        let n = inputs.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel.eval(&inputs[i], &inputs[j]));
        let scale = kernel.amplitude * kernel.amplitude;
        let mut jitter = 0.0;
        let chol = loop {
            let mut m = k.clone();
            for i in 0..n {
                m[(i, i)] += kernel.noise_variance + jitter;
            }
            if let Some(c) = m.cholesky() {
                break c;
            }
            jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 100.0 };
            if jitter > 1e-4 * scale {
                return Err(Error::Numerical("kernel matrix is not positive definite".into()));
            }
            log::debug!("escalating GP jitter to {jitter:e}");
        };
        let resid = DVector::from_iterator(n, targets.iter().map(|y| y - prior_mean));
        let alpha = chol.solve(&resid);
        Ok(GpState { data: GpData { kernel, prior_mean, inputs, targets }, chol_l: chol.unpack(), alpha, jitter })
    }

    /// Refits with one more observation.
    pub fn observe(&self, x: Vec<f64>, y: f64) -> Result<Self> {
        let mut inputs = self.data.inputs.clone();
        let mut targets = self.data.targets.clone();
        inputs.push(x);
        targets.push(y);
        Self::fit(self.data.kernel.clone(), self.data.prior_mean, inputs, targets)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.data.kernel
    }

    pub fn len(&self) -> usize {
        self.data.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.targets.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and standard deviation of the latent function at `x`.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let kernel = &self.data.kernel;
        let prior_var = kernel.amplitude * kernel.amplitude;
        if self.data.inputs.is_empty() {
            return (self.data.prior_mean, kernel.amplitude);
        }
        let kstar = DVector::from_iterator(self.data.inputs.len(), self.data.inputs.iter().map(|xi| kernel.eval(xi, x)));
        let mean = self.data.prior_mean + kstar.dot(&self.alpha);
        let v = self
            .chol_l
            .solve_lower_triangular(&kstar)
            .expect("Cholesky factor has a nonzero diagonal");
        let var = (prior_var - v.dot(&v)).max(0.0);
        (mean, var.sqrt())
    }
}

/// `beta_t = 2 ln(|D| t^2 pi^2 / (6 delta))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSchedule {
    #[serde(default = "BetaSchedule::default_delta")]
    pub delta: f64,
    #[serde(default = "BetaSchedule::default_grid")]
    pub grid_size: usize,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule { delta: Self::default_delta(), grid_size: Self::default_grid() }
    }
}

impl BetaSchedule {
    fn default_delta() -> f64 {
        0.1
    }

    fn default_grid() -> usize {
        512
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("beta schedule delta must lie in (0,1)"));
        }
        if self.grid_size == 0 {
            return Err(Error::invalid("acquisition grid must be nonempty"));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        2.0 * (self.grid_size as f64 * t * t * pi2 / (6.0 * self.delta)).ln()
    }
}

/// Lower confidence bound at `f` for iteration `t`.
pub fn acquisition(gp: &GpState, f: &[f64], t: usize, schedule: &BetaSchedule) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("iterations are counted from 1"));
    }
    let (mean, std) = gp.posterior(f);
    Ok(mean - schedule.beta(t).sqrt() * std)
}

/// Candidate with the smallest acquisition value (lowest index on ties),
/// with its value and the largest posterior standard deviation seen.
pub fn select_candidate(gp: &GpState, candidates: &[Vec<f64>], t: usize, schedule: &BetaSchedule) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::invalid("no acquisition candidates"));
    }
    let sqrt_beta = schedule.beta(t.max(1)).sqrt();
    let scored: Vec<(f64, f64, f64)> = candidates
        .par_iter()
        .map(|c| {
            let (m, s) = gp.posterior(c);
            (m - sqrt_beta * s, m, s)
        })
        .collect();
    let mut best = 0;
    for (i, s) in scored.iter().enumerate() {
        if s.0 < scored[best].0 {
            best = i;
        }
    }
    Ok(Selection {
        index: best,
        acquisition: scored[best].0,
        mean: scored[best].1,
        stddev: scored[best].2,
        max_stddev: scored.iter().map(|s| s.2).fold(0.0, f64::max),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub acquisition: f64,
    pub mean: f64,
    pub stddev: f64,
    pub max_stddev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub t: usize,
    pub fidelity: Vec<f64>,
    /// `None` when the evaluation failed; such rows add no regret.
    pub loss: Option<f64>,
    pub instantaneous: f64,
    pub cumulative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub records: Vec<RegretRecord>,
    pub reference_loss: f64,
    /// False when `reference_loss` is the best observed loss (a proxy).
    pub reference_is_exact: bool,
}

impl RegretTrace {
    /// Builds the trace from per-iteration `(fidelity, loss)` pairs.
    pub fn from_losses(points: &[(Vec<f64>, Option<f64>)], reference: Option<f64>) -> Self {
        let proxy = points.iter().filter_map(|p| p.1).fold(f64::INFINITY, f64::min);
        let (reference_loss, exact) = match reference {
            Some(r) => (r, true),
            None => (if proxy.is_finite() { proxy } else { 0.0 }, false),
        };
        let mut cumulative = 0.0;
        let records = points
            .iter()
            .enumerate()
            .map(|(i, (f, loss))| {
                let r = loss.map_or(0.0, |l| l - reference_loss);
                cumulative += r;
                RegretRecord { t: i + 1, fidelity: f.clone(), loss: *loss, instantaneous: r, cumulative }
            })
            .collect();
        RegretTrace { records, reference_loss, reference_is_exact: exact }
    }

    /// Trace from given instantaneous regrets against an exact optimum of 0.
    pub fn from_instantaneous(regrets: &[f64]) -> Self {
        let points: Vec<(Vec<f64>, Option<f64>)> = regrets.iter().map(|r| (Vec::new(), Some(*r))).collect();
        Self::from_losses(&points, Some(0.0))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cumulative).collect()
    }

    pub fn total(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative)
    }
}

/// Least-squares slope of `ln R_T` against `ln T` over the second half of
/// the trace; 0 when the cumulative regret vanishes there.
pub fn regret_growth_fit(trace: &RegretTrace) -> Result<f64> {
    if trace.len() < 10 {
        return Err(Error::invalid(format!("regret fit needs >= 10 iterations, got {}", trace.len())));
    }
    if !trace.reference_is_exact {
        return Err(Error::invalid("regret fit needs an exact reference optimum"));
    }
    let n = trace.len();
    let pts: Vec<(f64, f64)> = trace.records[n / 2..]
        .iter()
        .filter(|r| r.cumulative > 0.0)
        .map(|r| ((r.t as f64).ln(), r.cumulative.ln()))
        .collect();
    if pts.len() < 2 {
        return Ok(0.0);
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(if sxx > 0.0 { sxy / sxx } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoOptions {
    #[serde(default)]
    pub schedule: BetaSchedule,
    #[serde(default = "BoOptions::default_length_scale")]
    pub length_scale: f64,
    /// Nugget relative to the squared amplitude.
    #[serde(default = "BoOptions::default_noise")]
    pub relative_noise: f64,
    /// Known optimal loss, for exact regret.
    #[serde(default)]
    pub reference_optimum: Option<f64>,
}

impl Default for BoOptions {
    fn default() -> Self {
        BoOptions {
            schedule: BetaSchedule::default(),
            length_scale: Self::default_length_scale(),
            relative_noise: Self::default_noise(),
            reference_optimum: None,
        }
    }
}

impl BoOptions {
    fn default_length_scale() -> f64 {
        0.2
    }

    fn default_noise() -> f64 {
        1e-6
    }
}

/// The next point to evaluate and the surrogate's view of it.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub t: usize,
    pub fidelity: FidelitySetting,
    pub mean: f64,
    pub stddev: f64,
    /// Largest posterior standard deviation over this iteration's candidates.
    pub max_stddev: f64,
    pub warm_start: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityOptResult {
    pub best_fidelity: FidelitySetting,
    pub best_loss: f64,
    /// Outer iterations performed (`K2`).
    pub iterations: usize,
    pub regret: RegretTrace,
    pub gp: GpState,
}

/// Step-wise GP-UCB driver: alternate [`propose`](Self::propose) and
/// [`observe`](Self::observe), then [`finish`](Self::finish).
pub struct FidelityOptimizer {
    space: FidelitySpace,
    options: BoOptions,
    seed: Seed,
    warm: Vec<Vec<f64>>,
    history: Vec<(Vec<f64>, Option<f64>)>,
}

impl FidelityOptimizer {
    pub fn new(space: FidelitySpace, options: BoOptions, seed: Seed) -> Result<Self> {
        options.schedule.validate()?;
        if !(options.length_scale > 0.0) || !(options.relative_noise >= 0.0) {
            return Err(Error::invalid("length scale must be > 0 and noise >= 0"));
        }
        let warm = latin_hypercube_unit(space.dim(), space.dim() + 1, seed.derive("bo/warm", 0))?;
        Ok(FidelityOptimizer { space, options, seed, warm, history: Vec::new() })
    }

    /// Iteration number of the next proposal (from 1).
    pub fn t(&self) -> usize {
        self.history.len() + 1
    }

    /// Surrogate fitted to the successful observations so far.
    pub fn gp(&self) -> Result<GpState> {
        let (xs, ys): (Vec<Vec<f64>>, Vec<f64>) =
            self.history.iter().filter_map(|(x, y)| y.map(|y| (x.clone(), y))).unzip();
        let n = ys.len();
        let mean = if n == 0 { 0.0 } else { ys.iter().sum::<f64>() / n as f64 };
        let var = if n < 2 { 0.0 } else { ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64 };
        let amplitude = if var.sqrt() > 1e-12 * mean.abs().max(1e-300) && var > 0.0 { var.sqrt() } else { 1.0 };
        let kernel = Kernel::isotropic(
            self.space.dim(),
            self.options.length_scale,
            amplitude,
            self.options.relative_noise * amplitude * amplitude,
        );
        GpState::fit(kernel, mean, xs, ys)
    }

    pub fn propose(&self) -> Result<Proposal> {
        let t = self.t();
        let gp = self.gp()?;
        let mut candidates = latin_hypercube_unit(
            self.space.dim(),
            self.options.schedule.grid_size,
            self.seed.derive("bo/grid", t as u64),
        )?;
        candidates.extend(self.history.iter().filter(|h| h.1.is_some()).map(|h| h.0.clone()));
        let sel = select_candidate(&gp, &candidates, t, &self.options.schedule)?;
        let (point, mean, stddev, warm_start) = match self.warm.get(t - 1) {
            Some(w) => {
                let (m, s) = gp.posterior(w);
                (w.clone(), m, s, true)
            }
            None => (candidates[sel.index].clone(), sel.mean, sel.stddev, false),
        };
        Ok(Proposal {
            t,
            fidelity: self.space.clamp(point),
            mean,
            stddev,
            max_stddev: sel.max_stddev.max(stddev),
            warm_start,
        })
    }

    /// Records the loss at `f`; `None` marks a failed evaluation, which is
    /// kept in the regret trace but never shown to the surrogate.
    pub fn observe(&mut self, f: &FidelitySetting, loss: Option<f64>) {
        let loss = loss.filter(|l| l.is_finite());
        self.history.push((f.values().to_vec(), loss));
    }

    pub fn history(&self) -> &[(Vec<f64>, Option<f64>)] {
        &self.history
    }

    pub fn finish(&self) -> Result<FidelityOptResult> {
        let (best_t, best_loss) = self
            .history
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.1.map(|l| (i, l)))
            .fold(None::<(usize, f64)>, |acc, (i, l)| match acc {
                Some((_, b)) if b <= l => acc,
                _ => Some((i, l)),
            })
            .ok_or_else(|| Error::Numerical("no successful fidelity evaluation".into()))?;
        Ok(FidelityOptResult {
            best_fidelity: self.space.clamp(self.history[best_t].0.clone()),
            best_loss,
            iterations: self.history.len(),
            regret: RegretTrace::from_losses(&self.history, self.options.reference_optimum),
            gp: self.gp()?,
        })
    }
}

/// Runs `iterations` GP-UCB steps on an arbitrary objective. Objective
/// errors are logged and recorded as failed evaluations.
pub fn optimize(
    space: &FidelitySpace,
    iterations: usize,
    options: BoOptions,
    seed: Seed,
    mut objective: impl FnMut(&FidelitySetting, usize) -> Result<f64>,
) -> Result<FidelityOptResult> {
    if iterations == 0 {
        return Err(Error::invalid("at least one outer iteration is required"));
    }
    let mut opt = FidelityOptimizer::new(space.clone(), options, seed)?;
    for _ in 0..iterations {
        let p = opt.propose()?;
        let loss = match objective(&p.fidelity, p.t) {
            Ok(l) => Some(l),
            Err(e) => {
                log::warn!("fidelity evaluation {} failed: {e}", p.t);
                None
            }
        };
        opt.observe(&p.fidelity, loss);
    }
    opt.finish()
}

/// Minimizes the aggregate loss over `tasks` plus the configurations
/// returned by `extra_configs` for each iteration.
pub fn optimize_fidelity(
    sim: &dyn Simulator,
    tasks: &[Task],
    extra_configs: impl Fn(usize) -> Vec<EnvironmentConfig>,
    iterations: usize,
    options: BoOptions,
    seed: Seed,
) -> Result<FidelityOptResult> {
    if tasks.is_empty() {
        return Err(Error::invalid("fidelity optimization needs at least one task"));
    }
    let loss_seed = seed.derive("bo/loss", 0);
    optimize(&sim.spec().fidelity_space, iterations, options, seed, |f, t| {
        Ok(aggregate_loss(sim, f, tasks, &extra_configs(t), loss_seed)?.sum)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn se(dim: usize, noise: f64) -> Kernel {
        Kernel::isotropic(dim, 0.2, 1.0, noise)
    }

    #[test]
    fn prior_posterior() {
        let gp = GpState::new(Kernel::isotropic(2, 0.3, 1.7, 0.0)).unwrap();
        assert_eq!(gp.posterior(&[0.2, 0.9]), (0.0, 1.7));
    }

    #[test]
    fn interpolates_observations() {
        let xs = vec![vec![0.1], vec![0.45], vec![0.8]];
        let ys = vec![0.3, -1.2, 2.0];
        let gp = GpState::fit(se(1, 0.0), 0.0, xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let (m, s) = gp.posterior(x);
            assert!((m - y).abs() <= 1e-6);
            assert!(s <= 1e-3);
        }
    }

    #[test]
    fn symmetric_pair_has_zero_midpoint_mean() {
        let gp = GpState::fit(se(1, 0.0), 0.0, vec![vec![0.3], vec![0.7]], vec![1.0, -1.0]).unwrap();
        assert!(gp.posterior(&[0.5]).0.abs() < 1e-9);
        // Closed form: K^-1 y = (1, -1) / (1 - r) for K = [[1, r], [r, 1]].
        let r = (-0.5_f64 * (0.4_f64 / 0.2).powi(2)).exp();
        let x = 0.35_f64;
        let k1 = (-0.5 * ((x - 0.3) / 0.2_f64).powi(2)).exp();
        let k2 = (-0.5 * ((x - 0.7) / 0.2_f64).powi(2)).exp();
        let want = (k1 - k2) / (1.0 - r);
        assert!((gp.posterior(&[x]).0 - want).abs() < 1e-9);
    }

    #[test]
    fn duplicate_points_trigger_jitter() {
        let gp = GpState::fit(se(1, 0.0), 0.0, vec![vec![0.5], vec![0.5]], vec![1.0, 1.0]).unwrap();
        assert!(gp.jitter() > 0.0);
        assert!((gp.posterior(&[0.5]).0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_kernel() {
        assert!(GpState::new(Kernel::isotropic(1, 0.0, 1.0, 0.0)).is_err());
        assert!(GpState::fit(se(1, 0.0), 0.0, vec![vec![0.5]], vec![f64::NAN]).is_err());
    }

    #[test]
    fn acquisition_algebra() {
        let sched = BetaSchedule::default();
        let gp = GpState::fit(se(1, 1e-10), 0.0, vec![vec![0.5]], vec![0.7]).unwrap();
        let a = acquisition(&gp, &[0.5], 3, &sched).unwrap();
        assert!((a - 0.7).abs() < 1e-3);
        let empty = GpState::new(se(1, 0.0)).unwrap();
        let a = acquisition(&empty, &[0.1], 4, &sched).unwrap();
        assert!((a + sched.beta(4).sqrt()).abs() < 1e-12);
        let sel = select_candidate(&empty, &[vec![0.1], vec![0.9]], 4, &sched).unwrap();
        assert_eq!(sel.index, 0);
        assert!(acquisition(&empty, &[0.1], 0, &sched).is_err());
    }

    #[test]
    fn doubling_beta_lowers_bound() {
        let gp = GpState::fit(se(1, 0.0), 0.0, vec![vec![0.2]], vec![1.0]).unwrap();
        let (m, s) = gp.posterior(&[0.6]);
        assert!(s > 0.0);
        let beta = BetaSchedule::default().beta(5);
        assert!(m - (2.0 * beta).sqrt() * s < m - beta.sqrt() * s);
    }

    #[test]
    fn beta_grows_with_t() {
        let s = BetaSchedule::default();
        let b: Vec<f64> = (1..100).map(|t| s.beta(t)).collect();
        assert!(b[0] > 0.0);
        assert!(b.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn regret_fit_reference_traces() {
        let n = 1000;
        let sqrt: Vec<f64> = (1..=n).map(|t| 0.7 / (t as f64).sqrt()).collect();
        let e = regret_growth_fit(&RegretTrace::from_instantaneous(&sqrt)).unwrap();
        assert!((e - 0.5).abs() < 0.05, "{e}");
        let lin = vec![0.3; n];
        let e = regret_growth_fit(&RegretTrace::from_instantaneous(&lin)).unwrap();
        assert!((e - 1.0).abs() < 0.05, "{e}");
        assert_eq!(regret_growth_fit(&RegretTrace::from_instantaneous(&[0.0; 20])).unwrap(), 0.0);
        assert!(regret_growth_fit(&RegretTrace::from_instantaneous(&[0.1; 9])).is_err());
    }

    #[test]
    fn single_iteration() {
        let space = FidelitySpace::unnamed(1).unwrap();
        let mut calls = 0;
        let r = optimize(&space, 1, BoOptions { reference_optimum: Some(0.0), ..Default::default() }, Seed(1), |f, _| {
            calls += 1;
            Ok((f.values()[0] - 0.3).powi(2))
        })
        .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.regret.total(), r.regret.records[0].instantaneous);
    }

    #[test]
    fn failed_evaluations_are_recorded() {
        let space = FidelitySpace::unnamed(1).unwrap();
        let r = optimize(&space, 6, BoOptions::default(), Seed(3), |f, t| {
            if t == 2 {
                Err(Error::Numerical("boom".into()))
            } else {
                Ok(f.values()[0])
            }
        })
        .unwrap();
        assert_eq!(r.regret.records[1].loss, None);
        assert_eq!(r.gp.len(), 5);
        let c = r.regret.cumulative();
        assert!(c.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn gp_state_serde_round_trip() {
        let gp = GpState::fit(se(2, 1e-6), 0.4, vec![vec![0.1, 0.2], vec![0.5, 0.9]], vec![1.0, 2.0]).unwrap();
        let text = serde_json::to_string(&gp).unwrap();
        let back: GpState = serde_json::from_str(&text).unwrap();
        assert_eq!(gp.posterior(&[0.3, 0.3]), back.posterior(&[0.3, 0.3]));
    }
}
