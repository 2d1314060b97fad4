//! Joint campaign: the outer GP-UCB loop over fidelity settings with an
//! inner falsification run per iteration, plus persistence and reports.
//!
//! Each outer iteration
//!
//! 1. proposes `f_t` from the surrogate,
//! 2. falsifies at `f_t` with a budget scaled by the surrogate's
//!    uncertainty at `f_t` relative to the largest uncertainty on the
//!    acquisition grid,
//! 3. evaluates the aggregate loss at `f_t` over the tasks plus the
//!    counterexamples found so far (the 32 most violating),
//! 4. feeds the per-evaluation mean loss back to the surrogate,
//! 5. appends an event to the JSONL log.
//!
//! Because the counterexample set grows, losses of different iterations
//! are taken over different sets. The reported `f*` is therefore chosen by
//! re-scoring every visited setting on the final set, next to the all-0.5
//! baseline.
//!
//! All sub-seeds are derived from the master seed with [`Seed::derive`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{
    convergence_report, estimate_lipschitz_env, estimate_lipschitz_fidelity, estimate_lipschitz_loss,
    outer_loss_gradient, reoptimized_sensitivity, sensitivity, validate_lipschitz_env, validate_lipschitz_fidelity, ConvergenceReport,
    LipschitzEstimate, LipschitzValidation, SampleComplexityPlan, SensitivityReport,
};
use crate::bo::{BetaSchedule, BoOptions, FidelityOptimizer, RegretTrace};
use crate::error::{Error, Result};
use crate::falsify::{falsify, FalsifyBudget};
use crate::loss::aggregate_loss;
use crate::sim::{builtin_simulator, CountingSimulator, ExternalSimulator, SimCounts, Simulator, SimulatorSpec};
use crate::space::{EnvironmentConfig, EnvironmentSpace, FidelitySetting, Seed, Task};
use crate::stl::SafetySpec;

pub const SCHEMA_VERSION: u32 = 1;
/// Largest number of counterexamples added to the loss evaluation set.
pub const MAX_COUNTEREXAMPLES: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SimulatorChoice {
    Builtin(String),
    External { program: PathBuf, #[serde(default)] args: Vec<String>, spec: SimulatorSpec },
}

impl SimulatorChoice {
    pub fn resolve(&self) -> Result<Box<dyn Simulator>> {
        match self {
            SimulatorChoice::Builtin(id) => builtin_simulator(id),
            SimulatorChoice::External { program, args, spec } => {
                Ok(Box::new(ExternalSimulator::new(spec.clone(), program, args.clone())?))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSettings {
    pub count: usize,
    pub per_task: usize,
    pub seed: u64,
    /// One loss weight per task; all 1 if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

/// Inner budget `base * (1 + scale * sigma / max_sigma)` once
/// `sigma / max_sigma` reaches `sigma_threshold`, else `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveBudget {
    pub base_budget: usize,
    #[serde(default = "AdaptiveBudget::default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub sigma_threshold: f64,
}

impl AdaptiveBudget {
    fn default_scale() -> f64 {
        1.0
    }

    pub fn budget(&self, sigma: f64, max_sigma: f64) -> usize {
        let ratio = if max_sigma > 0.0 { (sigma / max_sigma).clamp(0.0, 1.0) } else { 0.0 };
        if ratio < self.sigma_threshold {
            return self.base_budget;
        }
        (self.base_budget as f64 * (1.0 + self.scale * ratio)).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    #[serde(default = "AnalysisSettings::default_pairs")]
    pub pairs: usize,
    #[serde(default = "AnalysisSettings::default_validation_pairs")]
    pub validation_pairs: usize,
    #[serde(default = "AnalysisSettings::default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "AnalysisSettings::default_delta")]
    pub delta: f64,
    #[serde(default = "AnalysisSettings::default_window")]
    pub window: usize,
    #[serde(default = "AnalysisSettings::default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "AnalysisSettings::default_step")]
    pub step: f64,
    /// Repeats averaged at noisy fidelity settings.
    #[serde(default)]
    pub repeats: Option<usize>,
    /// Fidelity setting studied by `analyze`; all 0.5 if unset.
    #[serde(default)]
    pub fidelity: Option<Vec<f64>>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        serde_json::from_value(json!({})).expect("all fields have defaults")
    }
}

impl AnalysisSettings {
    fn default_pairs() -> usize {
        100
    }
    fn default_validation_pairs() -> usize {
        200
    }
    fn default_epsilon() -> f64 {
        0.1
    }
    fn default_delta() -> f64 {
        0.05
    }
    fn default_window() -> usize {
        5
    }
    fn default_tolerance() -> f64 {
        1e-6
    }
    fn default_step() -> f64 {
        1e-3
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub schema_version: u32,
    pub simulator: SimulatorChoice,
    /// Safety specification; the simulator's own specification if unset.
    #[serde(default)]
    pub spec: Option<String>,
    pub tasks: TaskSettings,
    pub outer_iterations: usize,
    pub falsify: FalsifyBudget,
    #[serde(default)]
    pub beta: BetaSchedule,
    /// Fixed inner budget (`falsify.max_evaluations`) if unset.
    #[serde(default)]
    pub adaptive: Option<AdaptiveBudget>,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

fn parse_document<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| document_error(text, &e))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        found => {
            let found = found.unwrap_or(0);
            let guidance = if found > SCHEMA_VERSION as u64 {
                format!("this {what} was written by a newer release; upgrade to read it")
            } else {
                format!("this {what} predates schema version {SCHEMA_VERSION} (or lacks `schema_version`); regenerate it")
            };
            return Err(Error::SchemaVersion { found, expected: SCHEMA_VERSION as u64, guidance });
        }
    }
    serde_json::from_str(text).map_err(|e| {
        let mut err = document_error(text, &e);
        if let Error::Document { message, .. } = &mut err {
            if message.contains("unknown field") {
                message.push_str(&format!(
                    "; fields beyond schema version {SCHEMA_VERSION} come from a newer release, upgrade to read this {what}"
                ));
            }
        }
        err
    })
}

/// Converts serde_json's line/column into a byte offset.
fn document_error(text: &str, e: &serde_json::Error) -> Error {
    let offset = if e.line() == 0 {
        0
    } else {
        text.split_inclusive('\n').take(e.line() - 1).map(str::len).sum::<usize>() + e.column().saturating_sub(1)
    };
    Error::Document { offset: offset.min(text.len()), message: e.to_string() }
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: CampaignConfig = parse_document(text, "configuration")?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0 {
            return Err(Error::invalid("outer_iterations must be >= 1"));
        }
        if self.tasks.count == 0 || self.tasks.per_task == 0 {
            return Err(Error::invalid("tasks.count and tasks.per_task must be >= 1"));
        }
        if self.tasks.weights.as_ref().is_some_and(|w| w.len() != self.tasks.count) {
            return Err(Error::invalid("tasks.weights needs one entry per task"));
        }
        self.falsify.validate()?;
        self.beta.validate()?;
        if let Some(a) = &self.adaptive {
            if !(a.scale >= 0.0 && a.sigma_threshold >= 0.0) {
                return Err(Error::invalid("adaptive scale and threshold must be >= 0"));
            }
            self.falsify.clone().with_budget(a.base_budget).validate()?;
        }
        Ok(())
    }

    fn phi(&self, sim: &dyn Simulator) -> Result<SafetySpec> {
        let text = self
            .spec
            .as_deref()
            .or(sim.spec().spec_of_record.as_deref())
            .ok_or_else(|| Error::invalid("no safety specification given and the simulator has none"))?;
        SafetySpec::parse(text)
    }

    fn inner_budget(&self, sigma: f64, max_sigma: f64) -> FalsifyBudget {
        match &self.adaptive {
            Some(a) => self.falsify.clone().with_budget(a.budget(sigma, max_sigma)),
            None => self.falsify.clone(),
        }
    }
}

/// Task `i` covers slab `i` of the first environment dimension, with
/// `per_task` Latin hypercube parameters inside it.
pub fn make_tasks(space: &EnvironmentSpace, settings: &TaskSettings) -> Result<Vec<Task>> {
    if let Some(w) = &settings.weights {
        if w.len() != settings.count {
            return Err(Error::invalid(format!("{} task weights given for {} tasks", w.len(), settings.count)));
        }
    }
    let seed = Seed(settings.seed);
    let (lo, hi) = (space.lower()[0], space.upper()[0]);
    let width = (hi - lo) / settings.count as f64;
    (0..settings.count)
        .map(|i| {
            let mut lower = space.lower().to_vec();
            let mut upper = space.upper().to_vec();
            lower[0] = lo + i as f64 * width;
            upper[0] = if i + 1 == settings.count { hi } else { lo + (i + 1) as f64 * width };
            let slab = EnvironmentSpace::new(space.names().to_vec(), lower, upper)?;
            let task = Task::sample(format!("task{i}"), slab, settings.per_task, seed.derive("tasks", i as u64))?;
            match &settings.weights {
                Some(w) => task.with_weight(w[i]),
                None => Ok(task),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationCalls {
    pub falsify_low: u64,
    pub loss_high: u64,
    pub loss_low: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationRecord {
    pub t: usize,
    pub fidelity: Vec<f64>,
    /// Mean loss per evaluation; `None` if the evaluation failed.
    pub loss: Option<f64>,
    pub loss_terms: usize,
    pub stddev: f64,
    pub max_stddev: f64,
    pub inner_budget: usize,
    pub inner_evaluations: usize,
    pub counterexample_found: bool,
    pub falsification_failed: bool,
    pub robustness: Option<f64>,
    pub counterexample: Option<Vec<f64>>,
    pub inner_trace: Vec<f64>,
    /// Relative to the best loss of the whole run.
    pub regret: f64,
    pub cumulative_regret: f64,
    pub counterexample_set_size: usize,
    pub calls: IterationCalls,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counterexample {
    pub config: Vec<f64>,
    pub robustness: f64,
    pub iteration: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallTotals {
    pub high_calls: u64,
    pub low_calls: u64,
    pub falsify_low_calls: u64,
    pub loss_high_calls: u64,
    pub loss_low_calls: u64,
    /// Calls spent re-scoring visited settings and the baseline.
    pub final_high_calls: u64,
    pub final_low_calls: u64,
}

/// `sum_t n * K1_t` against `n * mean(K1) * K2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Accounting {
    pub n: u64,
    pub k1_mean: f64,
    pub k2: u64,
    pub predicted: f64,
    pub observed: u64,
}

impl Accounting {
    pub fn holds(&self) -> bool {
        (self.predicted - self.observed as f64).abs() <= 1e-9 * self.predicted.max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSummary {
    pub lipschitz_env: LipschitzEstimate,
    pub lipschitz_loss: LipschitzEstimate,
    pub sample_plan: SampleComplexityPlan,
    pub outer_convergence: Option<ConvergenceReport>,
    pub inner_convergence: Option<ConvergenceReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignResult {
    pub schema_version: u32,
    pub simulator: String,
    pub spec: String,
    pub seed: u64,
    pub best_fidelity: FidelitySetting,
    /// Mean aggregate loss at `best_fidelity` over the final evaluation set.
    pub best_loss: f64,
    pub baseline_fidelity: FidelitySetting,
    pub baseline_loss: f64,
    pub records: Vec<IterationRecord>,
    pub counterexamples: Vec<Counterexample>,
    pub regret: RegretTrace,
    pub totals: CallTotals,
    pub accounting: Accounting,
    pub analysis: AnalysisSummary,
}

impl CampaignResult {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_document(text, "result")
    }
}

pub fn save_result(result: &CampaignResult, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(result)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_result(path: &Path) -> Result<CampaignResult> {
    CampaignResult::from_json(&std::fs::read_to_string(path)?)
}

/// Single-writer JSONL event log; timestamps live only here.
struct EventLog {
    out: Option<BufWriter<File>>,
}

impl EventLog {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let out = match dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                Some(BufWriter::new(File::create(d.join("events.jsonl"))?))
            }
            None => None,
        };
        Ok(EventLog { out })
    }

    fn emit(&mut self, kind: &str, body: serde_json::Value) -> Result<()> {
        if let Some(out) = &mut self.out {
            let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
            let line = json!({ "event": kind, "timestamp": ts, "data": body });
            writeln!(out, "{line}")?;
            out.flush()?;
        }
        Ok(())
    }
}

/// Runs the joint loop and, if `config.output_dir` is set, writes
/// `events.jsonl` and `result.json` there.
pub fn run_joint(config: &CampaignConfig) -> Result<CampaignResult> {
    config.validate()?;
    let sim = config.simulator.resolve()?;
    let mut log = EventLog::open(config.output_dir.as_deref())?;
    log.emit("start", serde_json::to_value(config)?)?;
    match joint_loop(config, sim.as_ref(), &mut log) {
        Ok(result) => {
            log.emit("finish", json!({ "best_loss": result.best_loss, "totals": result.totals }))?;
            if let Some(dir) = &config.output_dir {
                save_result(&result, &dir.join("result.json"))?;
            }
            Ok(result)
        }
        Err(e) => {
            log.emit("error", json!({ "message": e.to_string() }))?;
            Err(e)
        }
    }
}

fn joint_loop(config: &CampaignConfig, sim: &dyn Simulator, log: &mut EventLog) -> Result<CampaignResult> {
    let sim = CountingSimulator::new(sim);
    let phi = config.phi(&sim)?;
    let spec = sim.spec();
    let tasks = make_tasks(&spec.environment_space, &config.tasks)?;
    let seed = Seed(config.seed);
    let loss_seed = seed.derive("campaign/loss", 0);
    let options = BoOptions { schedule: config.beta, ..BoOptions::default() };
    let mut opt = FidelityOptimizer::new(spec.fidelity_space.clone(), options, seed.derive("campaign/bo", 0))?;

    let mut cex: Vec<Counterexample> = Vec::new();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut totals = CallTotals::default();

    for _ in 0..config.outer_iterations {
        let p = opt.propose()?;
        let t = p.t;
        let budget = config.inner_budget(p.stddev, p.max_stddev);
        let before = sim.counts();
        let inner = match falsify(&sim, &phi, &p.fidelity, &budget, seed.derive("campaign/falsify", t as u64)) {
            Ok(r) => Some(r),
            Err(Error::FalsificationFailed(msg)) => {
                log::warn!("falsification failed at iteration {t}: {msg}");
                None
            }
            Err(e) => return Err(e),
        };
        let after_falsify = sim.counts();
        if let Some(r) = inner.as_ref().filter(|r| r.counterexample_found) {
            cex.push(Counterexample {
                config: r.best_config.values().to_vec(),
                robustness: r.best_robustness.value(),
                iteration: t,
            });
            cex.sort_by(|a, b| a.robustness.total_cmp(&b.robustness).then(a.iteration.cmp(&b.iteration)));
            cex.truncate(MAX_COUNTEREXAMPLES);
        }
        let extra = cex_configs(&spec.environment_space, &cex)?;
        let loss = match aggregate_loss(&sim, &p.fidelity, &tasks, &extra, loss_seed) {
            Ok(l) => Some(l),
            Err(e @ Error::Evaluation { .. }) => {
                log::warn!("loss evaluation failed at iteration {t}: {e}");
                None
            }
            Err(e) => return Err(e),
        };
        opt.observe(&p.fidelity, loss.map(|l| l.mean));
        let after_loss = sim.counts();
        let f_calls = after_falsify.since(&before);
        let l_calls = after_loss.since(&after_falsify);

        let trace = RegretTrace::from_losses(opt.history(), None);
        let last = trace.records.last().expect("just observed");
        let record = IterationRecord {
            t,
            fidelity: p.fidelity.values().to_vec(),
            loss: loss.map(|l| l.mean),
            loss_terms: tasks.iter().map(|t| t.params().len()).sum::<usize>() + extra.len(),
            stddev: p.stddev,
            max_stddev: p.max_stddev,
            inner_budget: budget.max_evaluations,
            inner_evaluations: inner.as_ref().map_or(0, |r| r.evaluations_used),
            counterexample_found: inner.as_ref().is_some_and(|r| r.counterexample_found),
            falsification_failed: inner.is_none(),
            robustness: inner.as_ref().map(|r| r.best_robustness.value()),
            counterexample: inner.as_ref().map(|r| r.best_config.values().to_vec()),
            inner_trace: inner.as_ref().map_or_else(Vec::new, |r| r.trace.clone()),
            regret: last.instantaneous,
            cumulative_regret: last.cumulative,
            counterexample_set_size: extra.len(),
            calls: IterationCalls { falsify_low: f_calls.low_calls, loss_high: l_calls.high_calls, loss_low: l_calls.low_calls },
        };
        totals.falsify_low_calls += f_calls.low_calls;
        totals.loss_high_calls += l_calls.high_calls;
        totals.loss_low_calls += l_calls.low_calls;
        log.emit("iteration", serde_json::to_value(&record)?)?;
        records.push(record);
    }

    // Re-score every visited setting and the baseline on the final set.
    let before_final = sim.counts();
    let extra = cex_configs(&spec.environment_space, &cex)?;
    let mut visited: Vec<FidelitySetting> = Vec::new();
    for (f, _) in opt.history() {
        let f = spec.fidelity_space.clamp(f.clone());
        if !visited.contains(&f) {
            visited.push(f);
        }
    }
    let mut best: Option<(FidelitySetting, f64)> = None;
    for f in visited {
        let l = match aggregate_loss(&sim, &f, &tasks, &extra, loss_seed) {
            Ok(l) => l.mean,
            Err(Error::Evaluation { .. }) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| l < b.1) {
            best = Some((f, l));
        }
    }
    let (best_fidelity, best_loss) = best.ok_or_else(|| Error::Numerical("no fidelity setting could be evaluated".into()))?;
    let baseline_fidelity = spec.fidelity_space.uniform(0.5);
    let baseline_loss = aggregate_loss(&sim, &baseline_fidelity, &tasks, &extra, loss_seed)?.mean;
    let final_calls = sim.counts().since(&before_final);
    totals.final_high_calls = final_calls.high_calls;
    totals.final_low_calls = final_calls.low_calls;
    let all: SimCounts = sim.counts();
    totals.high_calls = all.high_calls;
    totals.low_calls = all.low_calls;

    let regret = RegretTrace::from_losses(opt.history(), None);
    for (rec, r) in records.iter_mut().zip(&regret.records) {
        rec.regret = r.instantaneous;
        rec.cumulative_regret = r.cumulative;
    }

    let k2 = records.len() as u64;
    let k1_total: usize = records.iter().map(|r| r.inner_evaluations).sum();
    let n = config.falsify.samples_per_eval as u64;
    let k1_mean = k1_total as f64 / k2 as f64;
    let accounting = Accounting { n, k1_mean, k2, predicted: n as f64 * k1_mean * k2 as f64, observed: totals.falsify_low_calls };

    let analysis = summarize(config, &sim, &phi, &tasks, &best_fidelity, &records, seed)?;
    Ok(CampaignResult {
        schema_version: SCHEMA_VERSION,
        simulator: spec.id.clone(),
        spec: phi.to_string(),
        seed: config.seed,
        best_fidelity,
        best_loss,
        baseline_fidelity,
        baseline_loss,
        records,
        counterexamples: cex,
        regret,
        totals,
        accounting,
        analysis,
    })
}

fn cex_configs(space: &EnvironmentSpace, cex: &[Counterexample]) -> Result<Vec<EnvironmentConfig>> {
    cex.iter().map(|c| space.config(c.config.clone())).collect()
}

fn summarize(
    config: &CampaignConfig,
    sim: &dyn Simulator,
    phi: &SafetySpec,
    tasks: &[Task],
    best: &FidelitySetting,
    records: &[IterationRecord],
    seed: Seed,
) -> Result<AnalysisSummary> {
    let a = &config.analysis;
    let quiet = sim.spec().mapping.without_noise(&sim.spec().fidelity_space, best);
    let lipschitz_env = estimate_lipschitz_env(sim, phi, &quiet, a.pairs, None, seed.derive("campaign/lip-env", 0))?;
    let lipschitz_loss = estimate_lipschitz_loss(sim, tasks, a.pairs, seed.derive("campaign/lip-loss", 0))?;
    let k2 = records.len() as u64;
    let k1 = (records.iter().map(|r| r.inner_evaluations as u64).sum::<u64>()).div_ceil(k2);
    let sample_plan =
        SampleComplexityPlan::new(a.epsilon, a.delta, &[lipschitz_env.constant, lipschitz_loss.constant], k1, k2)?;
    let outer: Vec<f64> = records.iter().filter_map(|r| r.loss).collect();
    let inner = records.iter().rev().find(|r| !r.inner_trace.is_empty()).map(|r| r.inner_trace.clone());
    let conv = |trace: &[f64]| convergence_report(trace, a.window, a.tolerance).ok();
    Ok(AnalysisSummary {
        lipschitz_env,
        lipschitz_loss,
        sample_plan,
        outer_convergence: conv(&outer),
        inner_convergence: inner.as_deref().and_then(conv),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub simulator: String,
    pub spec: String,
    pub fidelity: FidelitySetting,
    pub lipschitz_env: LipschitzEstimate,
    pub lipschitz_env_validation: LipschitzValidation,
    pub lipschitz_fidelity: LipschitzEstimate,
    pub lipschitz_fidelity_validation: LipschitzValidation,
    pub lipschitz_loss: LipschitzEstimate,
    pub sensitivity: SensitivityReport,
    /// Sensitivity with `e*` re-optimized at each stencil point.
    pub sensitivity_reoptimized: Vec<f64>,
    pub loss_gradient: Vec<f64>,
    pub sample_plan: SampleComplexityPlan,
    pub inner_convergence: Option<ConvergenceReport>,
}

/// Standalone estimates at the configured fidelity setting, with the
/// sample-size plan taken at the configured loop lengths.
pub fn run_analysis(config: &CampaignConfig) -> Result<AnalysisReport> {
    config.validate()?;
    let sim = config.simulator.resolve()?;
    let sim = sim.as_ref();
    let phi = config.phi(sim)?;
    let spec = sim.spec();
    let a = &config.analysis;
    let seed = Seed(config.seed);
    let f = match &a.fidelity {
        Some(v) => spec.fidelity_space.setting(v.clone())?,
        None => spec.fidelity_space.uniform(0.5),
    };
    let tasks = make_tasks(&spec.environment_space, &config.tasks)?;
    let budget = config.falsify.clone();

    let env_seed = seed.derive("analyze/lip-env", 0);
    let lipschitz_env = estimate_lipschitz_env(sim, &phi, &f, a.pairs, a.repeats, env_seed)?;
    let lipschitz_env_validation =
        validate_lipschitz_env(sim, &phi, &f, &lipschitz_env, a.validation_pairs, a.repeats, env_seed)?;
    let inner = falsify(sim, &phi, &f, &budget, seed.derive("analyze/falsify", 0))?;
    let fid_seed = seed.derive("analyze/lip-fid", 0);
    let lipschitz_fidelity = estimate_lipschitz_fidelity(sim, &phi, &inner.best_config, a.pairs, fid_seed)?;
    let lipschitz_fidelity_validation =
        validate_lipschitz_fidelity(sim, &phi, &inner.best_config, &lipschitz_fidelity, a.validation_pairs, fid_seed)?;
    let lipschitz_loss = estimate_lipschitz_loss(sim, &tasks, a.pairs, seed.derive("analyze/lip-loss", 0))?;
    let sens = sensitivity(sim, &phi, &f, a.step, &budget, a.repeats, seed.derive("analyze/sensitivity", 0))?;
    let sensitivity_reoptimized =
        reoptimized_sensitivity(sim, &phi, &sens, &budget, seed.derive("analyze/sensitivity", 0))?;
    let loss_gradient = outer_loss_gradient(sim, &tasks, &f, a.step, seed.derive("analyze/gradient", 0))?;
    let sample_plan = SampleComplexityPlan::new(
        a.epsilon,
        a.delta,
        &[lipschitz_env.constant, lipschitz_loss.constant],
        budget.max_evaluations as u64,
        config.outer_iterations as u64,
    )?;
    Ok(AnalysisReport {
        simulator: spec.id.clone(),
        spec: phi.to_string(),
        fidelity: f,
        lipschitz_env,
        lipschitz_env_validation,
        lipschitz_fidelity,
        lipschitz_fidelity_validation,
        lipschitz_loss,
        sensitivity: sens,
        sensitivity_reoptimized,
        loss_gradient,
        sample_plan,
        inner_convergence: convergence_report(&inner.trace, a.window, a.tolerance).ok(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::invalid(format!("unknown report format `{other}` (md or csv)"))),
        }
    }
}

/// A rendered report: named files and their contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub files: Vec<(String, String)>,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("({})", parts.join(", "))
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "failed".to_string(), |x| format!("{x:.6e}"))
}

fn markdown(r: &CampaignResult) -> String {
    let mut s = String::new();
    s.push_str(&format!("# Campaign report: {}\n\n", r.simulator));
    s.push_str(&format!("Specification: `{}`  \nSeed: {}\n\n", r.spec, r.seed));
    s.push_str("## Best fidelity\n\n");
    s.push_str(&format!(
        "- f* = {} with mean loss {:.6e}\n- baseline {} with mean loss {:.6e}\n\n",
        fmt_vec(r.best_fidelity.values()),
        r.best_loss,
        fmt_vec(r.baseline_fidelity.values()),
        r.baseline_loss
    ));
    s.push_str("## Iterations\n\n");
    s.push_str("| t | fidelity | loss | inner budget | evaluations | robustness | counterexample | r_t | R_T |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for rec in &r.records {
        let flag = if rec.falsification_failed {
            "failed".to_string()
        } else {
            rec.counterexample_found.to_string()
        };
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {:.4e} | {:.4e} |\n",
            rec.t,
            fmt_vec(&rec.fidelity),
            opt_num(rec.loss),
            rec.inner_budget,
            rec.inner_evaluations,
            opt_num(rec.robustness),
            flag,
            rec.regret,
            rec.cumulative_regret
        ));
    }
    s.push_str("\n## Counterexamples\n\n| iteration | configuration | robustness |\n|---|---|---|\n");
    for c in &r.counterexamples {
        s.push_str(&format!("| {} | {} | {:.6e} |\n", c.iteration, fmt_vec(&c.config), c.robustness));
    }
    let failed = r.records.iter().filter(|x| x.falsification_failed).count();
    s.push_str("\n## Regret\n\n");
    s.push_str(&format!(
        "- cumulative regret R_T = {:.6e} over {} iterations\n- reference: {} ({:.6e})\n- iterations with failed falsification (no loss penalty): {}\n",
        r.regret.total(),
        r.regret.len(),
        if r.regret.reference_is_exact { "exact optimum" } else { "best observed (proxy)" },
        r.regret.reference_loss,
        failed
    ));
    let a = &r.analysis;
    s.push_str("\n## Analysis\n\n");
    s.push_str(&format!("- Lipschitz constant in e: {:.6e} ({} pairs)\n", a.lipschitz_env.constant, a.lipschitz_env.pairs_used));
    s.push_str(&format!("- Lipschitz constant of the loss: {:.6e} ({} pairs)\n", a.lipschitz_loss.constant, a.lipschitz_loss.pairs_used));
    let p = &a.sample_plan;
    s.push_str(&format!(
        "- sample plan: eps {}, delta {}, L {:.4e}: n = {}, K1 = {}, K2 = {}, N = {}\n",
        p.epsilon, p.delta, p.lipschitz, p.n_per_iteration, p.k1, p.k2, p.total_samples
    ));
    for (name, c) in [("outer", &a.outer_convergence), ("inner", &a.inner_convergence)] {
        match c {
            Some(c) => s.push_str(&format!("- {name} loop converged: {} (gap {:.3e}, window {})\n", c.converged, c.gap, c.window)),
            None => s.push_str(&format!("- {name} loop convergence: trace too short\n")),
        }
    }
    s.push_str(&format!(
        "\n## Simulator calls\n\n- high fidelity: {}\n- low fidelity: {}\n",
        r.totals.high_calls, r.totals.low_calls
    ));
    s
}

fn to_csv<I, R>(header: &[String], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Regret curve as CSV: `t, f_0.., loss, r_t, R_T`.
pub fn regret_csv(trace: &RegretTrace) -> Result<String> {
    let dim = trace.records.first().map_or(0, |r| r.fidelity.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|k| format!("f_{k}")));
    header.extend(["loss", "r_t", "R_T"].map(String::from));
    to_csv(
        &header,
        trace.records.iter().map(|r| {
            let mut row = vec![r.t.to_string()];
            row.extend(r.fidelity.iter().map(|x| x.to_string()));
            row.push(r.loss.map_or_else(String::new, |l| l.to_string()));
            row.push(r.instantaneous.to_string());
            row.push(r.cumulative.to_string());
            row
        }),
    )
}

fn csv_bundle(r: &CampaignResult) -> Result<Vec<(String, String)>> {
    let inner_header: Vec<String> = ["t", "generation", "best_robustness"].map(String::from).to_vec();
    let inner = to_csv(
        &inner_header,
        r.records.iter().flat_map(|rec| {
            rec.inner_trace.iter().enumerate().map(move |(g, v)| vec![rec.t.to_string(), g.to_string(), v.to_string()])
        }),
    )?;
    let iter_header: Vec<String> =
        ["t", "loss", "inner_evaluations", "falsify_low_calls", "loss_high_calls", "loss_low_calls", "counterexample_found"]
            .map(String::from)
            .to_vec();
    let iterations = to_csv(
        &iter_header,
        r.records.iter().map(|rec| {
            vec![
                rec.t.to_string(),
                rec.loss.map_or_else(String::new, |l| l.to_string()),
                rec.inner_evaluations.to_string(),
                rec.calls.falsify_low.to_string(),
                rec.calls.loss_high.to_string(),
                rec.calls.loss_low.to_string(),
                rec.counterexample_found.to_string(),
            ]
        }),
    )?;
    Ok(vec![
        ("regret.csv".into(), regret_csv(&r.regret)?),
        ("inner_traces.csv".into(), inner),
        ("iterations.csv".into(), iterations),
    ])
}

pub fn report(result: &CampaignResult, format: ReportFormat) -> Result<Document> {
    Ok(Document {
        files: match format {
            ReportFormat::Markdown => vec![("report.md".into(), markdown(result))],
            ReportFormat::Csv => csv_bundle(result)?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(outer: usize) -> CampaignConfig {
        CampaignConfig::from_json(&format!(
            r#"{{
                "schema_version": 1,
                "simulator": {{"builtin": "braking"}},
                "tasks": {{"count": 2, "per_task": 2, "seed": 3}},
                "outer_iterations": {outer},
                "falsify": {{"max_evaluations": 200, "population": 20}},
                "adaptive": {{"base_budget": 100, "scale": 1.0}},
                "analysis": {{"pairs": 20}},
                "seed": 5
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn adaptive_budget_is_monotone() {
        let a = AdaptiveBudget { base_budget: 100, scale: 2.0, sigma_threshold: 0.3 };
        assert_eq!(a.budget(0.1, 1.0), 100);
        assert_eq!(a.budget(1.0, 1.0), 300);
        assert_eq!(a.budget(0.5, 0.0), 100);
        let b: Vec<usize> = (0..=100).map(|i| a.budget(i as f64 / 100.0, 1.0)).collect();
        assert!(b.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn tasks_partition_the_first_dimension() {
        let space = EnvironmentSpace::new(vec!["a", "b"], vec![0.0, 0.0], vec![10.0, 1.0]).unwrap();
        let tasks = make_tasks(&space, &TaskSettings { count: 4, per_task: 3, seed: 1, weights: None }).unwrap();
        assert_eq!(tasks.len(), 4);
        for (i, t) in tasks.iter().enumerate() {
            assert_eq!(t.params().len(), 3);
            for p in t.params() {
                assert!(p.values()[0] >= 2.5 * i as f64 && p.values()[0] <= 2.5 * (i + 1) as f64);
            }
        }
    }

    #[test]
    fn task_weights_are_applied_and_checked() {
        let space = EnvironmentSpace::unit(2).unwrap();
        let mut settings = TaskSettings { count: 2, per_task: 1, seed: 1, weights: Some(vec![0.5, 2.0]) };
        let tasks = make_tasks(&space, &settings).unwrap();
        assert_eq!(tasks.iter().map(Task::weight).collect::<Vec<_>>(), vec![0.5, 2.0]);
        settings.weights = Some(vec![1.0]);
        assert!(make_tasks(&space, &settings).is_err());
    }

    #[test]
    fn config_rejections() {
        let mut c = config(1);
        c.outer_iterations = 0;
        assert!(c.validate().is_err());
        let err = CampaignConfig::from_json(r#"{"schema_version": 2}"#).unwrap_err();
        assert!(matches!(err, Error::SchemaVersion { .. }));
        let err = CampaignConfig::from_json(r#"{"schema_version": 1, "bogus": 1}"#).unwrap_err();
        assert!(matches!(err, Error::Document { .. }));
    }

    #[test]
    fn single_iteration_campaign() {
        let r = run_joint(&config(1)).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.regret.total(), r.records[0].regret);
        assert!(r.accounting.holds());
        let md = &report(&r, ReportFormat::Markdown).unwrap().files[0].1;
        assert!(md.contains("| 1 |"));
    }

    #[test]
    fn result_round_trip_and_errors() {
        let r = run_joint(&config(3)).unwrap();
        let text = serde_json::to_string_pretty(&r).unwrap();
        assert_eq!(CampaignResult::from_json(&text).unwrap(), r);
        match CampaignResult::from_json(&text[..text.len() / 2]) {
            Err(Error::Document { offset, .. }) => assert!(offset > 0 && offset <= text.len() / 2),
            other => panic!("unexpected {other:?}"),
        }
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["extra_field"] = json!(1);
        let next = v.to_string();
        match CampaignResult::from_json(&next) {
            Err(Error::Document { message, .. }) => assert!(message.contains("newer release")),
            other => panic!("unexpected {other:?}"),
        }
        v["schema_version"] = json!(2);
        assert!(matches!(CampaignResult::from_json(&v.to_string()), Err(Error::SchemaVersion { .. })));
    }
}
