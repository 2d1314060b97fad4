use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use fidelity_falsify::bo::{optimize_fidelity, BoOptions};
use fidelity_falsify::campaign::{
    load_result, make_tasks, regret_csv, report, run_analysis, run_joint, CampaignConfig, ReportFormat, TaskSettings,
};
use fidelity_falsify::falsify::{falsify, FalsifyBudget};
use fidelity_falsify::sim::builtin_simulator;
use fidelity_falsify::{Error, SafetySpec, Seed};

const EXIT_INVALID: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_NO_COUNTEREXAMPLE: u8 = 3;

#[derive(Parser)]
#[command(name = "fidelity-falsify", version, about = "Joint falsification and simulator fidelity tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a configuration violating a specification at one fidelity setting.
    Falsify {
        #[arg(long)]
        sim: String,
        /// Specification; the simulator's own if omitted.
        #[arg(long)]
        spec: Option<String>,
        /// Comma-separated normalized knob values; highest fidelity if omitted.
        #[arg(long)]
        fidelity: Option<String>,
        #[arg(long, default_value_t = 1000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Exit with status 3 if no counterexample is found.
        #[arg(long)]
        require_counterexample: bool,
    },
    /// Tune fidelity settings against the high-fidelity simulator.
    TuneFidelity {
        #[arg(long)]
        sim: String,
        #[arg(long, default_value_t = 4)]
        tasks: usize,
        #[arg(long, default_value_t = 3)]
        per_task: usize,
        #[arg(long, default_value_t = 30)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the joint campaign described by a configuration file.
    Joint {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lipschitz, sensitivity and sample-size estimates for a configuration.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a campaign result as markdown (stdout) or a CSV bundle.
    Report {
        #[arg(long)]
        result: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
        /// Directory for CSV files; the result's directory if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Outcome {
    Done,
    NoCounterexample,
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn parse_fidelity(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("fidelity value `{p}`: {e}")).into()))
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Falsify { sim, spec, fidelity, budget, seed, out, require_counterexample } => {
            let sim = builtin_simulator(&sim)?;
            let text = spec.or_else(|| sim.spec().spec_of_record.clone()).ok_or_else(|| {
                Error::InvalidArgument("no --spec given and the simulator has no specification".into())
            })?;
            let phi = SafetySpec::parse(&text)?;
            let space = &sim.spec().fidelity_space;
            let f = match fidelity {
                Some(t) => space.setting(parse_fidelity(&t)?)?,
                None => space.max_fidelity(),
            };
            let result = falsify(sim.as_ref(), &phi, &f, &FalsifyBudget::new(budget), Seed(seed))?;
            write_json(&out, "falsify.json", &result)?;
            println!(
                "best robustness {:.6e} at {:?} after {} evaluations",
                result.best_robustness.value(),
                result.best_config.values(),
                result.evaluations_used
            );
            if require_counterexample && !result.counterexample_found {
                return Ok(Outcome::NoCounterexample);
            }
        }
        Command::TuneFidelity { sim, tasks, per_task, iters, seed, out } => {
            let sim = builtin_simulator(&sim)?;
            let tasks = make_tasks(&sim.spec().environment_space, &TaskSettings { count: tasks, per_task, seed, weights: None })?;
            let result = optimize_fidelity(sim.as_ref(), &tasks, |_| Vec::new(), iters, BoOptions::default(), Seed(seed))?;
            write_json(&out, "tune.json", &result)?;
            std::fs::write(out.join("regret.csv"), regret_csv(&result.regret)?)?;
            println!("best fidelity {:?} with loss {:.6e}", result.best_fidelity.values(), result.best_loss);
        }
        Command::Joint { config, out } => {
            let mut config = CampaignConfig::load(&config)?;
            config.output_dir = Some(out.clone());
            let result = run_joint(&config)?;
            println!(
                "best fidelity {:?}: mean loss {:.6e} (baseline {:.6e}); {} counterexamples; results in {}",
                result.best_fidelity.values(),
                result.best_loss,
                result.baseline_loss,
                result.counterexamples.len(),
                out.display()
            );
        }
        Command::Analyze { config, out } => {
            let config = CampaignConfig::load(&config)?;
            let report = run_analysis(&config)?;
            write_json(&out, "analysis.json", &report)?;
            println!("analysis written to {}", out.join("analysis.json").display());
        }
        Command::Report { result, format, out } => {
            let format: ReportFormat = format.parse()?;
            let loaded = load_result(&result)?;
            let doc = report(&loaded, format)?;
            match format {
                ReportFormat::Markdown => print!("{}", doc.files[0].1),
                ReportFormat::Csv => {
                    let dir = out.unwrap_or_else(|| result.parent().map(Path::to_path_buf).unwrap_or_default());
                    std::fs::create_dir_all(&dir)?;
                    for (name, body) in &doc.files {
                        std::fs::write(dir.join(name), body)?;
                        println!("{}", dir.join(name).display());
                    }
                }
            }
        }
    }
    Ok(Outcome::Done)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::InvalidArgument(_)
            | Error::Parse(_)
            | Error::UnknownChannel(_)
            | Error::IntervalExceedsDuration { .. }
            | Error::OutOfBounds { .. }
            | Error::ChannelMismatch(_)
            | Error::SchemaVersion { .. }
            | Error::Document { .. }
            | Error::Json(_),
        ) => EXIT_INVALID,
        Some(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => EXIT_INVALID,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INVALID) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NoCounterexample) => {
            eprintln!("no counterexample found within the budget");
            ExitCode::from(EXIT_NO_COUNTEREXAMPLE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
