//! Runs a small joint campaign on the braking benchmark and prints the
//! markdown report. Pass a directory to also write the event log and result.

use fidelity_falsify::campaign::{report, run_joint, CampaignConfig, ReportFormat};

fn main() -> fidelity_falsify::Result<()> {
    let mut config = CampaignConfig::from_json(
        r#"{
            "schema_version": 1,
            "simulator": { "builtin": "braking" },
            "tasks": { "count": 3, "per_task": 2, "seed": 1 },
            "outer_iterations": 10,
            "falsify": { "max_evaluations": 200, "population": 20 },
            "adaptive": { "base_budget": 200 },
            "seed": 5
        }"#,
    )?;
    config.output_dir = std::env::args().nth(1).map(Into::into);
    let result = run_joint(&config)?;
    print!("{}", report(&result, ReportFormat::Markdown)?.files[0].1);
    Ok(())
}
