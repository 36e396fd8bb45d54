use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use argprobe_core::runner::{
    aggregate, execute, plan, ExecuteOptions, ExperimentConfig, RunManifest, RunOutcome, RunSpec, RunStatus, Stage,
};
use clap::{Parser, Subcommand};

/// Novel-token probing of masked language models.
///
/// Every subcommand runs the pipeline of each selected run up to and
/// including its stage, resuming from whatever a previous invocation left.
#[derive(Debug, Parser)]
#[command(name = "argprobe", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(short, long, global = true, default_value = "argprobe.toml")]
    config: PathBuf,

    /// Only runs whose id contains this text; may be repeated.
    #[arg(short, long = "run", global = true)]
    runs: Vec<String>,

    /// Replace the config's seeds; may be repeated.
    #[arg(short, long = "seed", global = true)]
    seeds: Vec<u64>,

    /// Print the plan and exit without running anything.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Rerun stages even when a manifest with the same config hash has them.
    #[arg(long, global = true)]
    force: bool,

    /// Override the config's output directory.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Choose argument nouns for each run.
    SelectNouns,
    /// Write fine-tuning, validation, test and probe datasets.
    Generate,
    /// Check that adding the novel tokens leaves every sentence's tokenization intact.
    Verify,
    /// Fine-tune the novel tokens (or the whole model) with early stopping.
    Tune,
    /// Score test and probe sets with the tuned models.
    Eval,
    /// Build per-run tables and geometry analyses.
    Analyze,
    /// Draw per-run plots and aggregate all selected runs.
    Report,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::SelectNouns => Stage::SelectNouns,
            Command::Generate => Stage::Generate,
            Command::Verify => Stage::Verify,
            Command::Tune => Stage::Tune,
            Command::Eval => Stage::Eval,
            Command::Analyze => Stage::Analyze,
            Command::Report => Stage::Report,
        }
    }
}

fn select(cli: &Cli, runs: Vec<RunSpec>) -> Vec<RunSpec> {
    if cli.runs.is_empty() {
        return runs;
    }
    runs.into_iter()
        .filter(|r| cli.runs.iter().any(|f| r.run_id.contains(f.as_str())))
        .collect()
}

fn print_outcome(o: &RunOutcome) {
    let tag = match (&o.error, o.skipped, o.manifest.status) {
        (Some(_), _, RunStatus::GateFailed) => "GATE",
        (Some(_), _, _) => "FAIL",
        (None, true, _) => "skip",
        (None, false, _) => "ok",
    };
    match &o.error {
        Some(e) => println!("{tag:<4} {}  {e}", o.spec.run_id),
        None => println!("{tag:<4} {}", o.spec.run_id),
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let mut cfg = ExperimentConfig::from_path(&cli.config)
        .with_context(|| format!("loading {}", cli.config.display()))?;
    if !cli.seeds.is_empty() {
        cfg.seeds = cli.seeds.clone();
    }
    if let Some(out) = &cli.output {
        cfg.output_dir = out.clone();
    }
    let runs = select(cli, plan(&cfg)?);
    if runs.is_empty() {
        bail!("no planned run matches {:?}", cli.runs);
    }
    let until = cli.command.stage();
    if cli.dry_run {
        println!("{} run(s), stages up to {until}, config {}", runs.len(), &runs[0].config_hash[..12]);
        for r in &runs {
            println!("{}  {}", r.run_id, r.dir(&cfg.output_dir).display());
        }
        return Ok(true);
    }
    let outcomes = execute(&cfg, &runs, ExecuteOptions { until, force: cli.force })?;
    for o in &outcomes {
        print_outcome(o);
    }
    let failed = outcomes.iter().filter(|o| !o.succeeded()).count();
    let gated = outcomes.iter().filter(|o| o.manifest.status == RunStatus::GateFailed).count();
    println!(
        "{} run(s): {} succeeded, {} failed ({} at the tokenization gate)",
        outcomes.len(),
        outcomes.len() - failed,
        failed,
        gated
    );
    let mut ok = failed == 0;
    if until == Stage::Report {
        let manifests: Vec<RunManifest> = outcomes
            .into_iter()
            .filter(|o| o.succeeded())
            .map(|o| o.manifest)
            .collect();
        let out = cfg.output_dir.join("reports").join(cfg.experiment.as_str());
        match aggregate(&manifests, &cfg.output_dir, &out, cfg.analysis.plots) {
            Ok(rep) => println!("aggregated {} run(s) into {}", rep.runs, out.display()),
            Err(e) => {
                eprintln!("report: {e}");
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
