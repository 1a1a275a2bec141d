//! Command-line driver for the interest-modelling pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use hsuga::config::ABLATIONS;
use hsuga::eval::EvalGroup;
use hsuga::pipeline::{sweep, Outcome};
use hsuga::{Error, Pipeline, RunConfig, Stage};

#[derive(Parser, Debug)]
#[command(name = "hsuga", version, about = "Stage-wise interest modelling and group-aware alignment pipeline")]
struct Cli {
    /// Config file (`key = value` lines under `[section]` headers).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run with this single seed instead of `eval.seeds`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Re-run the requested stage even if it already completed.
    #[arg(long, global = true)]
    force: bool,

    /// Produce missing upstream stages instead of failing.
    #[arg(long, global = true)]
    auto: bool,

    /// Override a config value, e.g. `--set gaa.alpha=0.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Apply a named ablation (see the list below). Repeatable.
    #[arg(long, global = true, value_name = "NAME")]
    ablation: Vec<String>,

    /// Print the effective config and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Load or generate the corpus and drop users with fewer than 3 interactions.
    Ingest,
    /// Infer stage-wise interest traces with the configured chat backend.
    Hsu,
    /// Embed each user's final interest summary.
    Embed,
    /// Assign activity groups and retrieve filtered neighbor sets.
    Group,
    /// Train one model per seed.
    Train,
    /// Evaluate the trained models and write the averaged report.
    Eval,
    /// Run the split x percentile and stage-length robustness grids.
    Sweep,
}

fn ablation_help() -> String {
    let mut text = String::from("Ablations (--ablation NAME sets exactly one flag):\n");
    for (name, flag, what) in ABLATIONS {
        text.push_str(&format!("  {name:<22} {flag} = true   {what}\n"));
    }
    text.push_str("\nExit codes: 2 config, 3 input/io, 4 missing upstream stage, 5 backend, 6 internal, 7 divergence.");
    text
}

fn build_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        config.apply_override(o)?;
    }
    for a in &cli.ablation {
        config.apply_ablation(a)?;
    }
    if let Some(seed) = cli.seed {
        config.eval.seeds = vec![seed];
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = build_config(cli)?;
    if cli.print_config {
        print!("{}", config.render());
        return Ok(());
    }
    let stage = match cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Hsu => Stage::Hsu,
        Command::Embed => Stage::Embed,
        Command::Group => Stage::Group,
        Command::Train => Stage::Train,
        Command::Eval => Stage::Eval,
        Command::Sweep => {
            let (dir, cells) = sweep(&config, cli.force)?;
            println!("{:<24} {:>12} {:>12}", "cell", "overall", "tail_user");
            for c in &cells {
                let cell = |g| c.report.ndcg(g).map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                println!("{:<24} {:>12} {:>12}", c.label, cell(EvalGroup::Overall), cell(EvalGroup::TailUser));
            }
            println!("{} reports; summary in {}", cells.len(), dir.join(hsuga::pipeline::SWEEP_FILE).display());
            return Ok(());
        }
    };
    let pipeline = Pipeline::new(config, cli.force, cli.auto)?;
    let outcome = pipeline.run(stage)?;
    if stage == Stage::Eval {
        print!("{}", pipeline.load_report()?.render_table());
    }
    let verb = if outcome == Outcome::Ran { "done" } else { "up to date" };
    println!("{}: {verb} in {}", stage.name(), pipeline.dir().display());
    println!("digest {}", pipeline.digest()?);
    Ok(())
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(ablation_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
