//! Command-line orchestration: generate a corpus, train the model roster,
//! run the frozen-evaluation battery, and aggregate reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mdt_cli::commands;
use mdt_cli::manifest::ExperimentManifest;
use mdt_core::analysis::OptimalityStage;

#[derive(Parser)]
#[command(
    name = "mdt-sim",
    about = "Two-stage Markov decision task simulation and analysis workbench",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment manifest (JSON). Omit to use built-in defaults.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel cells (overrides the manifest).
    #[arg(long)]
    jobs: Option<usize>,
    /// Shrink subjects/epochs/trials by the documented desk-scale factors.
    #[arg(long)]
    desk_scale: bool,
    /// Skip cells whose outputs already exist.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus, ground truth, and task suite.
    Gen(RunArgs),
    /// Train every model in the manifest roster.
    Train(RunArgs),
    /// Frozen evaluation of every (subject, model, task) cell plus reports.
    Battery {
        #[command(flatten)]
        run: RunArgs,
        /// Choice-optimality convention for the GLM profiles.
        #[arg(long, value_parser = parse_stage, default_value = "stage1")]
        optimality_stage: OptimalityStage,
    },
    /// Aggregate battery reports into figure-shaped CSVs.
    Report(RunArgs),
    /// Check a dataset file against a task spec.
    Validate {
        /// Behavioral dataset CSV.
        #[arg(long)]
        data: PathBuf,
        /// Task spec JSON.
        #[arg(long)]
        task: PathBuf,
    },
    /// Print the built-in default manifest (a template for --manifest).
    InitManifest {
        /// Apply the desk-scale shrink factors to the template.
        #[arg(long)]
        desk_scale: bool,
    },
}

fn parse_stage(s: &str) -> Result<OptimalityStage, String> {
    match s {
        "stage1" => Ok(OptimalityStage::Stage1),
        "stage2" => Ok(OptimalityStage::Stage2),
        "both" => Ok(OptimalityStage::BothStages),
        other => Err(format!("unknown optimality stage {other:?} (stage1|stage2|both)")),
    }
}

fn load_manifest(args: &RunArgs) -> anyhow::Result<ExperimentManifest> {
    let mut m = match &args.manifest {
        Some(path) => ExperimentManifest::load(path)?,
        None => ExperimentManifest::default(),
    };
    if args.desk_scale {
        m.apply_desk_scale();
    }
    if let Some(jobs) = args.jobs {
        m.jobs = jobs.max(1);
    }
    Ok(m)
}

fn with_pool(jobs: usize, f: impl FnOnce() -> anyhow::Result<()> + Send) -> anyhow::Result<()> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    pool.install(f)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: anyhow::Result<ExitCode> = match cli.command {
        Command::Gen(args) => match load_manifest(&args) {
            Err(e) => {
                eprintln!("manifest error: {e:#}");
                return ExitCode::from(1);
            }
            Ok(m) => commands::gen::run(&m, &args.out).map(|()| ExitCode::SUCCESS),
        },
        Command::Train(args) => match load_manifest(&args) {
            Err(e) => {
                eprintln!("manifest error: {e:#}");
                return ExitCode::from(1);
            }
            Ok(m) => with_pool(m.jobs, || commands::train::run(&m, &args.out, args.resume))
                .map(|()| ExitCode::SUCCESS),
        },
        Command::Battery { run, optimality_stage } => match load_manifest(&run) {
            Err(e) => {
                eprintln!("manifest error: {e:#}");
                return ExitCode::from(1);
            }
            Ok(m) => with_pool(m.jobs, || {
                commands::battery::run(&m, &run.out, run.resume, optimality_stage)
            })
            .map(|()| ExitCode::SUCCESS),
        },
        Command::Report(args) => match load_manifest(&args) {
            Err(e) => {
                eprintln!("manifest error: {e:#}");
                return ExitCode::from(1);
            }
            Ok(m) => commands::report::run(&m, &args.out).map(|()| ExitCode::SUCCESS),
        },
        Command::Validate { data, task } => commands::validate::run(&data, &task).map(|n| {
            if n == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }),
        Command::InitManifest { desk_scale } => {
            let mut m = ExperimentManifest::default();
            if desk_scale {
                m.apply_desk_scale();
            }
            println!("{}", m.to_json());
            Ok(ExitCode::SUCCESS)
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
