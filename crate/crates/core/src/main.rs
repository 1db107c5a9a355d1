use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use synthpsych::pipeline::{
    cmd_administer, cmd_analyze, cmd_cluster, cmd_generate_personas, cmd_report, cmd_simulate, PipelineError, Run,
    RunConfig,
};
use synthpsych::transport::TranscriptMode;

#[derive(Parser)]
#[command(name = "synthpsych", version, about = "Synthetic-respondent psychometrics pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory (default: output.root/<run id>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Answer model calls only from this transcript store.
    #[arg(long, global = true, value_name = "STORE", conflicts_with = "record")]
    replay: Option<PathBuf>,
    /// Call the provider and append every exchange to the transcript store.
    #[arg(long, global = true)]
    record: bool,
    /// Master seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overwrite existing stage outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Cohort size (generate-personas, simulate).
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Personas per generation request.
    #[arg(long, global = true)]
    batch: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the persona cohort.
    GeneratePersonas,
    /// Administer the questionnaire to every persona.
    Administer,
    /// Parallel analysis, EFA, CFA and the scree plot.
    Analyze,
    /// Embed personas, cluster them and compare subscales across clusters.
    Cluster,
    /// Sample responses from the planted factor model.
    Simulate,
    /// Write report.md from the run's analysis outputs.
    Report,
}

fn build_run(c: &Common) -> Result<Run, PipelineError> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    if let Some(n) = c.n {
        cfg.cohort.n = n;
        cfg.simulate.n = n;
    }
    if let Some(b) = c.batch {
        cfg.cohort.batch_size = b;
    }
    if let Some(store) = &c.replay {
        cfg.transcript.mode = TranscriptMode::Replay;
        cfg.transcript.path = std::path::absolute(store).map_err(|e| PipelineError::io(store, e))?;
    } else if c.record {
        cfg.transcript.mode = TranscriptMode::Record;
    }
    cfg.validate()?;
    match &c.out {
        Some(dir) => Run::at(dir, cfg, c.force),
        None => Run::from_config(cfg, c.force),
    }
}

fn execute(cmd: Command, c: &Common) -> Result<(), PipelineError> {
    let run = build_run(c)?;
    let outputs = match cmd {
        Command::GeneratePersonas => cmd_generate_personas(&run, &run.gateway()?)?,
        Command::Administer => cmd_administer(&run, &run.gateway()?)?,
        Command::Analyze => cmd_analyze(&run)?,
        Command::Cluster => cmd_cluster(&run, &run.gateway()?)?,
        Command::Simulate => cmd_simulate(&run)?,
        Command::Report => cmd_report(&run)?,
    };
    for (name, _) in outputs {
        println!("{}", run.path(name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
