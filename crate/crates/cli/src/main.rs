use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conceptspace::pipeline::{self, Stage};
use conceptspace::Error;

#[derive(Parser)]
#[command(name = "conceptspace", version, about = "Time-sliced embeddings and team-diversity geometry")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set k=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and normalize the raw corpus.
    Ingest(RunArgs),
    /// Build the vocabulary.
    Vocab(RunArgs),
    /// Count co-occurrences and write PPMI matrices.
    Cooc(RunArgs),
    /// Train the embedding tensor.
    Train(RunArgs),
    /// Write document and creator vectors.
    Project(RunArgs),
    /// Team diversity reports.
    Diversity(RunArgs),
    /// Integration and speculation per project.
    Taxonomy {
        #[arg(long, required_unless_present = "input")]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Score a line-delimited project file directly and print to stdout.
        #[arg(long, conflicts_with = "config")]
        input: Option<PathBuf>,
    },
    /// In-flow versus innovation counts.
    Flow(RunArgs),
    /// Adoption table and regression.
    Adopt(RunArgs),
    /// Every stage.
    Run(RunArgs),
    /// Print the header of a tensor, manifest or report.
    Inspect { path: PathBuf },
}

fn run_stage(args: &RunArgs, stage: Option<Stage>) -> conceptspace::Result<()> {
    let config = pipeline::load_config(&args.config, &args.overrides)?;
    let manifest = match stage {
        Some(s) => pipeline::run_stages(&config, &[s])?,
        None => pipeline::run_pipeline(&config)?,
    };
    let mut out = String::new();
    for s in &manifest.executed {
        out.push_str(&format!("ran      {s}\n"));
    }
    for s in &manifest.skipped {
        out.push_str(&format!("skipped  {s}\n"));
    }
    out.push_str(&format!("outputs in {}\n", config.output_dir.display()));
    emit(&out)
}

/// Write to stdout; a closed pipe downstream is not an error.
fn emit(text: &str) -> conceptspace::Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn execute(command: Command) -> conceptspace::Result<()> {
    match command {
        Command::Ingest(a) => run_stage(&a, Some(Stage::Ingest)),
        Command::Vocab(a) => run_stage(&a, Some(Stage::Vocab)),
        Command::Cooc(a) => run_stage(&a, Some(Stage::Cooc)),
        Command::Train(a) => run_stage(&a, Some(Stage::Train)),
        Command::Project(a) => run_stage(&a, Some(Stage::Project)),
        Command::Diversity(a) => run_stage(&a, Some(Stage::Diversity)),
        Command::Flow(a) => run_stage(&a, Some(Stage::Flow)),
        Command::Adopt(a) => run_stage(&a, Some(Stage::Adopt)),
        Command::Run(a) => run_stage(&a, None),
        Command::Taxonomy { input: Some(path), .. } => {
            let projects = pipeline::read_taxonomy_input(&path)?;
            let mut out = String::new();
            for row in pipeline::taxonomy_rows(&projects)? {
                out.push_str(&serde_json::to_string(&row).expect("row serializes"));
                out.push('\n');
            }
            emit(&out)
        }
        Command::Taxonomy { config, overrides, .. } => {
            let config = config.ok_or_else(|| Error::Config("--config or --input required".into()))?;
            run_stage(&RunArgs { config, overrides }, Some(Stage::Taxonomy))
        }
        Command::Inspect { path } => emit(&pipeline::inspect_artifact(&path)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
