use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use digitforge_cli::{run_pipeline, run_stage, CliError, PipelineConfig, Stage, EXIT_GATE, EXIT_OK};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// All stages, published atomically.
    Run,
    Ingest,
    Mesh,
    Mirror,
    Register,
    Sleeve,
    Mould,
    Export,
    /// Write the synthetic phantom volume and its ground-truth planes.
    Phantom,
}

/// CT-to-mould pipeline for a passive prosthetic finger.
#[derive(Debug, Parser)]
#[command(name = "digitforge", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(failures) if failures.is_empty() => ExitCode::from(EXIT_OK as u8),
        Ok(failures) => {
            for f in &failures {
                eprintln!("gate failed: {f}");
            }
            ExitCode::from(EXIT_GATE as u8)
        }
        Err(e) => {
            eprintln!("digitforge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<Vec<String>, CliError> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set output_dir".into()))?;
    let stage = match args.command {
        Command::Run => {
            let manifest = run_pipeline(&cfg, &out)?;
            println!("wrote {} parts and manifest.json to {}", manifest.parts.len(), out.display());
            return Ok(manifest.failures);
        }
        Command::Ingest => Stage::Ingest,
        Command::Mesh => Stage::Mesh,
        Command::Mirror => Stage::Mirror,
        Command::Register => Stage::Register,
        Command::Sleeve => Stage::Sleeve,
        Command::Mould => Stage::Mould,
        Command::Export => Stage::Export,
        Command::Phantom => Stage::Phantom,
    };
    run_stage(stage, &cfg, &out)
}
