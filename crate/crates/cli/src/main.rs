use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sharpgeo::harness::{self, RunConfig, EXIT_CONFIG};
use sharpgeo::Error;

/// Sharpness-aware training and loss-geometry diagnostics.
#[derive(Parser)]
#[command(name = "sharpgeo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.sgeo and metrics.jsonl.
    Train(Common),
    /// Geometry report of a checkpoint; writes report.json.
    Diagnose(Common),
    /// Filter-normalized 2D loss grid; writes landscape.csv and landscape.json.
    Landscape(Common),
    /// Clean/FGSM/PGD accuracy; writes attack.json.
    Attack(Common),
    /// One training run per value of the configured sweep; writes sweep.json.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to resume from (train) or to analyse (other commands).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> sharpgeo::Result<RunConfig> {
        let mut cfg = RunConfig::from_path(&self.config)?;
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> sharpgeo::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cmd: Command) -> sharpgeo::Result<()> {
    match cmd {
        Command::Train(a) => {
            let cfg = a.load()?;
            let out = harness::cmd_train(&cfg, a.checkpoint.as_deref())?;
            if let Some(last) = out.records.last() {
                println!("{}", serde_json::to_string(last)?);
            }
            eprintln!("wrote {} and {}", out.checkpoint.display(), out.metrics.display());
        }
        Command::Diagnose(a) => {
            let cfg = a.load()?;
            let (report, path) = harness::cmd_diagnose(&cfg, a.checkpoint.as_deref())?;
            print_json(&report)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Landscape(a) => {
            let cfg = a.load()?;
            let (grid, meta) = harness::cmd_landscape(&cfg, a.checkpoint.as_deref())?;
            print_json(&meta)?;
            eprintln!("wrote {} cells to {}", grid.n_cells(), cfg.out_dir.display());
        }
        Command::Attack(a) => {
            let cfg = a.load()?;
            print_json(&harness::cmd_attack(&cfg, a.checkpoint.as_deref())?)?;
        }
        Command::Sweep(a) => {
            let cfg = a.load()?;
            print_json(&harness::cmd_sweep(&cfg)?)?;
        }
    }
    Ok(())
}

fn init_threads() -> sharpgeo::Result<()> {
    let Ok(raw) = std::env::var("SHARPGEO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("SHARPGEO_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match init_threads().and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
