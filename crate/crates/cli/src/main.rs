use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drive_cli::commands::{cmd_ablate, cmd_gen_data, cmd_report, cmd_run, fmt_acc};
use drive_cli::config::ExperimentConfig;
use drive_cli::CliError;
use drive_core::adaptation::Variant;

#[derive(Parser)]
#[command(name = "drive", version, about = "Two-stage source-free domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (flat `section.key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `run.seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, pretrain and adapt for every seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Variant name (full, all-off, entropy, entropy+perturb, no-entropy,
        /// no-perturb, perturb-only, dynamic-eta-only); overrides the
        /// `variant.*` keys.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Run the four-variant ablation ladder over all seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Plot and summarize the metrics under a directory.
    Report {
        /// Directory searched recursively for metrics.jsonl files.
        metrics_dir: PathBuf,
        /// Where plots and the digest go; defaults to `<metrics_dir>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic splits as CSV files.
    GenData {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common, variant } => {
            let mut cfg = load(&common)?;
            if let Some(name) = variant {
                cfg.adapt.variant = Variant::from_name(&name)
                    .ok_or_else(|| CliError::Config(format!("unknown variant `{name}`")))?;
            }
            for r in cmd_run(&cfg)? {
                if let Some(a) = r.accuracies {
                    println!(
                        "{}\tsource {}\tadapted {}",
                        r.run_id,
                        fmt_acc(a.source),
                        fmt_acc(a.adapted)
                    );
                }
            }
        }
        Command::Ablate { common } => {
            let cfg = load(&common)?;
            let (rows, holds) = cmd_ablate(&cfg)?;
            for r in rows {
                println!("{:<16} {:.2} ± {:.2}  step_ok={}", r.variant.name(), r.mean, r.std, r.step_ok);
            }
            println!("ordering holds: {holds}");
        }
        Command::Report { metrics_dir, out } => {
            let out = out.unwrap_or_else(|| metrics_dir.join("report"));
            let s = cmd_report(&metrics_dir, &out)?;
            println!(
                "{} runs, {} records, {} skipped; wrote {}",
                s.runs,
                s.records,
                s.skipped,
                out.display()
            );
        }
        Command::GenData { common } => {
            let cfg = load(&common)?;
            for d in cmd_gen_data(&cfg)? {
                println!("{}", d.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("drive: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
