use std::path::PathBuf;
use std::process::ExitCode;

use aia_experiments::ablation::Axis;
use aia_experiments::commands::{self, Run};
use aia_experiments::config::Seeds;
use aia_experiments::{parse_target, ExpError, ExpResult, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aia", about = "Activation inversion experiments on a simulated training pipeline")]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Force the single-threaded round-robin executor.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the pre-trained model on the public corpus.
    Pretrain,
    /// Fine-tune a copy and write per-layer activation cosine.
    Similarity,
    /// Tapped fine-tune, shadow dataset, attack model, reconstruction.
    Attack {
        /// Reuse the persisted activation dump instead of fine-tuning.
        #[arg(long)]
        from_dump: bool,
    },
    /// Compare True-Prefix, soft-prompt tuning and the attack on PII.
    Baselines {
        /// PII types to extract (default: `[baselines] targets`).
        #[arg(long, value_delimiter = ',')]
        targets: Vec<String>,
    },
    /// Sweep one axis: layer_index, model_size or architecture.
    Ablate { axis: String },
    /// Re-score persisted artifacts.
    Evaluate,
}

fn run(cli: Cli) -> ExpResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = Seeds::from_base(s);
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    if cli.deterministic {
        cfg.pipeline.deterministic = true;
    }
    let axis = match &cli.command {
        Command::Ablate { axis } => Some(axis.parse::<Axis>()?),
        _ => None,
    };
    let r = Run::open(cfg)?;
    let show = |v: serde_json::Value| println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    match cli.command {
        Command::Pretrain => show(serde_json::to_value(commands::cmd_pretrain(&r)?).expect("json")),
        Command::Similarity => show(serde_json::to_value(commands::cmd_similarity(&r)?).expect("json")),
        Command::Attack { from_dump } => show(serde_json::to_value(commands::cmd_attack(&r, from_dump)?).expect("json")),
        Command::Baselines { targets } => {
            let names = if targets.is_empty() {
                r.cfg.baselines.targets.clone()
            } else {
                targets
            };
            let targets = names.iter().map(|t| parse_target(t)).collect::<ExpResult<Vec<_>>>()?;
            show(serde_json::to_value(commands::cmd_baselines(&r, &targets)?).expect("json"))
        }
        Command::Ablate { .. } => {
            let p = commands::cmd_ablate(&r, axis.expect("parsed above"))?;
            println!("{}", p.display());
        }
        Command::Evaluate => show(serde_json::to_value(commands::cmd_evaluate(&r)?).expect("json")),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aia: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &ExpError) -> u8 {
    e.exit_code() as u8
}
