//! `wsc`: train, evaluate and inspect dependency-masked Winograd-schema
//! resolvers.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wsc_core::encoder::PlanKind;
use wsc_core::numcore::MaskMode;

use wsc_cli::commands;
use wsc_cli::config::{LayerSpec, Overrides, RunConfig};
use wsc_cli::error::Result;

#[derive(Parser, Debug)]
#[command(name = "wsc", version, about = "Dependency-masked Winograd-schema resolution")]
struct Cli {
    /// JSON config file with flat keys; flags below override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Mask plan: none, inside or outside.
    #[arg(long, global = true, value_name = "KIND", value_parser = parse_plan)]
    plan: Option<PlanKind>,
    /// How the mask enters attention: additive or multiplicative.
    #[arg(long = "mask-mode", global = true, value_name = "MODE", value_parser = parse_mode)]
    mask_mode: Option<MaskMode>,
    /// Masked layers as POS:T (first, middle or last); outside plans use T
    /// as the number of shared-layer steps.
    #[arg(long, global = true, value_name = "POS:T")]
    layers: Option<LayerSpec>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fine-tune on the training corpus and write a checkpoint.
    Train,
    /// Evaluate a checkpoint and write the metric report.
    Eval,
    /// Print the word- and token-level dependency masks of a schema.
    Mask {
        /// Schema id.
        #[arg(long)]
        id: String,
    },
    /// Fine-tune on random fractions of the training corpus and evaluate each.
    Curve {
        /// Comma-separated fractions in [0, 1].
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_fraction)]
        fractions: Vec<f64>,
    },
    /// Print the subword encoding of a sentence pair.
    Tokenize { a: String, b: String },
    /// List schemas whose word sequences appear in both files.
    OverlapCheck { a: PathBuf, b: PathBuf },
    /// Write a synthetic corpus with parses, vocabulary and config.
    Synth {
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Emit original/switched pairs.
        #[arg(long)]
        paired: bool,
    },
}

fn parse_plan(s: &str) -> std::result::Result<PlanKind, String> {
    match s {
        "none" => Ok(PlanKind::None),
        "inside" => Ok(PlanKind::Inside),
        "outside" => Ok(PlanKind::Outside),
        _ => Err("expected none, inside or outside".into()),
    }
}

fn parse_mode(s: &str) -> std::result::Result<MaskMode, String> {
    s.parse().map_err(|e: wsc_core::Error| e.to_string())
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let f: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&f) {
        Ok(f)
    } else {
        Err(format!("{f} is outside [0, 1]"))
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        plan: cli.plan,
        mask_mode: cli.mask_mode,
        layers: cli.layers,
        out_dir: cli.out.clone(),
    });
    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Mask { id } => commands::mask(&cfg, &id),
        Command::Curve { fractions } => commands::curve(&cfg, &fractions),
        Command::Tokenize { a, b } => commands::tokenize(&cfg, &a, &b),
        Command::OverlapCheck { a, b } => commands::overlap_check(&a, &b).map(|_| ()),
        Command::Synth { count, paired } => commands::synth(&cfg, count, paired).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
