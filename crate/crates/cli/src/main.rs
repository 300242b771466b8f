mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{LearnerKind, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "synuse", version, about = "Score, rank and train on synthetic image subsets")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate embedding files, or convert a CSV of vectors into one.
    Ingest(IngestArgs),
    /// Per-image usability and baseline metric scores.
    Score(ScoreArgs),
    /// Top-M subsets per arm from a metrics CSV.
    Rank(RankArgs),
    /// Bandit-driven training over ranked subsets.
    BanditRun(BanditArgs),
    /// Attribute pool, prompts and generated images.
    Prompts(PromptArgs),
    /// AUC over the 1/20/50/90/100% dataset proportions.
    ReportAuc(AucArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Embedding files to validate.
    pub files: Vec<PathBuf>,

    /// CSV with header `image_id,class_id,v0,v1,...` to convert.
    #[arg(long, requires_all = ["write", "domain", "extractor", "tag", "num_classes"])]
    pub from_csv: Option<PathBuf>,

    /// Output embedding file for `--from-csv`.
    #[arg(long)]
    pub write: Option<PathBuf>,

    #[arg(long, value_parser = ["real", "synthetic"])]
    pub domain: Option<String>,

    #[arg(long, value_parser = ["midlevel", "highlevel"])]
    pub extractor: Option<String>,

    #[arg(long)]
    pub tag: Option<String>,

    #[arg(long)]
    pub num_classes: Option<u32>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub real_mid: Option<PathBuf>,
    #[arg(long)]
    pub syn_mid: Option<PathBuf>,
    #[arg(long)]
    pub real_high: Option<PathBuf>,
    #[arg(long)]
    pub syn_high: Option<PathBuf>,
    #[arg(long)]
    pub real_images: Option<PathBuf>,
    #[arg(long)]
    pub syn_images: Option<PathBuf>,
    #[arg(long)]
    pub probabilities: Option<PathBuf>,

    /// Comma-separated subset of SSIM,PSNR,IS,FID,DPS,FCS.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,

    /// Real images per class in the FCS prototype.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    /// Long-format `image_id,metric,score` CSV written by `score`.
    #[arg(long)]
    pub metrics_file: Option<PathBuf>,

    /// Comma-separated arm names.
    #[arg(long, value_delimiter = ',')]
    pub arms: Option<Vec<String>>,

    /// Images per arm.
    #[arg(long)]
    pub m: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BanditArgs {
    /// Arms JSON written by `rank`; otherwise arms are ranked from the
    /// configured metrics file.
    #[arg(long)]
    pub arms_file: Option<PathBuf>,

    #[command(flatten)]
    pub rank: RankArgs,

    #[arg(long)]
    pub epochs: Option<u64>,

    #[arg(long)]
    pub patience: Option<u32>,

    /// Keep the no-improvement counter after a switch.
    #[arg(long)]
    pub no_reset_on_switch: bool,

    /// Train each arm once, in index order, before UCB takes over.
    #[arg(long)]
    pub round_robin_warmup: bool,

    #[arg(long, value_enum)]
    pub learner: Option<LearnerKind>,

    /// External learner command line, split on whitespace.
    #[arg(long)]
    pub learner_cmd: Option<String>,

    /// Surrogate per-arm qualities, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub qualities: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct PromptArgs {
    /// Existing attribute pool JSON; skips extraction.
    #[arg(long)]
    pub pool: Option<PathBuf>,

    #[arg(long)]
    pub domain_context: Option<String>,

    #[arg(long)]
    pub n: Option<usize>,

    #[arg(long, value_parser = ["artistic", "photorealistic"])]
    pub style: Option<String>,

    #[arg(long)]
    pub templates: Option<PathBuf>,

    /// Serve provider responses from this fixture directory.
    #[arg(long, conflicts_with = "endpoint")]
    pub fixtures: Option<PathBuf>,

    /// Live provider base URL.
    #[arg(long)]
    pub endpoint: Option<String>,

    /// Write prompts only.
    #[arg(long)]
    pub no_images: bool,
}

#[derive(Args, Debug)]
pub struct AucArgs {
    /// JSON object mapping percent (1, 20, 50, 90, 100) to accuracy.
    pub file: PathBuf,
}

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = resolve_config(&cli)?;
    match cli.command {
        Command::Ingest(args) => commands::ingest(&config, &args),
        Command::Score(args) => commands::score(&mut config, &args),
        Command::Rank(args) => commands::rank(&mut config, &args),
        Command::BanditRun(args) => commands::bandit_run(&mut config, &args),
        Command::Prompts(args) => commands::prompts(&mut config, &args),
        Command::ReportAuc(args) => commands::report_auc(&args),
    }
}

/// 3 for failures of the learner or a provider, 2 for everything else
/// (bad configuration, unreadable or invalid input).
fn exit_code(err: &anyhow::Error) -> u8 {
    let runtime = err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<synuse::Error>(),
            Some(synuse::Error::Learner(_) | synuse::Error::Provider(_))
        )
    });
    if runtime {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
