//! `cellsense`: run one pipeline stage of an experiment described by a JSON
//! config. Exit status 0 on success, 1 on a runtime failure, 2 on a usage
//! or configuration error.

mod commands;
mod config;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use context::{Ctx, Overrides};

#[derive(Debug, Parser)]
#[command(name = "cellsense", version, about = "Cell-sentence embedding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON; `${VAR}` is read from the environment).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Embedding provider to use, by config name.
    #[arg(long, global = true, value_name = "NAME")]
    provider: Option<String>,
    /// Keep raw chat requests and responses next to their digests.
    #[arg(long, global = true)]
    store_raw: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Load and split the dataset; write normalized copies.
    Ingest,
    /// Write rendered sentence text per ablation variant.
    Sentences,
    /// Write ablated sentences per configured ablation.
    Ablate,
    /// Fill the embedding cache for every variant and seed.
    Embed,
    /// k-NN classification and clustering scores per ablation.
    KnnEval,
    /// k-means on all baseline embeddings.
    ClusterEval,
    /// Train the classifier head on frozen embeddings.
    TrainHead,
    /// Grid-search and train the two-modality fusion network.
    TrainFusion,
    /// Chat-model reranking or zero-shot classification.
    Rerank,
    /// LIME attributions for the classifier head.
    Lime,
    /// Marker-name embedding similarity table.
    MarkerSim,
    /// Marker matching quiz for a chat model.
    MarkerQuiz,
    /// Collect metrics tables into report.md and report.json.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Ingest => "ingest",
            Self::Sentences => "sentences",
            Self::Ablate => "ablate",
            Self::Embed => "embed",
            Self::KnnEval => "knn-eval",
            Self::ClusterEval => "cluster-eval",
            Self::TrainHead => "train-head",
            Self::TrainFusion => "train-fusion",
            Self::Rerank => "rerank",
            Self::Lime => "lime",
            Self::MarkerSim => "marker-sim",
            Self::MarkerQuiz => "marker-quiz",
            Self::Report => "report",
        }
    }

    fn run(self, ctx: &mut Ctx) -> anyhow::Result<()> {
        match self {
            Self::Ingest => commands::ingest(ctx),
            Self::Sentences => commands::sentences(ctx),
            Self::Ablate => commands::ablate(ctx),
            Self::Embed => commands::embed(ctx),
            Self::KnnEval => commands::knn_eval(ctx),
            Self::ClusterEval => commands::cluster_eval(ctx),
            Self::TrainHead => commands::train_head(ctx),
            Self::TrainFusion => commands::train_fusion(ctx),
            Self::Rerank => commands::rerank(ctx),
            Self::Lime => commands::lime(ctx),
            Self::MarkerSim => commands::marker_sim(ctx),
            Self::MarkerQuiz => commands::marker_quiz(ctx),
            Self::Report => commands::report(ctx),
        }
    }
}

const USAGE: u8 = 2;
const FAILURE: u8 = 1;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Some(path) = &cli.config else {
        eprintln!("error: --config is required\n\nFor more information, try '--help'.");
        return ExitCode::from(USAGE);
    };
    let loaded = match config::load(path) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(USAGE);
        }
    };
    if let Err(e) = loaded.config.validate(&loaded.base_dir) {
        eprint!("error: {e}");
        return ExitCode::from(USAGE);
    }
    if let Some(p) = &cli.provider {
        if !loaded.config.providers.contains_key(p) {
            eprintln!("error: unknown provider {p:?}");
            return ExitCode::from(USAGE);
        }
    }

    let ov = Overrides { out: cli.out.clone(), seed: cli.seed, provider: cli.provider.clone(), store_raw: cli.store_raw };
    let mut ctx = match Ctx::new(loaded, ov, cli.command.name()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(FAILURE);
        }
    };
    let result = cli.command.run(&mut ctx);
    if let Err(e) = ctx.finish(result.is_ok()) {
        log::error!("writing manifest: {e:#}");
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(FAILURE)
        }
    }
}
