use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "wordmine", version, about = "Few-shot word-image pair mining and evaluation")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// Input files in the layout written by `synth`; each can be overridden.
#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Directory holding units.jsonl, support.json, grids.bin, ...
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    units: Option<PathBuf>,
    #[arg(long)]
    support: Option<PathBuf>,
    #[arg(long)]
    grids: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    splits: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run-length segment a unit corpus.
    Segment {
        #[arg(long)]
        units: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Vocabulary size when the corpus has no header line.
        #[arg(long, default_value_t = wordmine::corpus::DEFAULT_VOCAB_SIZE)]
        vocab: u32,
    },
    /// Rank utterances per class by query-by-example search.
    MineAudio {
        #[arg(long)]
        support: PathBuf,
        #[arg(long)]
        units: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long, default_value_t = wordmine::qbe::DEFAULT_TOP_N)]
        n: usize,
        #[arg(long, default_value = "match=1,mismatch=-1,gap=-1")]
        scoring: String,
        #[arg(long, value_enum, default_value_t = Norm::QueryLength)]
        normalization: Norm,
        /// JSON list of utterance IDs to search (default: every non-support utterance).
        #[arg(long)]
        collection: Option<PathBuf>,
        /// Captions JSON; prints mining precision per class when given.
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank pool images per class by global-embedding similarity.
    MineImage {
        #[arg(long)]
        support: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = wordmine::qbe::DEFAULT_TOP_N)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Agg::Max)]
        aggregation: Agg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair the two rankings into train and validation pairs.
    BuildPairs {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        val_frac: f64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Shuffle both rankings before pairing by rank.
        #[arg(long)]
        shuffle: bool,
        /// Support set whose ground-truth pairs join the training split.
        #[arg(long)]
        support: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attention similarity between audio embeddings and image grids.
    Score {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        audio_id: Option<String>,
        #[arg(long)]
        image_id: Option<String>,
        #[arg(long, value_enum, default_value_t = Clamp::Hard)]
        clamp: Clamp,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Train the projection model on mined pairs.
    TrainToy {
        #[arg(long)]
        pairs: PathBuf,
        /// Training configuration JSON; missing keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the loss and validation history here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Few-shot L-way classification over random episodes.
    EvalClassify {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = wordmine::evalkit::DEFAULT_EPISODES)]
        episodes: usize,
        #[arg(long = "L", default_value_t = 5)]
        l: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Keep images carrying several episode classes in the matching set.
        #[arg(long)]
        multi_label: bool,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precision at N retrieval with averaged queries.
    EvalRetrieve {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = wordmine::evalkit::DEFAULT_QUERIES_PER_CLASS)]
        queries_per_class: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Saliency map IOU against a ground-truth mask.
    Localize {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        quantile: f64,
        #[arg(long)]
        audio_id: Option<String>,
        #[arg(long)]
        image_id: Option<String>,
        /// Write the saliency map as an 8-bit PGM.
        #[arg(long)]
        saliency: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with planting records.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Generator configuration JSON; missing keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Run every stage from segmentation to evaluation.
    Pipeline {
        #[command(flatten)]
        data: DataArgs,
        /// Pipeline configuration JSON, applied over the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Default)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "K")]
        shots: Option<usize>,
        #[arg(long = "L")]
        l: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        n_pos: Option<usize>,
        #[arg(long)]
        n_neg: Option<usize>,
        #[arg(long)]
        scoring: Option<String>,
        #[arg(long)]
        val_frac: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        queries_per_class: Option<usize>,
        #[arg(long)]
        pair_seed: Option<u64>,
        #[arg(long)]
        train_seed: Option<u64>,
        #[arg(long)]
        episode_seed: Option<u64>,
        #[arg(long)]
        retrieval_seed: Option<u64>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Norm {
    QueryLength,
    None,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Agg {
    Max,
    Mean,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Clamp {
    Hard,
    Sigmoid,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    Default,
    Synthetic,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<wordmine::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

/// The cause chain, skipping causes whose text a wrapper already printed.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let threads = cli.threads;
    let result = wordmine::pipeline::with_threads(threads, move || commands::run(cli.command))
        .map_err(anyhow::Error::from)
        .and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
