//! `memegraphs`: ingest, augment, train and evaluate, plus the annotation
//! tooling (agreement, merging and the correction service).
//!
//! Exit codes: 0 success, 1 validation failure (bad input content, bad
//! arguments), 2 I/O failure (files, network).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memegraphs_core::kb::KbMode;
use memegraphs_core::model::Variant;

#[derive(Parser)]
#[command(name = "memegraphs", version, about = "Scene-graph and knowledge augmentation for hateful meme classification")]
struct Cli {
    /// More log output; repeat for debug level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset (and optionally its graphs) and print statistics.
    Ingest(IngestArgs),
    /// Write one augmented corpus per variant.
    Augment(AugmentArgs),
    /// Recognize and link entities; with --kb-mode record, fills the cache.
    Link(LinkArgs),
    /// Print the serialized form of a scene graph and/or descriptions.
    Serialize(SerializeArgs),
    /// Train one model per seed on an augmented corpus.
    Train(TrainArgs),
    /// Report tables from training runs, or scores of a predictions file.
    Eval(EvalArgs),
    /// Inter-annotator agreement between two record directories.
    Agree(AgreeArgs),
    /// Merge two annotators' records into one corrected graph per meme.
    Merge(MergeArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
pub struct DatasetArgs {
    /// Dataset CSV (id,image_ref,text,label,split).
    #[arg(long, required_unless_present = "multioff")]
    pub dataset: Option<PathBuf>,
    /// Split membership from three id files instead of the split column.
    #[arg(long, num_args = 3, value_names = ["TRAIN", "DEV", "TEST"])]
    pub split_files: Option<Vec<PathBuf>>,
    /// Directory with the three MultiOFF CSV files.
    #[arg(long, conflicts_with_all = ["dataset", "split_files"])]
    pub multioff: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct KbArgs {
    #[arg(long, default_value = "replay")]
    pub kb_mode: KbMode,
    /// Cache file read in replay mode and written in record mode.
    #[arg(long)]
    pub kb_cache: Option<PathBuf>,
    /// Base URL of the knowledge-base API.
    #[arg(long, env = "MEMEGRAPHS_KB_URL", default_value = memegraphs_core::kb::DEFAULT_BASE_URL)]
    pub kb_url: String,
    /// Request rate limit.
    #[arg(long, default_value_t = 5.0)]
    pub kb_rate: f64,
}

#[derive(Args, Clone)]
pub struct NerArgs {
    /// Alias gazetteer (JSON object canonical → aliases). Defaults to the
    /// built-in 2016 US election list.
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    /// Spans from an external recognizer (JSON lines); replaces the
    /// gazetteer scan.
    #[arg(long)]
    pub ner_sidecar: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    graphs: Option<PathBuf>,
    /// Also write the dataset in the native CSV format.
    #[arg(long)]
    write: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    graphs: Option<PathBuf>,
    /// Output directory for the corpus files.
    #[arg(long)]
    out: PathBuf,
    /// Variants to write (text, sg, know, sg+know); repeatable. Default: all.
    #[arg(long = "variant")]
    variants: Vec<Variant>,
    #[command(flatten)]
    kb: KbArgs,
    #[command(flatten)]
    ner: NerArgs,
    /// Merge same-label boxes overlapping at least this much.
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Drop objects with these labels (comma-separated), e.g. sign,letter.
    #[arg(long, value_delimiter = ',')]
    banned_labels: Option<Vec<String>>,
    /// Directory of merged annotation records ({id}.json) to apply.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long, default_value = memegraphs_core::serializer::DEFAULT_SEPARATOR)]
    separator: String,
}

#[derive(Args)]
struct LinkArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// JSON lines output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    kb: KbArgs,
    #[command(flatten)]
    ner: NerArgs,
}

#[derive(Args)]
struct SerializeArgs {
    /// Scene-graph JSON file; capped before serializing.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Knowledge description; repeatable, kept in order.
    #[arg(long = "description")]
    descriptions: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus file written by `augment`.
    #[arg(long)]
    corpus: PathBuf,
    /// Training configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of seeds; overrides the configuration.
    #[arg(long)]
    seeds: Option<usize>,
    /// Frozen image embeddings (JSON lines) to fuse at the classifier head.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Output directory: report.json, model.json, per-seed predictions.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// report.json files from `train`; one table row each.
    #[arg(long = "report")]
    reports: Vec<PathBuf>,
    /// Score a predictions CSV against the labels in a corpus file.
    #[arg(long, requires = "corpus", conflicts_with = "reports")]
    predictions: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct AgreeArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    graphs: PathBuf,
    /// First annotator's records ({id}.json).
    #[arg(long)]
    a: PathBuf,
    /// Second annotator's records.
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    graphs: PathBuf,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// JSON array of confirmed {meme_id, object, kb_id} links.
    #[arg(long)]
    verified_links: Option<PathBuf>,
    /// Writes records/{id}.json and graphs/{id}.json here.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    graphs: PathBuf,
    /// Append-only record log; created when missing.
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[command(flatten)]
    kb: KbArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a.data, a.graphs.as_deref(), a.write.as_deref()),
        Command::Augment(a) => commands::augment(commands::AugmentRequest {
            data: &a.data,
            graphs: a.graphs.as_deref(),
            out: &a.out,
            variants: a.variants,
            kb: &a.kb,
            ner: &a.ner,
            iou_threshold: a.iou_threshold,
            banned_labels: a.banned_labels,
            annotations: a.annotations.as_deref(),
            separator: a.separator,
        }),
        Command::Link(a) => commands::link(&a.data, a.out.as_deref(), &a.kb, &a.ner),
        Command::Serialize(a) => commands::serialize(a.graph.as_deref(), &a.descriptions),
        Command::Train(a) => commands::train(&a.corpus, a.config.as_deref(), a.seeds, a.images.as_deref(), &a.out),
        Command::Eval(a) => commands::eval(&a.reports, a.predictions.as_deref(), a.corpus.as_deref()),
        Command::Agree(a) => commands::agree(&a.data, &a.graphs, &a.a, &a.b),
        Command::Merge(a) => commands::merge(&a.data, &a.graphs, &a.a, &a.b, a.verified_links.as_deref(), &a.out),
        Command::Serve(a) => commands::serve(&a.data, &a.graphs, &a.log, &a.addr, &a.kb),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", commands::describe(&e));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
