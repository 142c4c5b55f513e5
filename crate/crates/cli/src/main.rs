//! `ltd`: staged coreset data selection from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ltd_core::budget::{stats, BudgetReport};
use ltd_core::center_finder::{find_centers, read_centers, write_centers};
use ltd_core::clustering::{kmeans, read_model, write_model, DEFAULT_N_INIT};
use ltd_core::coreset_sampler::write_selection;
use ltd_core::data_model::{
    load_corpus, load_raw_samples, load_templates, write_corpus, WhitespaceCounter,
};
use ltd_core::embedding_store::{read_store, read_token_dump, write_store};
use ltd_core::pipeline::{apply_method, run_pipeline, write_report};
use ltd_core::scoring::{read_scoring_input, score_examples, write_scores};
use ltd_core::synthetic::{blobs, BlobConfig};
use ltd_core::{KMeansConfig, Method, PipelineConfig, SampleRecord, SelectionSettings};
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(
    name = "ltd",
    version,
    about = "Coreset-based task data selection for instruction tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply per-dataset instruction templates to raw samples, producing a corpus file.
    Format(FormatArgs),
    /// Mean-pool a token-level embedding dump and L2-normalize each sample.
    Pool(PoolArgs),
    /// Run K-Means over normalized sample embeddings.
    Cluster(ClusterArgs),
    /// Locate the distribution center and task center of one task.
    Centers(CentersArgs),
    /// Select a subset of one task's samples.
    Select(SelectArgs),
    /// Score answer options by token-probability product.
    Score(ScoreArgs),
    /// Sample and token budget statistics for a selection.
    Stats(StatsArgs),
    /// Run the whole pipeline: cluster, centers, select, stats.
    Run(RunArgs),
    /// Write a synthetic Gaussian-blob corpus and embedding file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct FormatArgs {
    /// Raw samples, one JSON object per line.
    #[arg(long)]
    samples: PathBuf,
    /// Templates, one JSON object per line with `dataset` and `pattern`.
    #[arg(long)]
    templates: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct PoolArgs {
    /// LTDE file with one row per token; the sample id repeats on consecutive rows.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Number of clusters; defaults to ceil(sqrt(n/2)).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Number of k-means++ restarts; the lowest inertia wins.
    #[arg(long, default_value_t = DEFAULT_N_INIT)]
    n_init: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CentersArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Centers file from `centers`; recomputed from the model when omitted.
    #[arg(long)]
    centers: Option<PathBuf>,
    #[arg(long)]
    task: String,
    #[arg(long, default_value = "coreset")]
    method: Method,
    #[arg(long, default_value_t = 0.1)]
    proportion: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// First coreset center: `auto` for the task center, or a sample id.
    #[arg(long, default_value = "auto")]
    initial: String,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// One JSON object per line: `id`, `gold`, `options` (arrays of token probabilities).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Selection file (or plain id list); the whole corpus when omitted.
    #[arg(long)]
    selection: Option<PathBuf>,
    /// Task whose totals are the denominator of percent_of_task.
    #[arg(long)]
    task: Option<String>,
    /// Token total of a reference corpus, for percent_of_reference.
    #[arg(long)]
    reference_tokens: Option<u64>,
    /// Also write the report as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print the JSON report instead of the summary table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file (one object on one line); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    proportion: Option<f64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    n_init: Option<usize>,
    /// Sample id of the first coreset center; the task center when omitted.
    #[arg(long)]
    initial: Option<String>,
    #[arg(long)]
    reference_tokens: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Comma-separated blob sizes; blob b gets dataset label D{b}.
    #[arg(long, value_delimiter = ',', default_values_t = [40, 30, 15, 10, 5])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "NLI")]
    task: String,
    /// Directory receiving corpus.jsonl and embeddings.ltde.
    #[arg(long)]
    output: PathBuf,
}

/// An error tagged with the pipeline stage it came from.
struct Failure {
    stage: &'static str,
    error: anyhow::Error,
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            stage,
            error: e.into(),
        })
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Format(a) => format_cmd(a),
        Command::Pool(a) => pool(a),
        Command::Cluster(a) => cluster(a),
        Command::Centers(a) => centers(a),
        Command::Select(a) => select(a),
        Command::Score(a) => score(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {:#}", f.stage, f.error);
            ExitCode::FAILURE
        }
    }
}

fn format_cmd(a: FormatArgs) -> Outcome {
    let templates = load_templates(&a.templates).stage("load")?;
    let samples = load_raw_samples(&a.samples).stage("load")?;
    let records = samples
        .iter()
        .map(|s| {
            templates
                .format(s, &WhitespaceCounter)
                .with_context(|| format!("sample `{}`", s.id))
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .stage("format")?;
    write_corpus(&records, &a.output).stage("write")?;
    println!(
        "formatted {} samples -> {}",
        records.len(),
        a.output.display()
    );
    Ok(())
}

fn pool(a: PoolArgs) -> Outcome {
    let dump = read_token_dump(&a.input).stage("load")?;
    let tokens = dump.len();
    let pooled = dump.pool_tokens().stage("normalize")?;
    write_store(&pooled, &a.output).stage("write")?;
    println!(
        "pooled {tokens} rows into {} samples (d={}) -> {}",
        pooled.len(),
        pooled.dim(),
        a.output.display()
    );
    Ok(())
}

fn cluster(a: ClusterArgs) -> Outcome {
    let store = read_store(&a.embeddings).stage("load")?;
    let cfg = KMeansConfig {
        k: a.k.unwrap_or_else(|| KMeansConfig::default_k(store.len())),
        max_iters: a.max_iters,
        tol: a.tol,
        seed: a.seed,
        n_init: a.n_init,
    };
    let model = kmeans(&store, &cfg).stage("cluster")?;
    write_model(&model, &a.output).stage("write")?;
    println!(
        "k={} over {} rows, inertia {:.6} -> {}",
        model.k(),
        model.len(),
        model.inertia(),
        a.output.display()
    );
    Ok(())
}

fn load_aligned(
    corpus: &Path,
    embeddings: &Path,
) -> Result<(Vec<SampleRecord>, ltd_core::EmbeddingStore), Failure> {
    let corpus = load_corpus(corpus).stage("load")?;
    let store = read_store(embeddings).stage("load")?;
    store.check_aligned(&corpus).stage("align")?;
    Ok((corpus, store))
}

fn centers(a: CentersArgs) -> Outcome {
    let (corpus, store) = load_aligned(&a.corpus, &a.embeddings)?;
    let model = read_model(&a.model).stage("load")?;
    let centers = find_centers(&store, &model, &corpus, &a.task).stage("centers")?;
    write_centers(&centers, &corpus, &a.output).stage("write")?;
    println!(
        "task {}: modal cluster {}, task center {} -> {}",
        a.task,
        centers.modal_cluster,
        corpus[centers.task_center_index].id,
        a.output.display()
    );
    Ok(())
}

fn select(a: SelectArgs) -> Outcome {
    let (corpus, store) = load_aligned(&a.corpus, &a.embeddings)?;
    let model = read_model(&a.model).stage("load")?;
    let centers = match &a.centers {
        Some(path) => read_centers(path, &model, &corpus).stage("load")?,
        None => find_centers(&store, &model, &corpus, &a.task).stage("centers")?,
    };
    if centers.task != a.task {
        return Err(anyhow!(
            "centers file is for task `{}`, not `{}`",
            centers.task,
            a.task
        ))
        .stage("select");
    }
    let initial = match a.initial.as_str() {
        "auto" => None,
        id => Some(
            corpus
                .iter()
                .position(|r| r.id == id)
                .ok_or_else(|| anyhow!("initial sample `{id}` is not in the corpus"))
                .stage("select")?,
        ),
    };
    let settings = SelectionSettings {
        initial,
        ..SelectionSettings::new(a.task.clone(), a.method, a.proportion, a.seed)
    };
    let selection = apply_method(&store, &corpus, &centers, &settings).stage("select")?;
    write_selection(&selection, &corpus, &a.output).stage("write")?;
    println!(
        "{} selected {} of task {}, coverage radius {:.6} -> {}",
        selection.method,
        selection.indices.len(),
        a.task,
        selection.coverage_radius,
        a.output.display()
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Outcome {
    let examples = read_scoring_input(&a.input).stage("load")?;
    let (scored, summary) = score_examples(&examples).stage("score")?;
    write_scores(&scored, &summary, &a.output).stage("write")?;
    println!(
        "accuracy {}/{} = {:.4} -> {}",
        summary.correct,
        summary.examples,
        summary.accuracy,
        a.output.display()
    );
    Ok(())
}

/// Ids from a selection file. A leading JSON header line is skipped, so a
/// plain list of ids works too.
fn read_selected_ids(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().peekable();
    if lines
        .peek()
        .is_some_and(|l| l.trim_start().starts_with('{'))
    {
        lines.next();
    }
    Ok(lines
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn print_report(r: &BudgetReport) {
    println!(
        "{:<14}{:>12} samples {:>14} tokens",
        "corpus", r.corpus.samples, r.corpus.tokens
    );
    for (task, t) in &r.per_task {
        println!(
            "{:<14}{:>12} samples {:>14} tokens",
            format!("  {task}"),
            t.samples,
            t.tokens
        );
    }
    println!(
        "{:<14}{:>12} samples {:>14} tokens",
        "selected", r.selected.samples, r.selected.tokens
    );
    let scope = r.task.as_deref().unwrap_or("corpus");
    println!(
        "of {scope}: {}% of tokens ({}/{}), {}% of samples ({}/{})",
        r.percent_of_task.display,
        r.percent_of_task.numerator,
        r.percent_of_task.denominator,
        r.percent_samples_of_task.display,
        r.percent_samples_of_task.numerator,
        r.percent_samples_of_task.denominator,
    );
    if let Some(p) = &r.percent_of_reference {
        println!(
            "of reference: {}% of tokens ({}/{})",
            p.display, p.numerator, p.denominator
        );
    }
}

fn stats_cmd(a: StatsArgs) -> Outcome {
    let corpus = load_corpus(&a.corpus).stage("load")?;
    let selected = match &a.selection {
        Some(path) => read_selected_ids(path).stage("load")?,
        None => corpus.iter().map(|r| r.id.clone()).collect(),
    };
    let report = stats(&corpus, &selected, a.task.as_deref(), a.reference_tokens).stage("stats")?;
    if let Some(out) = &a.output {
        write_report(&report, out).stage("write")?;
    }
    if a.json {
        let text = serde_json::to_string_pretty(&report).stage("write")?;
        println!("{text}");
    } else {
        print_report(&report);
    }
    Ok(())
}

/// Reads the first non-empty line of a config file as a JSON object.
fn read_config_object(path: &Path) -> anyhow::Result<Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("{}");
    match serde_json::from_str(line).with_context(|| format!("parsing {}", path.display()))? {
        Value::Object(map) => Ok(map),
        other => Err(anyhow!("config must be a JSON object, got {other}")),
    }
}

fn run_config(a: &RunArgs) -> anyhow::Result<PipelineConfig> {
    let mut map = match &a.config {
        Some(path) => read_config_object(path)?,
        None => Map::new(),
    };
    let mut set = |key: &str, value: Option<Value>| {
        if let Some(v) = value {
            map.insert(key.to_string(), v);
        }
    };
    set(
        "corpus",
        a.corpus.as_ref().map(|p| p.to_string_lossy().into()),
    );
    set(
        "embeddings",
        a.embeddings.as_ref().map(|p| p.to_string_lossy().into()),
    );
    set("task", a.task.clone().map(Value::from));
    set("k", a.k.map(Value::from));
    set("proportion", a.proportion.map(Value::from));
    set("method", a.method.map(|m| m.as_str().into()));
    set("seed", a.seed.map(Value::from));
    set("max_iters", a.max_iters.map(Value::from));
    set("tol", a.tol.map(Value::from));
    set("n_init", a.n_init.map(Value::from));
    set("initial", a.initial.clone().map(Value::from));
    set("reference_tokens", a.reference_tokens.map(Value::from));
    set(
        "output",
        a.output.as_ref().map(|p| p.to_string_lossy().into()),
    );
    serde_json::from_value(Value::Object(map)).context("invalid pipeline config")
}

fn run(a: RunArgs) -> Outcome {
    let cfg = run_config(&a).stage("config")?;
    let out = run_pipeline(&cfg).map_err(|e| Failure {
        stage: e.stage(),
        error: match e {
            ltd_core::PipelineError::Stage { source, .. } => anyhow!(source),
            other => other.into(),
        },
    })?;
    let sel = &out.run.selection;
    println!(
        "{} selected {} of task {} ({}% of task tokens), coverage radius {:.6}",
        sel.method,
        sel.indices.len(),
        cfg.task,
        out.report.percent_of_task.display,
        sel.coverage_radius
    );
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let syn = blobs(&BlobConfig {
        sizes: a.sizes,
        dim: a.dim,
        spread: a.spread,
        seed: a.seed,
        task: a.task,
    });
    fs::create_dir_all(&a.output).stage("write")?;
    let corpus = a.output.join("corpus.jsonl");
    let embeddings = a.output.join("embeddings.ltde");
    write_corpus(&syn.corpus, &corpus).stage("write")?;
    write_store(&syn.store, &embeddings).stage("write")?;
    println!(
        "{} samples, d={} -> {}, {}",
        syn.store.len(),
        syn.store.dim(),
        corpus.display(),
        embeddings.display()
    );
    Ok(())
}
