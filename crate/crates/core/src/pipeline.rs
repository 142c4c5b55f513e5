//! End-to-end selection: cluster, locate the task centers, select, report.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{stats, BudgetReport};
use crate::center_finder::{find_centers, write_centers, TaskCenters};
use crate::clustering::{kmeans, write_model, ClusterModel, KMeansConfig, DEFAULT_N_INIT};
use crate::coreset_sampler::{
    kcenter_greedy, least_k, mixed, random_baseline, top_k, write_selection, Method, SelectError,
    SelectionBudget, SelectionResult,
};
use crate::data_model::{load_corpus, SampleRecord};
use crate::embedding_store::{read_store, EmbeddingStore, StoreError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Load,
    Normalize,
    Cluster,
    Centers,
    Select,
    Stats,
    Write,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Normalize => "normalize",
            Stage::Cluster => "cluster",
            Stage::Centers => "centers",
            Stage::Select => "select",
            Stage::Stats => "stats",
            Stage::Write => "write",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[align] corpus and embeddings disagree: {0}")]
    Alignment(#[source] StoreError),
    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Alignment(_) => "align",
            PipelineError::Stage { stage, .. } => stage.as_str(),
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

fn default_proportion() -> f64 {
    0.1
}

fn default_method() -> Method {
    Method::Coreset
}

fn default_max_iters() -> usize {
    100
}

fn default_tol() -> f64 {
    1e-4
}

fn default_n_init() -> usize {
    DEFAULT_N_INIT
}

/// Pipeline settings. A config file holds one JSON object with these keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    pub task: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_proportion")]
    pub proportion: f64,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    /// Corpus id of the greedy starting sample; the task center when absent.
    #[serde(default)]
    pub initial: Option<String>,
    #[serde(default)]
    pub reference_tokens: Option<u64>,
}

/// In-memory selection settings, independent of files.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionSettings {
    pub task: String,
    pub k: Option<usize>,
    pub max_iters: usize,
    pub tol: f64,
    pub proportion: f64,
    pub method: Method,
    pub seed: u64,
    pub n_init: usize,
    pub initial: Option<usize>,
}

impl SelectionSettings {
    pub fn new(task: impl Into<String>, method: Method, proportion: f64, seed: u64) -> Self {
        Self {
            task: task.into(),
            k: None,
            max_iters: default_max_iters(),
            tol: default_tol(),
            proportion,
            method,
            seed,
            n_init: DEFAULT_N_INIT,
            initial: None,
        }
    }

    pub fn kmeans_config(&self, n: usize) -> KMeansConfig {
        KMeansConfig {
            k: self.k.unwrap_or_else(|| KMeansConfig::default_k(n)),
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
            n_init: self.n_init,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SelectionRun {
    pub model: ClusterModel,
    pub centers: TaskCenters,
    pub selection: SelectionResult,
}

/// Clusters `store`, finds the task centers and applies the selected method.
pub fn select(
    store: &EmbeddingStore,
    corpus: &[SampleRecord],
    settings: &SelectionSettings,
) -> Result<SelectionRun, PipelineError> {
    store
        .check_aligned(corpus)
        .map_err(PipelineError::Alignment)?;
    if !store.is_normalized() {
        return Err(PipelineError::Stage {
            stage: Stage::Normalize,
            source: "embeddings are not flagged as normalized; run `pool` first".into(),
        });
    }
    let model = kmeans(store, &settings.kmeans_config(store.len())).at(Stage::Cluster)?;
    let centers = find_centers(store, &model, corpus, &settings.task).at(Stage::Centers)?;
    let selection = apply_method(store, corpus, &centers, settings).at(Stage::Select)?;
    Ok(SelectionRun {
        model,
        centers,
        selection,
    })
}

/// Runs the configured selection method against already located centers.
/// Clustering settings in `settings` are ignored.
pub fn apply_method(
    store: &EmbeddingStore,
    corpus: &[SampleRecord],
    centers: &TaskCenters,
    settings: &SelectionSettings,
) -> Result<SelectionResult, SelectError> {
    let pool = corpus.iter().filter(|r| r.task == settings.task).count();
    let budget = SelectionBudget::from_proportion(settings.proportion, pool)?;
    let dc = &centers.distribution_center;
    let task = settings.task.as_str();
    match settings.method {
        Method::Coreset => {
            let initial = settings.initial.unwrap_or(centers.task_center_index);
            kcenter_greedy(store, corpus, task, initial, budget)
        }
        Method::TopK => top_k(store, corpus, task, dc, budget),
        Method::LeastK => least_k(store, corpus, task, dc, budget),
        Method::Mixed => mixed(store, corpus, task, dc, budget),
        Method::Random => random_baseline(store, corpus, task, budget, settings.seed),
    }
}

pub const CLUSTERS_FILE: &str = "clusters.ltdc";
pub const CENTERS_FILE: &str = "centers.jsonl";
pub const SELECTION_FILE: &str = "selection.txt";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub run: SelectionRun,
    pub report: BudgetReport,
    pub files: Vec<PathBuf>,
}

/// Runs the whole pipeline from files and writes every artifact to `cfg.output`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let corpus = load_corpus(&cfg.corpus).at(Stage::Load)?;
    let store = read_store(&cfg.embeddings).at(Stage::Load)?;
    store
        .check_aligned(&corpus)
        .map_err(PipelineError::Alignment)?;

    let initial =
        match &cfg.initial {
            None => None,
            Some(id) => Some(corpus.iter().position(|r| &r.id == id).ok_or_else(|| {
                PipelineError::Stage {
                    stage: Stage::Select,
                    source: format!("initial sample `{id}` is not in the corpus").into(),
                }
            })?),
        };
    let settings = SelectionSettings {
        task: cfg.task.clone(),
        k: cfg.k,
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        n_init: cfg.n_init,
        proportion: cfg.proportion,
        method: cfg.method,
        seed: cfg.seed,
        initial,
    };
    let run = select(&store, &corpus, &settings)?;

    let selected_ids: Vec<String> = run
        .selection
        .indices
        .iter()
        .map(|&i| corpus[i].id.clone())
        .collect();
    let report = stats(
        &corpus,
        &selected_ids,
        Some(&cfg.task),
        cfg.reference_tokens,
    )
    .at(Stage::Stats)?;

    let files = write_outputs(&cfg.output, &corpus, &run, &report)?;
    Ok(PipelineOutput { run, report, files })
}

fn write_outputs(
    dir: &Path,
    corpus: &[SampleRecord],
    run: &SelectionRun,
    report: &BudgetReport,
) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir).at(Stage::Write)?;
    let clusters = dir.join(CLUSTERS_FILE);
    write_model(&run.model, &clusters).at(Stage::Write)?;
    let centers = dir.join(CENTERS_FILE);
    write_centers(&run.centers, corpus, &centers).at(Stage::Write)?;
    let selection = dir.join(SELECTION_FILE);
    write_selection(&run.selection, corpus, &selection).at(Stage::Write)?;
    let report_path = dir.join(REPORT_FILE);
    write_report(report, &report_path).at(Stage::Write)?;
    Ok(vec![clusters, centers, selection, report_path])
}

pub fn write_report(report: &BudgetReport, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")
}
