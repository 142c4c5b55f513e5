//! Distribution center and task center of one task.
//!
//! The distribution center is the (re-normalized) centroid of the cluster that
//! holds most of the task's samples. The task center is the real task sample
//! with the highest cosine similarity to it, and seeds the greedy selection.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterModel;
use crate::data_model::SampleRecord;
use crate::embedding_store::{dot, is_unit, l2_normalize, EmbeddingStore, StoreError};

#[derive(Debug, Error)]
pub enum CenterError {
    #[error("no samples carry task `{0}`")]
    UnknownTask(String),
    #[error("vector is not unit length")]
    NotNormalized,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cluster model covers {model} rows but corpus has {corpus}")]
    ModelCoverage { model: usize, corpus: usize },
    #[error("unknown sample id `{0}`")]
    UnknownId(String),
    #[error("centers record: {0}")]
    Format(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CenterError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskCenters {
    pub task: String,
    pub distribution_center: Vec<f32>,
    pub task_center_index: usize,
    pub modal_cluster: usize,
    pub frequency_histogram: BTreeMap<usize, usize>,
}

/// Dot product of two unit vectors, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CenterError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if !is_unit(a) || !is_unit(b) {
        return Err(CenterError::NotNormalized);
    }
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

/// Row indices of `task` samples, ascending.
pub fn task_rows(corpus: &[SampleRecord], task: &str) -> Vec<usize> {
    corpus
        .iter()
        .enumerate()
        .filter(|(_, r)| r.task == task)
        .map(|(i, _)| i)
        .collect()
}

/// Centroid of the modal cluster of `task`, with the per-cluster histogram.
///
/// The returned `task_center_index` is a placeholder (the first task row);
/// [`find_centers`] fills it in.
pub fn distribution_center(
    model: &ClusterModel,
    corpus: &[SampleRecord],
    task: &str,
) -> Result<TaskCenters> {
    if model.len() != corpus.len() {
        return Err(CenterError::ModelCoverage {
            model: model.len(),
            corpus: corpus.len(),
        });
    }
    let rows = task_rows(corpus, task);
    let first = *rows
        .first()
        .ok_or_else(|| CenterError::UnknownTask(task.to_string()))?;
    let mut histogram = BTreeMap::new();
    for &r in &rows {
        *histogram.entry(model.cluster_of(r)).or_insert(0) += 1;
    }
    // BTreeMap iterates ascending, so the first maximum is the lowest index.
    let (modal, _) =
        histogram.iter().fold(
            (0usize, 0usize),
            |best, (&c, &n)| if n > best.1 { (c, n) } else { best },
        );
    let center = l2_normalize(model.centroid(modal))?;
    Ok(TaskCenters {
        task: task.to_string(),
        distribution_center: center,
        task_center_index: first,
        modal_cluster: modal,
        frequency_histogram: histogram,
    })
}

/// The task sample most cosine-similar to `dc`; lowest row index on ties.
pub fn task_center(
    store: &EmbeddingStore,
    corpus: &[SampleRecord],
    task: &str,
    dc: &[f32],
) -> Result<usize> {
    if dc.len() != store.dim() {
        return Err(CenterError::DimensionMismatch {
            expected: store.dim(),
            actual: dc.len(),
        });
    }
    if !store.is_normalized() {
        return Err(CenterError::NotNormalized);
    }
    let mut best: Option<(usize, f64)> = None;
    for r in task_rows(corpus, task) {
        let sim = cosine_similarity(store.row(r), dc)?;
        if best.is_none_or(|(_, s)| sim > s) {
            best = Some((r, sim));
        }
    }
    best.map(|(r, _)| r)
        .ok_or_else(|| CenterError::UnknownTask(task.to_string()))
}

pub fn find_centers(
    store: &EmbeddingStore,
    model: &ClusterModel,
    corpus: &[SampleRecord],
    task: &str,
) -> Result<TaskCenters> {
    let mut centers = distribution_center(model, corpus, task)?;
    centers.task_center_index = task_center(store, corpus, task, &centers.distribution_center)?;
    Ok(centers)
}

/// One-line JSON checkpoint of [`TaskCenters`]. The center vector is not
/// stored; it is rebuilt from the cluster model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CentersRecord {
    pub task: String,
    pub modal_cluster: usize,
    pub task_center_id: String,
    pub histogram: BTreeMap<usize, usize>,
}

impl TaskCenters {
    pub fn to_record(&self, corpus: &[SampleRecord]) -> CentersRecord {
        CentersRecord {
            task: self.task.clone(),
            modal_cluster: self.modal_cluster,
            task_center_id: corpus[self.task_center_index].id.clone(),
            histogram: self.frequency_histogram.clone(),
        }
    }

    pub fn from_record(
        record: CentersRecord,
        model: &ClusterModel,
        corpus: &[SampleRecord],
    ) -> Result<Self> {
        if record.modal_cluster >= model.k() {
            return Err(CenterError::Format(format!(
                "modal cluster {} out of range for k={}",
                record.modal_cluster,
                model.k()
            )));
        }
        let index = corpus
            .iter()
            .position(|r| r.id == record.task_center_id)
            .ok_or_else(|| CenterError::UnknownId(record.task_center_id.clone()))?;
        if corpus[index].task != record.task {
            return Err(CenterError::Format(format!(
                "task center `{}` is not a `{}` sample",
                record.task_center_id, record.task
            )));
        }
        Ok(Self {
            distribution_center: l2_normalize(model.centroid(record.modal_cluster))?,
            task: record.task,
            task_center_index: index,
            modal_cluster: record.modal_cluster,
            frequency_histogram: record.histogram,
        })
    }
}

pub fn write_centers(
    centers: &TaskCenters,
    corpus: &[SampleRecord],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut f = File::create(path)?;
    let line = serde_json::to_string(&centers.to_record(corpus)).map_err(std::io::Error::from)?;
    writeln!(f, "{line}")?;
    Ok(())
}

pub fn read_centers(
    path: impl AsRef<Path>,
    model: &ClusterModel,
    corpus: &[SampleRecord],
) -> Result<TaskCenters> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    let record: CentersRecord =
        serde_json::from_str(line.trim()).map_err(|e| CenterError::Format(e.to_string()))?;
    TaskCenters::from_record(record, model, corpus)
}
