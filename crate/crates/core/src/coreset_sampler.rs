//! Budgeted selection of a task's samples.
//!
//! [`kcenter_greedy`] is farthest-point selection seeded at the task center.
//! [`top_k`], [`least_k`] and [`mixed`] rank by cosine similarity to the
//! distribution center, and [`random_baseline`] draws uniformly.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::center_finder::{cosine_similarity, task_rows, CenterError};
use crate::data_model::SampleRecord;
use crate::embedding_store::{dot, EmbeddingStore};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("proportion must be in (0, 1], got {0}")]
    InvalidProportion(f64),
    #[error("no samples carry task `{0}`")]
    UnknownTask(String),
    #[error("row {0} is not a sample of the target task")]
    NotATaskSample(usize),
    #[error("budget {budget} exceeds the {pool} task samples")]
    BudgetExceedsPool { budget: usize, pool: usize },
    #[error("budget must select at least one sample")]
    EmptyBudget,
    #[error("selection is empty")]
    EmptySelection,
    #[error("embeddings are not normalized")]
    NotNormalized,
    #[error("unknown selection method `{0}`")]
    UnknownMethod(String),
    #[error("unknown sample id `{0}`")]
    UnknownId(String),
    #[error("selection file: {0}")]
    Format(String),
    #[error(transparent)]
    Center(#[from] CenterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SelectError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Coreset,
    TopK,
    LeastK,
    Mixed,
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Coreset,
        Method::TopK,
        Method::LeastK,
        Method::Mixed,
        Method::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Coreset => "coreset",
            Method::TopK => "topk",
            Method::LeastK => "leastk",
            Method::Mixed => "mixed",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = SelectError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| SelectError::UnknownMethod(s.to_string()))
    }
}

/// A proportion of a task pool, resolved to a sample count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionBudget {
    pub proportion: f64,
    pub resolved_count: usize,
}

impl SelectionBudget {
    /// `ceil(proportion * pool)`.
    ///
    /// Products within 1e-9 (relative) of an integer are taken as that integer,
    /// so decimal proportions such as 0.07 of 100 resolve to 7 rather than 8.
    pub fn from_proportion(proportion: f64, pool: usize) -> Result<Self> {
        if !(proportion > 0.0 && proportion <= 1.0) {
            return Err(SelectError::InvalidProportion(proportion));
        }
        if pool == 0 {
            return Err(SelectError::EmptyBudget);
        }
        let exact = proportion * pool as f64;
        let nearest = exact.round();
        let count = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            exact.ceil()
        };
        let resolved_count = (count as usize).clamp(1, pool);
        Ok(Self {
            proportion,
            resolved_count,
        })
    }

    pub fn count(resolved_count: usize, pool: usize) -> Result<Self> {
        if resolved_count == 0 {
            return Err(SelectError::EmptyBudget);
        }
        if resolved_count > pool {
            return Err(SelectError::BudgetExceedsPool {
                budget: resolved_count,
                pool,
            });
        }
        Ok(Self {
            proportion: resolved_count as f64 / pool as f64,
            resolved_count,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub method: Method,
    pub task: String,
    /// Corpus row indices in selection order.
    pub indices: Vec<usize>,
    pub budget: SelectionBudget,
    /// See [`coverage_radius`].
    pub coverage_radius: f64,
    pub seed: Option<u64>,
}

/// Cosine distance `1 - dot` between two store rows; a row is at distance 0 from itself.
pub fn row_distance(store: &EmbeddingStore, a: usize, b: usize) -> f64 {
    if a == b {
        0.0
    } else {
        (1.0 - dot(store.row(a), store.row(b))).max(0.0)
    }
}

/// Euclidean (chord) distance between unit vectors at cosine distance `d`.
///
/// `1 - dot` is half the squared chord and breaks the triangle inequality, so
/// coverage radii are reported on the chord scale, where the greedy
/// 2-approximation bound holds. Both scales rank pairs identically.
pub fn chord_from_cosine(d: f64) -> f64 {
    (2.0 * d).sqrt()
}

/// Largest chord distance from any pool row to its nearest selected row.
pub fn coverage_radius(store: &EmbeddingStore, pool: &[usize], selected: &[usize]) -> Result<f64> {
    if selected.is_empty() {
        return Err(SelectError::EmptySelection);
    }
    let worst = pool
        .iter()
        .map(|&p| {
            selected
                .iter()
                .map(|&s| row_distance(store, p, s))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    Ok(chord_from_cosine(worst))
}

struct Pool {
    rows: Vec<usize>,
}

impl Pool {
    fn new(store: &EmbeddingStore, corpus: &[SampleRecord], task: &str) -> Result<Self> {
        if !store.is_normalized() {
            return Err(SelectError::NotNormalized);
        }
        if store.len() != corpus.len() {
            return Err(SelectError::Format(format!(
                "store has {} rows, corpus has {}",
                store.len(),
                corpus.len()
            )));
        }
        let rows = task_rows(corpus, task);
        if rows.is_empty() {
            return Err(SelectError::UnknownTask(task.to_string()));
        }
        Ok(Self { rows })
    }

    fn check_budget(&self, budget: &SelectionBudget) -> Result<()> {
        if budget.resolved_count == 0 {
            return Err(SelectError::EmptyBudget);
        }
        if budget.resolved_count > self.rows.len() {
            return Err(SelectError::BudgetExceedsPool {
                budget: budget.resolved_count,
                pool: self.rows.len(),
            });
        }
        Ok(())
    }
}

/// Farthest-point greedy selection over the task's samples, starting at `initial`.
///
/// Keeps each pool row's distance to its nearest selected row and repeatedly
/// adds the unselected row with the largest such distance (lowest row index on
/// ties), so the work is `O(budget * pool * d)`. `initial` counts against the
/// budget.
pub fn kcenter_greedy(
    store: &EmbeddingStore,
    corpus: &[SampleRecord],
    task: &str,
    initial: usize,
    budget: SelectionBudget,
) -> Result<SelectionResult> {
    let pool = Pool::new(store, corpus, task)?;
    pool.check_budget(&budget)?;
    if initial >= corpus.len() || corpus[initial].task != task {
        return Err(SelectError::NotATaskSample(initial));
    }

    let mut min_dist: Vec<f64> = pool
        .rows
        .iter()
        .map(|&r| row_distance(store, r, initial))
        .collect();
    let mut taken = vec![false; pool.rows.len()];
    taken[pool
        .rows
        .binary_search(&initial)
        .expect("initial is in the pool")] = true;
    let mut indices = Vec::with_capacity(budget.resolved_count);
    indices.push(initial);

    while indices.len() < budget.resolved_count {
        // Pool rows are ascending, so strict `>` keeps the lowest row index on ties.
        let mut best: Option<(usize, f64)> = None;
        for (slot, &d) in min_dist.iter().enumerate() {
            if !taken[slot] && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((slot, d));
            }
        }
        let (slot, _) = best.expect("budget <= pool leaves an unselected row");
        taken[slot] = true;
        let pick = pool.rows[slot];
        indices.push(pick);
        for (d, &r) in min_dist.iter_mut().zip(&pool.rows) {
            *d = d.min(row_distance(store, r, pick));
        }
    }

    let coverage_radius = chord_from_cosine(min_dist.iter().copied().fold(0.0, f64::max));
    Ok(SelectionResult {
        method: Method::Coreset,
        task: task.to_string(),
        indices,
        budget,
        coverage_radius,
        seed: None,
    })
}

/// Task rows ordered by cosine similarity to `dc`, most similar first; ties by row index.
fn ranked_by_similarity(
    store: &EmbeddingStore,
    pool: &Pool,
    dc: &[f32],
) -> Result<Vec<(usize, f64)>> {
    let mut ranked = pool
        .rows
        .iter()
        .map(|&r| Ok((r, cosine_similarity(store.row(r), dc)?)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

fn similarity_selection(
    store: &EmbeddingStore,
    corpus: &[SampleRecord],
    task: &str,
    dc: &[f32],
    budget: SelectionBudget,
    method: Method,
) -> Result<SelectionResult> {
    let pool = Pool::new(store, corpus, task)?;
    pool.check_budget(&budget)?;
    let ranked = ranked_by_similarity(store, &pool, dc)?;
    let b = budget.resolved_count;

    let indices: Vec<usize> = match method {
        Method::TopK => ranked.iter().take(b).map(|&(r, _)| r).collect(),
        Method::LeastK => least_order(&ranked).take(b).collect(),
        Method::Mixed => {
            let top_n = b.div_ceil(2);
            let least_n = b / 2;
            let mut out: Vec<usize> = ranked.iter().take(top_n).map(|&(r, _)| r).collect();
            let chosen: HashSet<usize> = out.iter().copied().collect();
            let least: Vec<usize> = least_order(&ranked)
                .take(least_n)
                .filter(|r| !chosen.contains(r))
                .collect();
            // Overlap with the top half goes to top; refill from the next-ranked top rows.
            let shortfall = least_n - least.len();
            let least_set: HashSet<usize> = least.iter().copied().collect();
            out.extend(
                ranked
                    .iter()
                    .skip(top_n)
                    .map(|&(r, _)| r)
                    .filter(|r| !least_set.contains(r))
                    .take(shortfall),
            );
            out.extend(least);
            out
        }
        Method::Coreset | Method::Random => unreachable!("not a similarity ranking"),
    };

    let coverage_radius = coverage_radius(store, &pool.rows, &indices)?;
    Ok(SelectionResult {
        method,
        task: task.to_string(),
        indices,
        budget,
        coverage_radius,
        seed: None,
    })
}

/// Least-similar-first order: ascending similarity, ties by lowest row index.
fn least_order(ranked: &[(usize, f64)]) -> impl Iterator<Item = usize> + '_ {
    let mut asc: Vec<(usize, f64)> = ranked.to_vec();
    asc.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    asc.into_iter().map(|(r, _)| r)
}

/// The `budget` task samples most similar to `dc`.
pub fn top_k(
    store: &EmbeddingStore,
    corpus: &[SampleRecord],
    task: &str,
    dc: &[f32],
    budget: SelectionBudget,
) -> Result<SelectionResult> {
    similarity_selection(store, corpus, task, dc, budget, Method::TopK)
}

/// The `budget` task samples least similar to `dc`.
pub fn least_k(
    store: &EmbeddingStore,
    corpus: &[SampleRecord],
    task: &str,
    dc: &[f32],
    budget: SelectionBudget,
) -> Result<SelectionResult> {
    similarity_selection(store, corpus, task, dc, budget, Method::LeastK)
}

/// `ceil(budget / 2)` most similar plus `floor(budget / 2)` least similar samples.
pub fn mixed(
    store: &EmbeddingStore,
    corpus: &[SampleRecord],
    task: &str,
    dc: &[f32],
    budget: SelectionBudget,
) -> Result<SelectionResult> {
    similarity_selection(store, corpus, task, dc, budget, Method::Mixed)
}

/// Uniform sample of task rows without replacement, reproducible per seed.
pub fn random_baseline(
    store: &EmbeddingStore,
    corpus: &[SampleRecord],
    task: &str,
    budget: SelectionBudget,
    seed: u64,
) -> Result<SelectionResult> {
    let pool = Pool::new(store, corpus, task)?;
    pool.check_budget(&budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> =
        rand::seq::index::sample(&mut rng, pool.rows.len(), budget.resolved_count)
            .into_iter()
            .map(|slot| pool.rows[slot])
            .collect();
    let coverage_radius = coverage_radius(store, &pool.rows, &indices)?;
    Ok(SelectionResult {
        method: Method::Random,
        task: task.to_string(),
        indices,
        budget,
        coverage_radius,
        seed: Some(seed),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SelectionHeader {
    method: Method,
    task: String,
    proportion: f64,
    resolved_count: usize,
    coverage_radius: f64,
    seed: Option<u64>,
}

/// Writes a JSON header line followed by one sample id per line, in selection order.
pub fn write_selection(
    result: &SelectionResult,
    corpus: &[SampleRecord],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = SelectionHeader {
        method: result.method,
        task: result.task.clone(),
        proportion: result.budget.proportion,
        resolved_count: result.budget.resolved_count,
        coverage_radius: result.coverage_radius,
        seed: result.seed,
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for &i in &result.indices {
        writeln!(w, "{}", corpus[i].id)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a selection file, mapping ids back to rows of `corpus`.
pub fn read_selection(path: impl AsRef<Path>, corpus: &[SampleRecord]) -> Result<SelectionResult> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| SelectError::Format("missing header".into()))??;
    let header: SelectionHeader = serde_json::from_str(&header_line)
        .map_err(|e| SelectError::Format(format!("header: {e}")))?;
    let index: std::collections::HashMap<&str, usize> = corpus
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let mut indices = Vec::with_capacity(header.resolved_count);
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let &i = index
            .get(line.as_str())
            .ok_or_else(|| SelectError::UnknownId(line.clone()))?;
        indices.push(i);
    }
    if indices.len() != header.resolved_count {
        return Err(SelectError::Format(format!(
            "header says {} ids, found {}",
            header.resolved_count,
            indices.len()
        )));
    }
    Ok(SelectionResult {
        method: header.method,
        task: header.task,
        indices,
        budget: SelectionBudget {
            proportion: header.proportion,
            resolved_count: header.resolved_count,
        },
        coverage_radius: header.coverage_radius,
        seed: header.seed,
    })
}
