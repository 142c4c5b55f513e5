//! K-Means over unit-length sentence embeddings.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::embedding_store::{squared_distance, EmbeddingStore, StoreError};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k = {k} exceeds the {n} samples available")]
    TooFewSamples { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("max_iters must be at least 1")]
    ZeroIterations,
    #[error("n_init must be at least 1")]
    ZeroRestarts,
    #[error("tolerance must be finite and nonnegative, got {0}")]
    BadTolerance(f64),
    #[error("embeddings are not normalized")]
    NotNormalized,
    #[error("dimension mismatch: model has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cluster model file: {0}")]
    Format(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ClusterError> = std::result::Result<T, E>;

pub const DEFAULT_N_INIT: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once an iteration improves inertia by less than this fraction.
    pub tol: f64,
    pub seed: u64,
    /// Independent k-means++ restarts; the lowest-inertia run is kept.
    pub n_init: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 100,
            tol: 1e-4,
            seed,
            n_init: DEFAULT_N_INIT,
        }
    }

    /// `ceil(sqrt(n / 2))`, at least 1.
    pub fn default_k(n: usize) -> usize {
        let mut k = ((n as f64) / 2.0).sqrt().ceil() as usize;
        // Guard the float sqrt near perfect squares.
        while k > 1 && 2 * (k - 1) * (k - 1) >= n {
            k -= 1;
        }
        while 2 * k * k < n {
            k += 1;
        }
        k.max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    k: usize,
    dim: usize,
    centroids: Vec<f32>,
    assignments: Vec<u32>,
    inertia: f64,
    seed: u64,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn centroids(&self) -> impl Iterator<Item = &[f32]> {
        self.centroids.chunks_exact(self.dim)
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    pub fn cluster_of(&self, row: usize) -> usize {
        self.assignments[row] as usize
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Sum of squared distances of `store` rows to their assigned centroids.
    pub fn recompute_inertia(&self, store: &EmbeddingStore) -> f64 {
        store
            .rows()
            .zip(&self.assignments)
            .map(|(row, &c)| squared_distance(row, self.centroid(c as usize)))
            .sum()
    }

    /// Nearest centroid under squared Euclidean distance; lowest index on ties.
    pub fn assign(&self, v: &[f32]) -> Result<usize> {
        if v.len() != self.dim {
            return Err(ClusterError::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(nearest(v, &self.centroids, self.dim).0)
    }
}

fn nearest(v: &[f32], centroids: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(v, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Runs K-Means and returns the model.
pub fn kmeans(store: &EmbeddingStore, cfg: &KMeansConfig) -> Result<ClusterModel> {
    kmeans_traced(store, cfg).map(|(model, _)| model)
}

/// Runs K-Means, also returning, for every restart, the inertia after each assignment step.
///
/// Each of the `cfg.n_init` runs seeds with k-means++ on its own ChaCha stream
/// of `cfg.seed`. A Lloyd round moves centroids to the mean of their rows,
/// reseeds any empty cluster at the row farthest from its own centroid, then
/// reassigns. A run ends when assignments stop changing, when relative inertia
/// improvement drops below `cfg.tol`, or after `cfg.max_iters` rounds. The run
/// with the lowest final inertia is returned (earliest on ties). Returned
/// assignments always point at the nearest returned centroid.
pub fn kmeans_traced(
    store: &EmbeddingStore,
    cfg: &KMeansConfig,
) -> Result<(ClusterModel, Vec<Vec<f64>>)> {
    if !store.is_normalized() {
        return Err(ClusterError::NotNormalized);
    }
    if cfg.k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if cfg.max_iters == 0 {
        return Err(ClusterError::ZeroIterations);
    }
    if cfg.n_init == 0 {
        return Err(ClusterError::ZeroRestarts);
    }
    if !(cfg.tol.is_finite() && cfg.tol >= 0.0) {
        return Err(ClusterError::BadTolerance(cfg.tol));
    }
    let n = store.len();
    if cfg.k > n {
        return Err(ClusterError::TooFewSamples { k: cfg.k, n });
    }

    let mut best: Option<ClusterModel> = None;
    let mut traces = Vec::with_capacity(cfg.n_init);
    for restart in 0..cfg.n_init {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(restart as u64);
        let (model, trace) = lloyd(store, cfg, &mut rng);
        traces.push(trace);
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok((best.expect("n_init >= 1"), traces))
}

fn lloyd(
    store: &EmbeddingStore,
    cfg: &KMeansConfig,
    rng: &mut ChaCha8Rng,
) -> (ClusterModel, Vec<f64>) {
    let n = store.len();
    let mut centroids = plus_plus_init(store, cfg.k, rng);
    let mut labels = vec![0u32; n];
    let mut inertia = assign_all(store, &centroids, &mut labels);
    let mut trace = vec![inertia];

    for _ in 0..cfg.max_iters {
        update_centroids(store, &labels, &mut centroids, cfg.k);
        let mut next = labels.clone();
        let next_inertia = assign_all(store, &centroids, &mut next);
        trace.push(next_inertia);
        let unchanged = next == labels;
        let improvement = inertia - next_inertia;
        labels = next;
        let prev = inertia;
        inertia = next_inertia;
        if unchanged || prev == 0.0 || improvement < cfg.tol * prev {
            break;
        }
    }

    let model = ClusterModel {
        k: cfg.k,
        dim: store.dim(),
        centroids,
        assignments: labels,
        inertia,
        seed: cfg.seed,
    };
    (model, trace)
}

fn plus_plus_init(store: &EmbeddingStore, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = store.len();
    let dim = store.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];

    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(store.row(first));
    let mut min_d: Vec<f64> = store
        .rows()
        .map(|r| squared_distance(r, store.row(first)))
        .collect();

    for _ in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in min_d.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // All remaining rows coincide with a chosen centroid.
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[pick] = true;
        let row = store.row(pick);
        centroids.extend_from_slice(row);
        for (d, r) in min_d.iter_mut().zip(store.rows()) {
            *d = d.min(squared_distance(r, row));
        }
    }
    centroids
}

fn assign_all(store: &EmbeddingStore, centroids: &[f32], labels: &mut [u32]) -> f64 {
    let dim = store.dim();
    let mut inertia = 0.0;
    for (label, row) in labels.iter_mut().zip(store.rows()) {
        let (c, d) = nearest(row, centroids, dim);
        *label = c as u32;
        inertia += d;
    }
    inertia
}

fn update_centroids(store: &EmbeddingStore, labels: &[u32], centroids: &mut [f32], k: usize) {
    let dim = store.dim();
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (row, &c) in store.rows().zip(labels) {
        let c = c as usize;
        counts[c] += 1;
        for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
            *s += x as f64;
        }
    }

    // Distances to the pre-update centroids pick reseed targets for empty clusters.
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    let mut reseeds = Vec::with_capacity(empty.len());
    if !empty.is_empty() {
        let mut far: Vec<(usize, f64)> = store
            .rows()
            .zip(labels)
            .enumerate()
            .map(|(i, (row, &c))| {
                let c = c as usize;
                (i, squared_distance(row, &centroids[c * dim..(c + 1) * dim]))
            })
            .collect();
        far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        reseeds.extend(far.into_iter().take(empty.len()).map(|(i, _)| i));
    }

    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for (dst, &s) in centroids[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(&sums[c * dim..(c + 1) * dim])
        {
            *dst = (s * inv) as f32;
        }
    }
    for (&c, &row) in empty.iter().zip(&reseeds) {
        centroids[c * dim..(c + 1) * dim].copy_from_slice(store.row(row));
    }
}

const MODEL_MAGIC: &str = "LTDC 1";

/// Writes the cluster model.
///
/// A text header (`LTDC 1`, then `k=`, `d=`, `n=`, `inertia=`, `seed=` lines and
/// a blank line) is followed by the centroids as an LTDE block (ids `c0..`) and
/// `n` little-endian u32 assignments.
pub fn write_model(model: &ClusterModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&model_to_bytes(model)?)?;
    w.flush()?;
    Ok(())
}

pub fn model_to_bytes(model: &ClusterModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "{MODEL_MAGIC}")?;
    writeln!(out, "k={}", model.k)?;
    writeln!(out, "d={}", model.dim)?;
    writeln!(out, "n={}", model.assignments.len())?;
    writeln!(out, "inertia={:?}", model.inertia)?;
    writeln!(out, "seed={}", model.seed)?;
    writeln!(out)?;
    let ids = (0..model.k).map(|c| format!("c{c}")).collect();
    let block = EmbeddingStore::new(model.centroids.clone(), model.dim, false, ids)?;
    out.extend(block.to_bytes());
    for &a in &model.assignments {
        out.extend_from_slice(&a.to_le_bytes());
    }
    Ok(out)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ClusterModel> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    model_from_bytes(&bytes)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ClusterModel> {
    let bad = |m: String| ClusterError::Format(m);
    let mut reader = BufReader::new(bytes);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != MODEL_MAGIC {
        return Err(bad(format!("bad header line {:?}", line.trim_end())));
    }
    let mut fields = std::collections::BTreeMap::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(bad("header not terminated".into()));
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        let (key, value) = l
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line {l:?}")))?;
        fields.insert(key.to_string(), value.to_string());
    }
    let get = |key: &str| {
        fields
            .get(key)
            .ok_or_else(|| bad(format!("missing `{key}`")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?.parse().map_err(|e| bad(format!("`{key}`: {e}")))
    };
    let k = parse_usize("k")?;
    let d = parse_usize("d")?;
    let n = parse_usize("n")?;
    let inertia: f64 = get("inertia")?
        .parse()
        .map_err(|e| bad(format!("`inertia`: {e}")))?;
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|e| bad(format!("`seed`: {e}")))?;

    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    let assign_len = n
        .checked_mul(4)
        .filter(|&l| l <= rest.len())
        .ok_or_else(|| bad("truncated assignments".into()))?;
    let (block, tail) = rest.split_at(rest.len() - assign_len);
    let centroids = EmbeddingStore::from_bytes(block)?;
    if centroids.len() != k || centroids.dim() != d {
        return Err(bad(format!(
            "centroid block is {}x{}, header says {k}x{d}",
            centroids.len(),
            centroids.dim()
        )));
    }
    let assignments: Vec<u32> = tail
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(&a) = assignments.iter().find(|&&a| a as usize >= k) {
        return Err(bad(format!("assignment {a} out of range for k={k}")));
    }
    Ok(ClusterModel {
        k,
        dim: d,
        centroids: centroids.as_slice().to_vec(),
        assignments,
        inertia,
        seed,
    })
}
