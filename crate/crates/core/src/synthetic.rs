//! Seeded synthetic corpora: Gaussian blobs projected onto the unit sphere.
//!
//! Used by the test suites, the CLI `synth` command and the browser demo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data_model::SampleRecord;
use crate::embedding_store::{l2_normalize, EmbeddingStore};

#[derive(Clone, Debug)]
pub struct BlobConfig {
    /// Number of samples in each blob; blob `b` gets dataset label `D{b}`.
    pub sizes: Vec<usize>,
    pub dim: usize,
    /// Per-coordinate standard deviation around the blob center, before projection.
    pub spread: f64,
    pub seed: u64,
    pub task: String,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub store: EmbeddingStore,
    pub corpus: Vec<SampleRecord>,
    /// Blob index of each row.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f32>>,
}

pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim)
            .map(|_| StandardNormal.sample(rng))
            .map(|x: f64| x as f32)
            .collect();
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

/// Blob centers drawn uniformly on the sphere; rows shuffled so blobs interleave.
pub fn blobs(cfg: &BlobConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<Vec<f32>> = cfg
        .sizes
        .iter()
        .map(|_| random_unit(&mut rng, cfg.dim))
        .collect();
    blobs_around(&centers, cfg, &mut rng)
}

/// Like [`blobs`] but with caller-chosen centers.
pub fn blobs_around<R: Rng>(
    centers: &[Vec<f32>],
    cfg: &BlobConfig,
    rng: &mut R,
) -> SyntheticCorpus {
    let mut points: Vec<(usize, Vec<f32>)> = Vec::new();
    for (b, (&size, center)) in cfg.sizes.iter().zip(centers).enumerate() {
        for _ in 0..size {
            loop {
                let v: Vec<f32> = center
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(rng);
                        (c as f64 + cfg.spread * z) as f32
                    })
                    .collect();
                if let Ok(u) = l2_normalize(&v) {
                    points.push((b, u));
                    break;
                }
            }
        }
    }
    // Fisher-Yates, so row order carries no blob information.
    for i in (1..points.len()).rev() {
        let j = rng.random_range(0..=i);
        points.swap(i, j);
    }

    let ids: Vec<String> = (0..points.len()).map(|i| format!("syn-{i:05}")).collect();
    let corpus = ids
        .iter()
        .zip(&points)
        .map(|(id, (b, _))| SampleRecord {
            id: id.clone(),
            task: cfg.task.clone(),
            dataset: format!("D{b}"),
            text: String::new(),
            token_count: 1 + rng.random_range(20..120),
        })
        .collect();
    let rows: Vec<Vec<f32>> = points.iter().map(|(_, v)| v.clone()).collect();
    let store = EmbeddingStore::from_rows(&rows, ids, true).expect("rows are unit vectors");
    SyntheticCorpus {
        store,
        corpus,
        labels: points.iter().map(|(b, _)| *b).collect(),
        centers: centers.to_vec(),
    }
}
