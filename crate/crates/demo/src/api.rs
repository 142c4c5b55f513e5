//! JSON-in, JSON-out operations behind the wasm exports.

use ltd_core::pipeline::select;
use ltd_core::scoring::{predict, OptionProbabilities};
use ltd_core::synthetic::{blobs, BlobConfig, SyntheticCorpus};
use ltd_core::{Method, SelectionSettings};
use serde::{Deserialize, Serialize};

const TASK: &str = "demo";

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Blob sizes; blob `b` carries dataset label `D{b}`.
    pub sizes: Vec<usize>,
    pub spread: f64,
    /// Seed for the pool geometry.
    pub seed: u64,
    pub method: Method,
    pub proportion: f64,
    pub k: Option<usize>,
    /// Seed for clustering and the random baseline.
    pub selection_seed: u64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            sizes: vec![40, 30, 15, 10, 5],
            spread: 0.15,
            seed: 1,
            method: Method::Coreset,
            proportion: 0.1,
            k: None,
            selection_seed: 0,
        }
    }
}

impl Params {
    fn pool(&self) -> Result<SyntheticCorpus, String> {
        let total: usize = self.sizes.iter().sum();
        if total == 0 || total > 5000 {
            return Err(format!("pool size must be in 1..=5000, got {total}"));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(format!(
                "spread must be a nonnegative number, got {}",
                self.spread
            ));
        }
        Ok(blobs(&BlobConfig {
            sizes: self.sizes.clone(),
            dim: 3,
            spread: self.spread,
            seed: self.seed,
            task: TASK.into(),
        }))
    }
}

#[derive(Debug, Serialize)]
pub struct PoolView {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct SelectionView {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub method: Method,
    pub k: usize,
    pub clusters: Vec<u32>,
    pub inertia: f64,
    pub modal_cluster: usize,
    pub distribution_center: [f64; 2],
    pub task_center: usize,
    /// Selected rows in selection order.
    pub selected: Vec<usize>,
    pub coverage_radius: f64,
    /// Selected rows per blob.
    pub label_counts: Vec<usize>,
    /// Shannon entropy (nats) of the selected rows' blob labels.
    pub entropy: f64,
}

#[derive(Debug, Serialize)]
pub struct ScoreView {
    pub chosen: usize,
    pub log_scores: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Lambert azimuthal equal-area projection of the unit sphere around `center`.
/// The whole sphere lands in a disk of radius 2.
pub struct Projection {
    center: [f64; 3],
    e1: [f64; 3],
    e2: [f64; 3],
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit3(v: [f64; 3]) -> [f64; 3] {
    let n = dot3(&v, &v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

impl Projection {
    pub fn around(center: [f64; 3]) -> Self {
        let center = if dot3(&center, &center) > 1e-12 {
            unit3(center)
        } else {
            [0.0, 0.0, 1.0]
        };
        // Start from the axis least aligned with the center.
        let axis = (0..3)
            .min_by(|&a, &b| center[a].abs().total_cmp(&center[b].abs()))
            .unwrap();
        let mut seed = [0.0; 3];
        seed[axis] = 1.0;
        let along = dot3(&seed, &center);
        let e1 = unit3([
            seed[0] - along * center[0],
            seed[1] - along * center[1],
            seed[2] - along * center[2],
        ]);
        let e2 = [
            center[1] * e1[2] - center[2] * e1[1],
            center[2] * e1[0] - center[0] * e1[2],
            center[0] * e1[1] - center[1] * e1[0],
        ];
        Self { center, e1, e2 }
    }

    pub fn project(&self, p: &[f32]) -> [f64; 2] {
        let p = [p[0] as f64, p[1] as f64, p[2] as f64];
        let (x, y) = (dot3(&p, &self.e1), dot3(&p, &self.e2));
        // Radius on the disk is the chord length to the center, 2 sin(theta / 2).
        let r = (2.0 * (1.0 - dot3(&p, &self.center))).max(0.0).sqrt();
        let lateral = (x * x + y * y).sqrt();
        if lateral < 1e-12 {
            return [r, 0.0];
        }
        [r * x / lateral, r * y / lateral]
    }
}

fn view_of(syn: &SyntheticCorpus) -> (Projection, Vec<[f64; 2]>) {
    let mut mean = [0.0; 3];
    for row in syn.store.rows() {
        for j in 0..3 {
            mean[j] += row[j] as f64;
        }
    }
    let proj = Projection::around(mean);
    let points = syn.store.rows().map(|r| proj.project(r)).collect();
    (proj, points)
}

fn parse_params(json: &str) -> Result<Params, String> {
    if json.trim().is_empty() {
        return Ok(Params::default());
    }
    serde_json::from_str(json).map_err(|e| format!("bad parameters: {e}"))
}

pub fn generate(params: &Params) -> Result<PoolView, String> {
    let syn = params.pool()?;
    let (_, points) = view_of(&syn);
    Ok(PoolView {
        points,
        labels: syn.labels,
    })
}

pub fn run_selection(params: &Params) -> Result<SelectionView, String> {
    let syn = params.pool()?;
    let (proj, points) = view_of(&syn);
    let settings = SelectionSettings {
        k: params.k,
        ..SelectionSettings::new(
            TASK,
            params.method,
            params.proportion,
            params.selection_seed,
        )
    };
    let run = select(&syn.store, &syn.corpus, &settings).map_err(|e| e.to_string())?;

    let mut label_counts = vec![0; params.sizes.len()];
    for &i in &run.selection.indices {
        label_counts[syn.labels[i]] += 1;
    }
    let n = run.selection.indices.len() as f64;
    let entropy = label_counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .abs();

    Ok(SelectionView {
        points,
        labels: syn.labels,
        method: params.method,
        k: run.model.k(),
        clusters: run.model.assignments().to_vec(),
        inertia: run.model.inertia(),
        modal_cluster: run.centers.modal_cluster,
        distribution_center: proj.project(&run.centers.distribution_center),
        task_center: run.centers.task_center_index,
        selected: run.selection.indices,
        coverage_radius: run.selection.coverage_radius,
        label_counts,
        entropy,
    })
}

pub fn score(options: &[Vec<f64>]) -> Result<ScoreView, String> {
    let opts: Vec<OptionProbabilities> = options
        .iter()
        .cloned()
        .map(OptionProbabilities::new)
        .collect();
    let pred = predict(&opts).map_err(|e| e.to_string())?;
    Ok(ScoreView {
        chosen: pred.chosen,
        probabilities: pred.scores.iter().map(|s| s.exp()).collect(),
        log_scores: pred.scores,
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn generate_json(params: &str) -> Result<String, String> {
    to_json(&generate(&parse_params(params)?)?)
}

pub fn select_json(params: &str) -> Result<String, String> {
    to_json(&run_selection(&parse_params(params)?)?)
}

/// Accepts either `[[p, ...], ...]` or `{"options": [[p, ...], ...]}`.
pub fn score_json(input: &str) -> Result<String, String> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Input {
        Bare(Vec<Vec<f64>>),
        Wrapped { options: Vec<Vec<f64>> },
    }
    let options = match serde_json::from_str(input).map_err(|e| format!("bad options: {e}"))? {
        Input::Bare(o) | Input::Wrapped { options: o } => o,
    };
    to_json(&score(&options)?)
}
