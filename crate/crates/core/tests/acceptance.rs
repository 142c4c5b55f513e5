//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Runs entirely on synthetic data.

mod common;

use std::fs;
use std::panic;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use ltd_core::budget::stats;
use ltd_core::clustering::{kmeans, kmeans_traced, KMeansConfig};
use ltd_core::coreset_sampler::{kcenter_greedy, SelectionBudget};
use ltd_core::data_model::write_corpus;
use ltd_core::embedding_store::{l2_normalize, read_store, read_token_dump, write_store};
use ltd_core::pipeline::{
    run_pipeline, select, CENTERS_FILE, CLUSTERS_FILE, REPORT_FILE, SELECTION_FILE,
};
use ltd_core::scoring::{option_probability, predict, OptionProbabilities};
use ltd_core::synthetic::{blobs, blobs_around, BlobConfig};
use ltd_core::{Method, PipelineConfig, SampleRecord, SelectionSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn two_approximation() -> Outcome {
    let start = Instant::now();
    let mut violations = 0;
    let mut worst = 0.0f64;
    for instance in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE + instance);
        let n = rng.random_range(1..=12);
        let d = rng.random_range(1..=3);
        let budget = rng.random_range(1..=n.min(4));
        let initial = rng.random_range(0..n);
        let rows = random_rows(&mut rng, n, d);
        let (store, corpus) = single_task(&rows, "T");
        let sel = kcenter_greedy(
            &store,
            &corpus,
            "T",
            initial,
            SelectionBudget::count(budget, n).unwrap(),
        )
        .unwrap();
        let pool: Vec<usize> = (0..n).collect();
        let opt = optimal_radius_with(&rows, &pool, initial, budget);
        if opt > 0.0 {
            worst = worst.max(sel.coverage_radius / opt);
        }
        if sel.coverage_radius > 2.0 * opt {
            violations += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        violations == 0 && elapsed < Duration::from_secs(60),
        format!("200 instances, {violations} violations, worst ratio {worst:.3}, {elapsed:.2?} (limit 60s)"),
    )
}

fn greedy_oracle() -> Outcome {
    let mut mismatches = 0;
    for instance in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0EAC1E + instance);
        let n = rng.random_range(1..=200);
        let d = rng.random_range(2..=16);
        let budget = rng.random_range(1..=n.min(20));
        let initial = rng.random_range(0..n);
        let rows = random_rows(&mut rng, n, d);
        let (store, corpus) = single_task(&rows, "T");
        let sel = kcenter_greedy(
            &store,
            &corpus,
            "T",
            initial,
            SelectionBudget::count(budget, n).unwrap(),
        )
        .unwrap();
        let pool: Vec<usize> = (0..n).collect();
        if sel.indices != naive_greedy(&rows, &pool, initial, budget) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("50 instances, {mismatches} mismatches"),
    )
}

fn coverage_monotone() -> Outcome {
    let mut increases = 0;
    let mut nonzero_full = 0;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FE + instance);
        let n = rng.random_range(2..=60);
        let d = rng.random_range(2..=8);
        let rows = random_rows(&mut rng, n, d);
        let (store, corpus) = single_task(&rows, "T");
        let initial = rng.random_range(0..n);
        let mut prev = f64::INFINITY;
        for b in 1..=n {
            let r = kcenter_greedy(
                &store,
                &corpus,
                "T",
                initial,
                SelectionBudget::count(b, n).unwrap(),
            )
            .unwrap()
            .coverage_radius;
            if r > prev {
                increases += 1;
            }
            prev = r;
        }
        if prev != 0.0 {
            nonzero_full += 1;
        }
    }
    outcome(
        increases == 0 && nonzero_full == 0,
        format!("20 instances, {increases} increases, {nonzero_full} nonzero full-budget radii"),
    )
}

fn kmeans_inertia_trace() -> Outcome {
    let syn = blobs(&BlobConfig {
        sizes: vec![300, 250, 200, 150, 100],
        dim: 8,
        spread: 0.15,
        seed: 2024,
        task: "T".into(),
    });
    let mut runs = 0;
    let mut increases = 0;
    for k in [1, 2, 5, 10, 25] {
        for seed in 0..4 {
            let (_, traces) = kmeans_traced(&syn.store, &KMeansConfig::new(k, seed)).unwrap();
            for trace in &traces {
                runs += 1;
                increases += trace.windows(2).filter(|w| w[1] > w[0]).count();
            }
        }
    }
    outcome(
        increases == 0,
        format!("1000 points, {runs} Lloyd runs, {increases} per-iteration increases"),
    )
}

fn kmeans_recovery() -> Outcome {
    let sigma = 0.03;
    let centers = vec![
        vec![1.0f32, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    let mut recovered = 0;
    let mut worst_ratio = f64::INFINITY;
    for seed in 0..100u64 {
        let cfg = BlobConfig {
            sizes: vec![100, 100, 100],
            dim: 3,
            spread: sigma,
            seed,
            task: "T".into(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let syn = blobs_around(&centers, &cfg, &mut rng);
        // Spread is the RMS distance of a blob's rows to its center.
        let mut sq = 0.0;
        for (i, &l) in syn.labels.iter().enumerate() {
            let row = syn.store.row(i);
            sq += row
                .iter()
                .zip(&centers[l])
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>();
        }
        let spread = (sq / 300.0).sqrt();
        worst_ratio = worst_ratio.min(2f64.sqrt() / spread);
        let model = kmeans(&syn.store, &KMeansConfig::new(3, seed)).unwrap();
        let got: Vec<usize> = model.assignments().iter().map(|&a| a as usize).collect();
        if same_partition(&got, &syn.labels) {
            recovered += 1;
        }
    }
    outcome(
        recovered >= 95 && worst_ratio >= 10.0,
        format!(
            "{recovered}/100 exact recoveries (need 95), separation/spread >= {worst_ratio:.1}"
        ),
    )
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dir = tempfile::tempdir().unwrap();

    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let names: Vec<String> = (0..200).map(|i| format!("s{i}")).collect();
    for name in &names {
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        for _ in 0..rng.random_range(1..=16) {
            rows.push(
                (0..24)
                    .map(|_| (scale * gauss(&mut rng)) as f32)
                    .collect::<Vec<f32>>(),
            );
            ids.push(name.as_str());
        }
    }
    let dump = dir.path().join("tokens.ltde");
    fs::write(&dump, encode_ltde(&rows, &ids, false)).unwrap();
    let pooled = read_token_dump(&dump).unwrap().pool_tokens().unwrap();
    let out = dir.path().join("pooled.ltde");
    write_store(&pooled, &out).unwrap();
    let stored = read_store(&out).unwrap();
    let worst_norm = stored
        .rows()
        .map(|r| (naive_dot(r, r).sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    let pool_ok = stored.len() == names.len() && stored.is_normalized() && worst_norm <= 1e-6;

    let mut worst_drift = 0.0f64;
    for _ in 0..10_000 {
        let d = rng.random_range(1..=64);
        let scale = 10f64.powf(rng.random_range(-4.0..4.0));
        let v: Vec<f32> = (0..d).map(|_| (scale * gauss(&mut rng)) as f32).collect();
        let Ok(once) = l2_normalize(&v) else { continue };
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            worst_drift = worst_drift.max((a - b).abs() as f64);
        }
        worst_drift = worst_drift.max((naive_dot(&once, &once).sqrt() - 1.0).abs());
    }
    outcome(
        pool_ok && worst_drift <= 1e-6,
        format!(
            "{} pooled rows, max |norm-1| {worst_norm:.1e}; 10000 vectors, max idempotence drift {worst_drift:.1e}",
            stored.len()
        ),
    )
}

fn scoring_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut disagreements = 0;
    let mut ties = 0;
    for _ in 0..1000 {
        let count = rng.random_range(2..=5);
        let mut options: Vec<Vec<f64>> = Vec::with_capacity(count);
        for _ in 0..count {
            let roll = rng.random_range(0..10);
            let opt = if roll == 0 && !options.is_empty() {
                // A reordered copy of an earlier option: an exact tie.
                let mut copy = options[rng.random_range(0..options.len())].clone();
                copy.reverse();
                ties += 1;
                copy
            } else {
                let len = rng.random_range(1..=8);
                (0..len).map(|_| 1.0 - rng.random::<f64>()).collect()
            };
            options.push(opt);
        }
        let opts: Vec<OptionProbabilities> = options
            .iter()
            .cloned()
            .map(OptionProbabilities::new)
            .collect();
        if predict(&opts).unwrap().chosen != exact_argmax(&options) {
            disagreements += 1;
        }
    }
    let long = option_probability(&OptionProbabilities::new(vec![0.05; 400])).unwrap();
    let long_vs = predict(&[
        OptionProbabilities::new(vec![0.05; 400]),
        OptionProbabilities::new(vec![0.06; 400]),
    ])
    .unwrap();
    let pass = disagreements == 0 && long.is_finite() && long_vs.chosen == 1;
    outcome(
        pass,
        format!(
            "1000 cases ({ties} planted ties), {disagreements} disagreements; 400-token log score {long:.2}"
        ),
    )
}

fn budget_arithmetic() -> Outcome {
    let resolved = SelectionBudget::from_proportion(0.1, 160_000)
        .unwrap()
        .resolved_count;
    let corpus = vec![
        SampleRecord {
            id: "nli".into(),
            task: "NLI".into(),
            dataset: "RTE".into(),
            text: String::new(),
            token_count: 1_900_000,
        },
        SampleRecord {
            id: "rest".into(),
            task: "SC".into(),
            dataset: "IMDB".into(),
            text: String::new(),
            token_count: 380_900_000,
        },
    ];
    let report = stats(&corpus, &["nli".to_string()], None, Some(382_800_000)).unwrap();
    let of_corpus = report.percent_of_task.display.clone();
    let of_reference = report
        .percent_of_reference
        .as_ref()
        .unwrap()
        .display
        .clone();
    outcome(
        resolved == 16_000 && of_corpus == "0.50" && of_reference == "0.50",
        format!("0.1 x 160000 -> {resolved}; 1.9M / 382.8M -> {of_corpus}% (corpus), {of_reference}% (reference)"),
    )
}

fn diversity() -> Outcome {
    let mut wins = 0;
    let mut log = Vec::new();
    for seed in 0..20u64 {
        let syn = blobs(&BlobConfig {
            sizes: vec![40, 30, 15, 10, 5],
            dim: 8,
            spread: 0.05,
            seed: 500 + seed,
            task: "NLI".into(),
        });
        let entropy_of = |method| {
            let run = select(
                &syn.store,
                &syn.corpus,
                &SelectionSettings::new("NLI", method, 0.1, seed),
            )
            .unwrap();
            entropy(
                run.selection
                    .indices
                    .iter()
                    .map(|&i| syn.corpus[i].dataset.as_str()),
            )
        };
        let (core, top) = (entropy_of(Method::Coreset), entropy_of(Method::TopK));
        if core > top {
            wins += 1;
        }
        log.push(format!("{core:.2}/{top:.2}"));
    }
    outcome(
        wins >= 18,
        format!(
            "coreset > topK entropy in {wins}/20 seeds (need 18); coreset/topK: {}",
            log.join(" ")
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let syn = blobs(&BlobConfig {
        sizes: vec![120, 80, 60, 40],
        dim: 16,
        spread: 0.1,
        seed: 9,
        task: "NLI".into(),
    });
    let corpus = dir.path().join("corpus.jsonl");
    let embeddings = dir.path().join("emb.ltde");
    write_corpus(&syn.corpus, &corpus).unwrap();
    write_store(&syn.store, &embeddings).unwrap();
    let mut identical = 0;
    let mut compared = 0;
    for method in Method::ALL {
        let run = |name: &str| {
            let cfg: PipelineConfig = serde_json::from_value(serde_json::json!({
                "corpus": corpus,
                "embeddings": embeddings,
                "task": "NLI",
                "method": method.as_str(),
                "proportion": 0.1,
                "seed": 31,
                "output": dir.path().join(format!("{method}-{name}")),
                "reference_tokens": 5_000_000u64,
            }))
            .unwrap();
            run_pipeline(&cfg).unwrap();
            cfg.output
        };
        let (a, b) = (run("a"), run("b"));
        for file in [CLUSTERS_FILE, CENTERS_FILE, SELECTION_FILE, REPORT_FILE] {
            compared += 1;
            if fs::read(a.join(file)).unwrap() == fs::read(b.join(file)).unwrap() {
                identical += 1;
            }
        }
    }
    outcome(
        identical == compared,
        format!(
            "{identical}/{compared} output files byte-identical across two runs of each method"
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("kcenter-2-approximation", two_approximation),
        ("greedy-oracle-equivalence", greedy_oracle),
        ("coverage-monotonicity", coverage_monotone),
        ("kmeans-inertia-non-increasing", kmeans_inertia_trace),
        ("kmeans-partition-recovery", kmeans_recovery),
        ("normalization-invariants", normalization),
        ("scoring-oracle", scoring_oracle),
        ("budget-arithmetic", budget_arithmetic),
        ("diversity-entropy", diversity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {} [{:.2?}]", result.detail, start.elapsed());
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
