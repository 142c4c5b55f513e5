//! Library results checked against independent brute-force recomputations.

mod common;

use common::*;
use ltd_core::center_finder::{cosine_similarity, task_center};
use ltd_core::clustering::{kmeans, KMeansConfig};
use ltd_core::coreset_sampler::{coverage_radius, kcenter_greedy, mixed, SelectionBudget};
use ltd_core::embedding_store::l2_normalize;
use ltd_core::scoring::{predict, OptionProbabilities};
use ltd_core::EmbeddingStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_blobs_split_like_the_optimal_bipartition() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..20 {
        let n = rng.random_range(4..=10);
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|i| {
                let eps: f32 = rng.random_range(-0.05..0.05);
                let base = if i % 2 == 0 { [1.0, eps] } else { [eps, 1.0] };
                l2_normalize(&base).unwrap()
            })
            .collect();
        let (store, _) = single_task(&rows, "T");
        let model = kmeans(&store, &KMeansConfig::new(2, trial)).unwrap();
        let got: Vec<usize> = model.assignments().iter().map(|&a| a as usize).collect();
        let blob: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let (_, optimal) = optimal_two_partition(&rows);
        assert!(same_partition(&got, &blob), "trial {trial}: {got:?}");
        assert!(
            same_partition(&optimal, &blob),
            "trial {trial}: optimal {optimal:?}"
        );
    }
}

#[test]
fn kmeans_plus_plus_is_near_optimal_on_small_instances() {
    for instance in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + instance);
        let n = rng.random_range(3..=10);
        let d = rng.random_range(2..=3);
        let rows = random_rows(&mut rng, n, d);
        let (store, _) = single_task(&rows, "T");
        let model = kmeans(&store, &KMeansConfig::new(2, instance)).unwrap();
        let (best, _) = optimal_two_partition(&rows);
        assert!(
            model.inertia() <= best * 1.25 + 1e-9,
            "instance {instance}: {} vs optimal {best}",
            model.inertia()
        );
    }
}

#[test]
fn task_center_matches_explicit_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let rows = random_rows(&mut rng, 6, 3);
        let dc = ltd_core::synthetic::random_unit(&mut rng, 3);
        let (store, corpus) = single_task(&rows, "T");
        let got = task_center(&store, &corpus, "T", &dc).unwrap();
        let mut best = 0;
        for i in 1..rows.len() {
            if naive_dot(&rows[i], &dc) > naive_dot(&rows[best], &dc) {
                best = i;
            }
        }
        assert_eq!(got, best);
        for r in &rows {
            assert!(
                cosine_similarity(r, &dc).unwrap() <= cosine_similarity(&rows[got], &dc).unwrap()
            );
        }
    }
}

#[test]
fn greedy_matches_naive_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let rows = random_rows(&mut rng, 10, 3);
        let (store, corpus) = single_task(&rows, "T");
        let initial = rng.random_range(0..10);
        let sel = kcenter_greedy(
            &store,
            &corpus,
            "T",
            initial,
            SelectionBudget::count(3, 10).unwrap(),
        )
        .unwrap();
        let pool: Vec<usize> = (0..10).collect();
        assert_eq!(sel.indices, naive_greedy(&rows, &pool, initial, 3));
        assert_eq!(
            sel.coverage_radius,
            naive_radius(&rows, &pool, &sel.indices)
        );
    }
}

#[test]
fn greedy_picks_are_farthest_at_every_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let rows = random_rows(&mut rng, 40, 4);
    let (store, corpus) = single_task(&rows, "T");
    let sel = kcenter_greedy(
        &store,
        &corpus,
        "T",
        7,
        SelectionBudget::count(12, 40).unwrap(),
    )
    .unwrap();
    for t in 1..sel.indices.len() {
        let before = &sel.indices[..t];
        let dist_to = |p: usize| {
            before
                .iter()
                .map(|&s| naive_cos_dist(&rows, p, s))
                .fold(f64::INFINITY, f64::min)
        };
        let picked = dist_to(sel.indices[t]);
        for p in (0..40).filter(|p| !before.contains(p)) {
            assert!(picked >= dist_to(p), "step {t}: row {p} is farther");
        }
    }
}

#[test]
fn mixed_is_top_half_plus_bottom_half_of_a_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let rows = random_rows(&mut rng, 8, 3);
        let dc = ltd_core::synthetic::random_unit(&mut rng, 3);
        let (store, corpus) = single_task(&rows, "T");
        let got = mixed(
            &store,
            &corpus,
            "T",
            &dc,
            SelectionBudget::count(4, 8).unwrap(),
        )
        .unwrap();
        let mut order: Vec<usize> = (0..8).collect();
        order.sort_by(|&a, &b| {
            naive_dot(&rows[b], &dc)
                .partial_cmp(&naive_dot(&rows[a], &dc))
                .unwrap()
        });
        let mut expect: Vec<usize> = order[..2].iter().chain(&order[6..]).copied().collect();
        let mut got_set = got.indices.clone();
        expect.sort();
        got_set.sort();
        assert_eq!(got_set, expect);
    }
}

#[test]
fn coverage_radius_matches_exhaustive_max_min() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let rows = random_rows(&mut rng, 6, 3);
        let (store, _) = single_task(&rows, "T");
        let pool: Vec<usize> = (0..6).collect();
        let a = rng.random_range(0..6);
        let b = (a + rng.random_range(1..6)) % 6;
        let got = coverage_radius(&store, &pool, &[a, b]).unwrap();
        assert_eq!(got, naive_radius(&rows, &pool, &[a, b]));
    }
}

#[test]
fn greedy_is_within_twice_optimal_on_small_instances() {
    for instance in 0..60u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(instance);
        let n = rng.random_range(2..=10);
        let rows = random_rows(&mut rng, n, 3);
        let (store, corpus) = single_task(&rows, "T");
        let budget = rng.random_range(1..=n.min(4));
        let initial = rng.random_range(0..n);
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
        assert!(sel.coverage_radius <= 2.0 * opt, "instance {instance}");
    }
}

#[test]
fn predict_agrees_with_exact_product_comparison() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..1000 {
        let options: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let len = rng.random_range(1..=8);
                (0..len).map(|_| rng.random_range(1e-3..=1.0)).collect()
            })
            .collect();
        let expect = exact_argmax(&options);
        let opts: Vec<OptionProbabilities> =
            options.into_iter().map(OptionProbabilities::new).collect();
        assert_eq!(predict(&opts).unwrap().chosen, expect, "case {case}");
    }
}

#[test]
fn store_bytes_match_hand_encoding() {
    let store =
        EmbeddingStore::from_rows(&[vec![1.5, -2.0]], vec!["ab".to_string()], false).unwrap();
    let mut expect = b"LTDE".to_vec();
    expect.extend(1u16.to_le_bytes());
    expect.extend([0u8, 0u8]);
    expect.extend(1u64.to_le_bytes());
    expect.extend(2u32.to_le_bytes());
    expect.extend(1.5f32.to_le_bytes());
    expect.extend((-2.0f32).to_le_bytes());
    expect.extend(2u16.to_le_bytes());
    expect.extend(b"ab");
    assert_eq!(store.to_bytes(), expect);
}
