//! Test-only oracles. Each one recomputes a quantity the slow, obvious way and
//! shares no code path with the library beyond reading store rows.

#![allow(dead_code)]

use ltd_core::synthetic::random_unit;
use ltd_core::{EmbeddingStore, SampleRecord};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;

pub fn record(id: &str, task: &str, dataset: &str) -> SampleRecord {
    SampleRecord {
        id: id.to_string(),
        task: task.to_string(),
        dataset: dataset.to_string(),
        text: String::new(),
        token_count: 1,
    }
}

/// A unit-vector store plus corpus where every row carries `task`.
pub fn single_task(rows: &[Vec<f32>], task: &str) -> (EmbeddingStore, Vec<SampleRecord>) {
    let ids: Vec<String> = (0..rows.len()).map(|i| format!("r{i}")).collect();
    let corpus = ids.iter().map(|id| record(id, task, "d")).collect();
    (EmbeddingStore::from_rows(rows, ids, true).unwrap(), corpus)
}

pub fn random_rows<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..n).map(|_| random_unit(rng, dim)).collect()
}

pub fn naive_dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

pub fn naive_cos_dist(rows: &[Vec<f32>], a: usize, b: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let d = 1.0 - naive_dot(&rows[a], &rows[b]);
    if d < 0.0 {
        0.0
    } else {
        d
    }
}

/// Chord-scale coverage radius by a plain double loop.
pub fn naive_radius(rows: &[Vec<f32>], pool: &[usize], selected: &[usize]) -> f64 {
    let mut worst = 0.0f64;
    for &p in pool {
        let mut best = f64::INFINITY;
        for &s in selected {
            let d = naive_cos_dist(rows, p, s);
            if d < best {
                best = d;
            }
        }
        if best > worst {
            worst = best;
        }
    }
    (2.0 * worst).sqrt()
}

/// Farthest-point greedy recomputing every min-distance from scratch at each step.
pub fn naive_greedy(
    rows: &[Vec<f32>],
    pool: &[usize],
    initial: usize,
    budget: usize,
) -> Vec<usize> {
    let mut selected = vec![initial];
    while selected.len() < budget {
        let mut best: Option<(usize, f64)> = None;
        for &p in pool {
            if selected.contains(&p) {
                continue;
            }
            let mut nearest = f64::INFINITY;
            for &s in &selected {
                nearest = nearest.min(naive_cos_dist(rows, p, s));
            }
            match best {
                Some((_, d)) if nearest <= d => {}
                _ => best = Some((p, nearest)),
            }
        }
        selected.push(best.unwrap().0);
    }
    selected
}

pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(n, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(n, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Optimal k-center radius over all center sets of size `budget` that contain `initial`.
pub fn optimal_radius_with(
    rows: &[Vec<f32>],
    pool: &[usize],
    initial: usize,
    budget: usize,
) -> f64 {
    let others: Vec<usize> = pool.iter().copied().filter(|&p| p != initial).collect();
    combinations(others.len(), budget - 1)
        .into_iter()
        .map(|combo| {
            let mut sel = vec![initial];
            sel.extend(combo.iter().map(|&i| others[i]));
            naive_radius(rows, pool, &sel)
        })
        .fold(f64::INFINITY, f64::min)
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).powi(2)).sum()
}

/// Minimum 2-means inertia over every nonempty bipartition (n <= ~16).
/// Returns (inertia, labels) with row 0 always in group 0.
pub fn optimal_two_partition(rows: &[Vec<f32>]) -> (f64, Vec<usize>) {
    let n = rows.len();
    let dim = rows[0].len();
    let mut best = (f64::INFINITY, vec![]);
    for mask in 1u32..(1 << (n - 1)) {
        let labels: Vec<usize> = (0..n)
            .map(|i| {
                if i > 0 && mask & (1 << (i - 1)) != 0 {
                    1
                } else {
                    0
                }
            })
            .collect();
        let mut inertia = 0.0;
        for g in 0..2 {
            let members: Vec<&Vec<f32>> = rows
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == g)
                .map(|(r, _)| r)
                .collect();
            let mut mean = vec![0.0; dim];
            for m in &members {
                for j in 0..dim {
                    mean[j] += m[j] as f64 / members.len() as f64;
                }
            }
            inertia += members.iter().map(|m| sq_dist(m, &mean)).sum::<f64>();
        }
        if inertia < best.0 {
            best = (inertia, labels);
        }
    }
    best
}

/// True when two labelings agree up to a relabeling of clusters.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut map = std::collections::HashMap::new();
    let mut back = std::collections::HashMap::new();
    a.iter()
        .zip(b)
        .all(|(&x, &y)| *map.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

/// Shannon entropy (nats) of label frequencies.
pub fn entropy<'a>(labels: impl IntoIterator<Item = &'a str>) -> f64 {
    let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
    let mut n = 0usize;
    for l in labels {
        *counts.entry(l).or_default() += 1;
        n += 1;
    }
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum::<f64>()
        .abs()
}

/// Exact rational product of an option's token probabilities. Every finite
/// f64 is a dyadic rational, so this comparison has no rounding at all.
pub fn exact_product(probs: &[f64]) -> BigRational {
    probs
        .iter()
        .fold(BigRational::from_integer(BigInt::from(1)), |acc, &p| {
            acc * BigRational::from_float(p).unwrap()
        })
}

/// Index of the largest exact product, lowest index on ties.
pub fn exact_argmax(options: &[Vec<f64>]) -> usize {
    let products: Vec<BigRational> = options.iter().map(|o| exact_product(o)).collect();
    let mut best = 0;
    for i in 1..products.len() {
        if products[i] > products[best] {
            best = i;
        }
    }
    best
}

/// Encodes an LTDE file by hand, byte by byte, the way an external producer
/// would. Ids may repeat, as in a token-level dump.
pub fn encode_ltde(rows: &[Vec<f32>], ids: &[&str], normalized: bool) -> Vec<u8> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = b"LTDE".to_vec();
    out.extend(1u16.to_le_bytes());
    out.push(normalized as u8);
    out.push(0);
    out.extend((rows.len() as u64).to_le_bytes());
    out.extend((dim as u32).to_le_bytes());
    for r in rows {
        for x in r {
            out.extend(x.to_le_bytes());
        }
    }
    for id in ids {
        out.extend((id.len() as u16).to_le_bytes());
        out.extend(id.as_bytes());
    }
    out
}
