//! Independent scalar-loop oracles and fixtures shared by the integration
//! tests. Nothing here calls the library's vectorized math.

#![allow(dead_code)]

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reldisc::collab::{TrainingSet, TriPrompt};
use reldisc::corpus::{build_splits, SizingPolicy, SplitSpec};
use reldisc::encoder::MockBackend;
use reldisc::semifactual::{generate_all, TriView, DEFAULT_CONTEXT_RATIO};
use reldisc::synth::{SynthConfig, SyntheticCorpus};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        let n = used.len();
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Exhaustive best-mapping accuracy: every injective map from predicted
/// labels into gold labels (padding both sides to the larger universe).
pub fn brute_force_accuracy(pred: &[usize], gold: &[usize]) -> f64 {
    let pu: Vec<usize> = pred
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let gu: Vec<usize> = gold
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let size = pu.len().max(gu.len());
    let mut best = 0usize;
    for perm in permutations(size) {
        let mut hits = 0usize;
        for (p, g) in pred.iter().zip(gold) {
            let pi = pu.iter().position(|x| x == p).unwrap();
            if let Some(mapped) = gu.get(perm[pi]) {
                if mapped == g {
                    hits += 1;
                }
            }
        }
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}

/// Minimum of `sum_r cost[r][perm[r]]` over all permutations.
pub fn brute_force_min_cost(cost: &Array2<f64>) -> f64 {
    let n = cost.nrows();
    permutations(n)
        .into_iter()
        .map(|perm| (0..n).map(|r| cost[[r, perm[r]]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Tri-view contrastive loss as a plain double loop:
/// mean over anchors of `-log(sum_pos exp(s/tau) / sum_den exp(s/tau))`.
pub fn naive_contrastive(views: &[Vec<Vec<f64>>; 3], tau: f64, exclude_self: bool) -> f64 {
    let n = views[0].len();
    let mut total = 0.0;
    for m in 0..3 {
        for i in 0..n {
            let anchor = &views[m][i];
            let mut num = 0.0;
            for u in 0..3 {
                if u != m {
                    num += (dot(anchor, &views[u][i]) / tau).exp();
                }
            }
            let mut den = 0.0;
            for u in 0..3 {
                for j in 0..n {
                    if exclude_self && u == m && j == i {
                        continue;
                    }
                    den += (dot(anchor, &views[u][j]) / tau).exp();
                }
            }
            total += -(num / den).ln();
        }
    }
    total / (3 * n) as f64
}

/// Student's t (one degree of freedom) soft assignment, element by element.
pub fn naive_student_t(v: &[f64], centroids: &[Vec<f64>]) -> Vec<f64> {
    let kernel: Vec<f64> = centroids
        .iter()
        .map(|mu| {
            let mut d2 = 0.0;
            for k in 0..v.len() {
                d2 += (v[k] - mu[k]) * (v[k] - mu[k]);
            }
            1.0 / (1.0 + d2)
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter().map(|q| q / total).collect()
}

pub fn naive_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Column-consistency loss: the contrastive loop over the columns of each
/// view's assignment matrix plus `weight * sum_m sum_j Z_j log Z_j`.
pub fn naive_consistency(z: &[Vec<Vec<f64>>; 3], tau: f64, exclude_self: bool, weight: f64) -> f64 {
    let n = z[0].len();
    let k = z[0][0].len();
    let cols: [Vec<Vec<f64>>; 3] = std::array::from_fn(|m| {
        (0..k)
            .map(|j| (0..n).map(|i| z[m][i][j]).collect())
            .collect()
    });
    let mut reg = 0.0;
    for view in z {
        for j in 0..k {
            let mut zj = 0.0;
            for row in view {
                zj += row[j];
            }
            zj /= n as f64;
            if zj > 0.0 {
                reg += zj * zj.ln();
            }
        }
    }
    naive_contrastive(&cols, tau, exclude_self) + weight * reg
}

/// Cross entropy averaged over views and contributing instances.
pub fn naive_cross_entropy(z: &[Vec<Vec<f64>>; 3], targets: &[Option<usize>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, t) in targets.iter().enumerate() {
        if let Some(y) = t {
            for view in z {
                total += -view[i][*y].ln();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

pub fn random_simplex(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..d).map(|_| -rng.gen_range(1e-9f64..1.0).ln()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect()
        })
        .collect()
}

pub fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

/// Everything an end-to-end run needs, built from the synthetic generator.
pub struct Fixture {
    pub corpus: SyntheticCorpus,
    pub split: SplitSpec,
    pub views: Vec<TriView>,
    pub backend: MockBackend,
    pub data: TrainingSet,
}

pub const MAX_LEN: usize = 64;

pub fn fixture(per_relation: usize, policy: SizingPolicy, seed: u64) -> Fixture {
    let corpus = SyntheticCorpus::generate(&SynthConfig {
        instances_per_relation: per_relation,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = build_splits(&corpus.instances, 0.5, &policy, seed).unwrap();
    let views = generate_all(
        &corpus.instances,
        &corpus.entity_types,
        &corpus.synonyms,
        seed,
        DEFAULT_CONTEXT_RATIO,
    )
    .unwrap();
    let backend = MockBackend::new(corpus.table.clone(), 0.5, seed, MAX_LEN).unwrap();
    let heads = split.all_relations().len();
    let data = TrainingSet::new(&views, &split, heads, MAX_LEN).unwrap();
    Fixture {
        corpus,
        split,
        views,
        backend,
        data,
    }
}

/// A small batch of tri-view prompts for gradient checks.
pub fn small_batch(data: &TrainingSet, n: usize) -> Vec<&TriPrompt> {
    data.unlabeled.iter().step_by(7).take(n).collect()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}
