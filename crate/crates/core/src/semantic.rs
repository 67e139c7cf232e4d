//! Cluster-semantic space: tri-view self-contrastive refinement of the word
//! distributions, K-means centroids, Student's t soft assignment, relation
//! count estimation and relational-word readout.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{argmax, log_sum_exp};
use crate::rng::rng_for;

/// Value and per-view gradients of a multi-view contrastive objective.
#[derive(Debug, Clone)]
pub struct ContrastiveLoss {
    pub loss: f64,
    pub grads: [Array2<f64>; 3],
}

/// Shared tri-view InfoNCE-style objective.
///
/// `views[m]` holds one row per item. The anchor `(m, i)` has the rows
/// `(u, i)`, `u != m`, as positives; the denominator runs over every row of
/// every view, including the anchor itself unless `exclude_self`. Similarity
/// is the dot product divided by `tau`. The loss is the mean over all `3n`
/// anchors.
pub fn tri_view_contrastive(
    views: [&Array2<f64>; 3],
    tau: f64,
    exclude_self: bool,
) -> Result<ContrastiveLoss> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let (n, d) = views[0].dim();
    if views.iter().any(|v| v.dim() != (n, d)) {
        return Err(Error::Dimension("tri-view matrices differ in shape".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput(
            "contrastive loss over an empty batch".into(),
        ));
    }
    let stacked = ndarray::concatenate(
        Axis(0),
        &[views[0].view(), views[1].view(), views[2].view()],
    )
    .expect("shapes checked");
    let total = 3 * n;
    let sim = stacked.dot(&stacked.t()) / tau;
    let mut coef = Array2::<f64>::zeros((total, total));
    let mut loss = 0.0;
    for a in 0..total {
        let (m, i) = (a / n, a % n);
        let positives: Vec<usize> = (0..3).filter(|&u| u != m).map(|u| u * n + i).collect();
        let denominator: Vec<usize> = (0..total).filter(|&b| !(exclude_self && b == a)).collect();
        let lse_pos = log_sum_exp(positives.iter().map(|&b| sim[[a, b]]));
        let lse_den = log_sum_exp(denominator.iter().map(|&b| sim[[a, b]]));
        loss += lse_den - lse_pos;
        for &b in &denominator {
            coef[[a, b]] += (sim[[a, b]] - lse_den).exp();
        }
        for &b in &positives {
            coef[[a, b]] -= (sim[[a, b]] - lse_pos).exp();
        }
    }
    let scale = 1.0 / total as f64;
    let sym = (&coef + &coef.t()) * (scale / tau);
    let d_stacked = sym.dot(&stacked);
    let grads = [
        d_stacked.slice(s![0..n, ..]).to_owned(),
        d_stacked.slice(s![n..2 * n, ..]).to_owned(),
        d_stacked.slice(s![2 * n..3 * n, ..]).to_owned(),
    ];
    Ok(ContrastiveLoss {
        loss: loss * scale,
        grads,
    })
}

/// Self-contrastive loss over word distributions: row `i` of `dists[m]` is
/// the distribution of instance `i` in view `m`.
pub fn self_contrastive_loss(
    dists: [&Array2<f64>; 3],
    tau1: f64,
    exclude_self: bool,
) -> Result<ContrastiveLoss> {
    tri_view_contrastive(dists, tau1, exclude_self)
}

/// `C` centroids in the word-distribution space of one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub means: Array2<f64>,
}

impl Centroids {
    pub fn num_clusters(&self) -> usize {
        self.means.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            n_init: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seeds<R: Rng>(data: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = data.nrows();
    let mut centers = Array2::zeros((k, data.ncols()));
    let first = rng.gen_range(0..n);
    centers.row_mut(0).assign(&data.row(first));
    let mut closest: Vec<f64> = data
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(c).assign(&data.row(pick));
        for (i, row) in data.rows().into_iter().enumerate() {
            closest[i] = closest[i].min(sq_dist(row, centers.row(c)));
        }
    }
    centers
}

fn assign(data: &Array2<f64>, centers: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    let mut labels = Vec::with_capacity(data.nrows());
    let mut dists = Vec::with_capacity(data.nrows());
    for row in data.rows() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, center) in centers.rows().into_iter().enumerate() {
            let d = sq_dist(row, center);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels.push(best);
        dists.push(best_d);
    }
    (labels, dists)
}

fn lloyd(data: &Array2<f64>, mut centers: Array2<f64>, config: &KMeansConfig) -> KMeansFit {
    let k = centers.nrows();
    let mut history = Vec::new();
    let (mut labels, mut dists) = assign(data, &centers);
    history.push(dists.iter().sum());
    for _ in 0..config.max_iter {
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (row, &l) in data.rows().into_iter().zip(&labels) {
            let mut acc = sums.row_mut(l);
            acc += &row;
            counts[l] += 1;
        }
        let mut new_centers = centers.clone();
        for c in 0..k {
            if counts[c] > 0 {
                new_centers
                    .row_mut(c)
                    .assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        // Empty clusters move to the worst-served point of a cluster that
        // can spare one.
        let mut spare = counts.clone();
        let mut taken = vec![false; data.nrows()];
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..data.nrows())
                .filter(|&i| !taken[i] && spare[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                taken[i] = true;
                spare[labels[i]] -= 1;
                new_centers.row_mut(c).assign(&data.row(i));
            }
        }
        let shift = centers
            .rows()
            .into_iter()
            .zip(new_centers.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = new_centers;
        let (l, d) = assign(data, &centers);
        labels = l;
        dists = d;
        history.push(dists.iter().sum());
        if shift < config.tol {
            break;
        }
    }
    KMeansFit {
        inertia: *history.last().unwrap(),
        centroids: centers,
        labels,
        inertia_history: history,
    }
}

/// K-means with k-means++ seeding; best of `n_init` restarts by inertia.
pub fn kmeans(data: &Array2<f64>, k: usize, config: &KMeansConfig, seed: u64) -> Result<KMeansFit> {
    let n = data.nrows();
    if k == 0 {
        return Err(Error::InvalidInput(
            "cluster count must be at least 1".into(),
        ));
    }
    if n < k {
        return Err(Error::InvalidInput(format!(
            "{n} points cannot form {k} clusters"
        )));
    }
    let mut best: Option<KMeansFit> = None;
    for restart in 0..config.n_init.max(1) {
        let mut rng = rng_for(seed, &["kmeans", &restart.to_string()]);
        let fit = lloyd(data, plus_plus_seeds(data, k, &mut rng), config);
        if best.as_ref().map_or(true, |b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Fits `C` centroids to one view's word distributions.
pub fn fit_centroids(
    dists: &Array2<f64>,
    clusters: usize,
    config: &KMeansConfig,
    seed: u64,
) -> Result<Centroids> {
    Ok(Centroids {
        means: kmeans(dists, clusters, config, seed)?.centroids,
    })
}

/// Student's t (one degree of freedom) assignment of `v` to each centroid.
pub fn soft_assign(v: ArrayView1<f64>, centroids: &Centroids) -> Result<Array1<f64>> {
    if v.len() != centroids.means.ncols() {
        return Err(Error::Dimension(format!(
            "vector of width {} vs centroids of width {}",
            v.len(),
            centroids.means.ncols()
        )));
    }
    let kernel: Array1<f64> = centroids
        .means
        .rows()
        .into_iter()
        .map(|mu| 1.0 / (1.0 + sq_dist(v, mu)))
        .collect();
    let total = kernel.sum();
    Ok(kernel / total)
}

/// Per-row soft assignment together with the hard labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftAssignment {
    pub probs: Array2<f64>,
    pub labels: Vec<usize>,
}

pub fn soft_assign_rows(dists: &Array2<f64>, centroids: &Centroids) -> Result<SoftAssignment> {
    let mut probs = Array2::zeros((dists.nrows(), centroids.num_clusters()));
    for (i, row) in dists.rows().into_iter().enumerate() {
        probs.row_mut(i).assign(&soft_assign(row, centroids)?);
    }
    let labels = probs.rows().into_iter().map(argmax).collect();
    Ok(SoftAssignment { probs, labels })
}

/// Index of the row maximum; ties go to the lowest index.
pub fn hard_label(p: ArrayView1<f64>) -> usize {
    argmax(p)
}

/// Runs K-means with `k_init` centers and counts the clusters whose size is
/// at least the expected average `N / k_init`.
pub fn estimate_relation_count(
    dists: &Array2<f64>,
    k_init: usize,
    config: &KMeansConfig,
    seed: u64,
) -> Result<usize> {
    if k_init == 0 {
        return Err(Error::InvalidInput("k_init must be at least 1".into()));
    }
    if k_init > dists.nrows() {
        return Err(Error::InvalidInput(format!(
            "k_init {k_init} exceeds {} instances",
            dists.nrows()
        )));
    }
    let fit = kmeans(dists, k_init, config, seed)?;
    let mut sizes = vec![0usize; k_init];
    for &l in &fit.labels {
        sizes[l] += 1;
    }
    let threshold = dists.nrows() as f64 / k_init as f64;
    Ok(sizes.iter().filter(|&&s| s as f64 >= threshold).count())
}

/// The `k` most probable vocabulary items, descending; ties by vocab index.
pub fn top_relational_words(dist: &[f64], vocab: &[String], k: usize) -> Result<Vec<String>> {
    if dist.len() != vocab.len() {
        return Err(Error::Dimension(format!(
            "distribution of width {} vs vocabulary of {}",
            dist.len(),
            vocab.len()
        )));
    }
    if k == 0 || k > vocab.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} outside 1..={}",
            vocab.len()
        )));
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    Ok(order[..k].iter().map(|&i| vocab[i].clone()).collect())
}

/// Per-group frequency of words appearing in each member's top-`k`.
/// Words within a group are sorted by descending count, then alphabetically.
pub fn top_word_frequencies<'a, K: Ord + Clone>(
    members: impl IntoIterator<Item = (K, &'a [f64])>,
    vocab: &[String],
    k: usize,
) -> Result<BTreeMap<K, Vec<(String, usize)>>> {
    let mut counts: BTreeMap<K, BTreeMap<String, usize>> = BTreeMap::new();
    for (group, dist) in members {
        let words = top_relational_words(dist, vocab, k)?;
        let entry = counts.entry(group).or_default();
        for w in words {
            *entry.entry(w).or_default() += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(g, words)| {
            let mut list: Vec<(String, usize)> = words.into_iter().collect();
            list.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            (g, list)
        })
        .collect())
}

/// UTF-8 TSV: `cluster_id<TAB>word<TAB>frequency`.
pub fn word_report_tsv<K: std::fmt::Display>(table: &BTreeMap<K, Vec<(String, usize)>>) -> String {
    let mut out = String::from("cluster_id\tword\tfrequency\n");
    for (group, words) in table {
        for (word, count) in words {
            let _ = writeln!(out, "{group}\t{word}\t{count}");
        }
    }
    out
}

/// One row per group: `group<TAB>w1,w2,...` with the `k` most frequent words.
pub fn compact_word_report<K: std::fmt::Display>(
    table: &BTreeMap<K, Vec<(String, usize)>>,
    k: usize,
) -> String {
    let mut out = String::new();
    for (group, words) in table {
        let top: Vec<&str> = words.iter().take(k).map(|(w, _)| w.as_str()).collect();
        let _ = writeln!(out, "{group}\t{}", top.join(","));
    }
    out
}
