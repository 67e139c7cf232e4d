//! Clustering and semantic metrics.
//!
//! ACC uses one Hungarian mapping from predicted clusters to gold labels over
//! the whole evaluation set; the Pre / Nov slices read that same mapping.
//! NMI uses arithmetic-mean normalization. KL is `D(pred || truth)` with
//! additive smoothing.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, EncoderBackend, Mode, PromptedInput, MASK};
use crate::error::{Error, Result};
use crate::hungarian::max_weight_assignment;
use crate::semifactual::ViewKind;

pub const KL_EPSILON: f64 = 1e-10;

fn dense_ids<T: Ord + Clone>(labels: &[T]) -> (Vec<usize>, Vec<T>) {
    let mut universe: Vec<T> = labels.to_vec();
    universe.sort();
    universe.dedup();
    let ids = labels
        .iter()
        .map(|l| universe.binary_search(l).expect("label in universe"))
        .collect();
    (ids, universe)
}

fn contingency(pred: &[usize], n_pred: usize, gold: &[usize], n_gold: usize) -> Array2<f64> {
    let mut table = Array2::zeros((n_pred, n_gold));
    for (&p, &g) in pred.iter().zip(gold) {
        table[[p, g]] += 1.0;
    }
    table
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "prediction length {a} vs gold length {b}"
        )));
    }
    if a == 0 {
        return Err(Error::InvalidInput("metrics over an empty set".into()));
    }
    Ok(())
}

/// One-to-one mapping from predicted labels to gold labels maximizing the
/// number of agreements. Predicted labels left unmatched map to `None`.
pub fn best_mapping<P: Ord + Clone, G: Ord + Clone>(
    pred: &[P],
    gold: &[G],
) -> Result<BTreeMap<P, Option<G>>> {
    check_lengths(pred.len(), gold.len())?;
    let (p_ids, p_universe) = dense_ids(pred);
    let (g_ids, g_universe) = dense_ids(gold);
    let size = p_universe.len().max(g_universe.len());
    let table = contingency(&p_ids, size, &g_ids, size);
    let assignment = max_weight_assignment(&table)?;
    Ok(p_universe
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), g_universe.get(assignment[i]).cloned()))
        .collect())
}

/// Best-mapping clustering accuracy.
pub fn clustering_accuracy<P: Ord + Clone, G: Ord + Clone>(pred: &[P], gold: &[G]) -> Result<f64> {
    let mapping = best_mapping(pred, gold)?;
    Ok(mapped_accuracy(&mapping, pred, gold))
}

fn mapped_accuracy<P: Ord, G: Ord + Clone>(
    mapping: &BTreeMap<P, Option<G>>,
    pred: &[P],
    gold: &[G],
) -> f64 {
    let hits = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| mapping.get(p).and_then(|m| m.as_ref()) == Some(*g))
        .count();
    hits as f64 / pred.len() as f64
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information, arithmetic-mean normalization. Two
/// single-cluster labelings score 1.0.
pub fn nmi<P: Ord + Clone, G: Ord + Clone>(pred: &[P], gold: &[G]) -> Result<f64> {
    check_lengths(pred.len(), gold.len())?;
    let (p_ids, pu) = dense_ids(pred);
    let (g_ids, gu) = dense_ids(gold);
    let table = contingency(&p_ids, pu.len(), &g_ids, gu.len());
    let n = pred.len() as f64;
    let row_sums: Vec<f64> = table.rows().into_iter().map(|r| r.sum()).collect();
    let col_sums: Vec<f64> = table.columns().into_iter().map(|c| c.sum()).collect();
    let h_pred = entropy(row_sums.iter().copied(), n);
    let h_gold = entropy(col_sums.iter().copied(), n);
    if h_pred == 0.0 && h_gold == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for ((i, j), &c) in table.indexed_iter() {
        if c > 0.0 {
            mi += c / n * ((c * n) / (row_sums[i] * col_sums[j])).ln();
        }
    }
    let denom = (h_pred + h_gold) / 2.0;
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index. Degenerate cases where the expected index equals
/// its maximum (both labelings trivial) score 1.0.
pub fn ari<P: Ord + Clone, G: Ord + Clone>(pred: &[P], gold: &[G]) -> Result<f64> {
    check_lengths(pred.len(), gold.len())?;
    let (p_ids, pu) = dense_ids(pred);
    let (g_ids, gu) = dense_ids(gold);
    let table = contingency(&p_ids, pu.len(), &g_ids, gu.len());
    let n = pred.len() as f64;
    let sum_cells: f64 = table.iter().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = table.rows().into_iter().map(|r| comb2(r.sum())).sum();
    let sum_cols: f64 = table.columns().into_iter().map(|c| comb2(c.sum())).sum();
    let total = comb2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = (sum_rows + sum_cols) / 2.0;
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    Pre,
    Nov,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

/// Metrics on the instances whose gold relation falls in `partition`. ACC
/// uses the mapping computed on the full set.
pub fn partition_metrics<P: Ord + Clone, G: Ord + Clone>(
    pred: &[P],
    gold: &[G],
    is_novel: impl Fn(&G) -> bool,
    partition: Partition,
) -> Result<SliceMetrics> {
    let mapping = best_mapping(pred, gold)?;
    partition_metrics_with(&mapping, pred, gold, is_novel, partition)
}

fn partition_metrics_with<P: Ord + Clone, G: Ord + Clone>(
    mapping: &BTreeMap<P, Option<G>>,
    pred: &[P],
    gold: &[G],
    is_novel: impl Fn(&G) -> bool,
    partition: Partition,
) -> Result<SliceMetrics> {
    let keep: Vec<usize> = (0..gold.len())
        .filter(|&i| match partition {
            Partition::All => true,
            Partition::Pre => !is_novel(&gold[i]),
            Partition::Nov => is_novel(&gold[i]),
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no instances in the {partition:?} partition"
        )));
    }
    let sub_pred: Vec<P> = keep.iter().map(|&i| pred[i].clone()).collect();
    let sub_gold: Vec<G> = keep.iter().map(|&i| gold[i].clone()).collect();
    Ok(SliceMetrics {
        acc: mapped_accuracy(mapping, &sub_pred, &sub_gold),
        nmi: nmi(&sub_pred, &sub_gold)?,
        ari: ari(&sub_pred, &sub_gold)?,
    })
}

/// Cosine similarity and smoothed `D(pred || truth)`.
pub fn semantic_similarity(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "distributions of width {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let dot: f64 = pred.iter().zip(truth).map(|(a, b)| a * b).sum();
    let na = pred.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = truth.iter().map(|b| b * b).sum::<f64>().sqrt();
    let cos = if na > 0.0 && nb > 0.0 {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let smooth = |d: &[f64]| -> Vec<f64> {
        let total: f64 = d.iter().map(|v| v + KL_EPSILON).sum();
        d.iter().map(|v| (v + KL_EPSILON) / total).collect()
    };
    let (p, q) = (smooth(pred), smooth(truth));
    let kl = p
        .iter()
        .zip(&q)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0);
    Ok((cos, kl))
}

/// Distribution at `[MASK]` for the prompt `<description> means [MASK]`.
/// Callers pass the backend in its pretrained (not fine-tuned) state.
pub fn ground_truth_distribution<B: EncoderBackend>(
    description: &str,
    backend: &B,
) -> Result<Vec<f64>> {
    let mut tokens: Vec<String> = description.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty relation description".into()));
    }
    tokens.push("means".into());
    let mask_position = tokens.len();
    tokens.push(MASK.into());
    let prompt = PromptedInput {
        instance_id: format!("description:{description}"),
        suffix_len: 2,
        tokens,
        mask_position,
        view_kind: ViewKind::Main,
    };
    let mut reps = encode(&[prompt], backend, Mode::Eval)?;
    Ok(reps.remove(0).word_dist)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub pre: Option<SliceMetrics>,
    pub nov: Option<SliceMetrics>,
    pub all: SliceMetrics,
    /// Per novel relation `(cos, kl)`.
    pub semantic: BTreeMap<String, (f64, f64)>,
    pub cos: Option<f64>,
    pub kl: Option<f64>,
}

impl MetricReport {
    /// ACC / NMI / ARI on All, Pre and Nov. Empty Pre or Nov slices are
    /// reported as `None`.
    pub fn clustering<P: Ord + Clone>(
        pred: &[P],
        gold: &[String],
        is_novel: impl Fn(&String) -> bool,
    ) -> Result<Self> {
        let mapping = best_mapping(pred, gold)?;
        let all = partition_metrics_with(&mapping, pred, gold, &is_novel, Partition::All)?;
        let pre = partition_metrics_with(&mapping, pred, gold, &is_novel, Partition::Pre).ok();
        let nov = partition_metrics_with(&mapping, pred, gold, &is_novel, Partition::Nov).ok();
        Ok(MetricReport {
            pre,
            nov,
            all,
            ..Default::default()
        })
    }

    /// Adds per-relation semantic scores and their unweighted mean.
    pub fn with_semantic(mut self, per_relation: BTreeMap<String, (f64, f64)>) -> Self {
        if !per_relation.is_empty() {
            let n = per_relation.len() as f64;
            self.cos = Some(per_relation.values().map(|v| v.0).sum::<f64>() / n);
            self.kl = Some(per_relation.values().map(|v| v.1).sum::<f64>() / n);
        }
        self.semantic = per_relation;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Flat `metric<TAB>partition<TAB>value` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tpartition\tvalue\n");
        for (name, slice) in [
            ("pre", self.pre),
            ("nov", self.nov),
            ("all", Some(self.all)),
        ] {
            if let Some(s) = slice {
                let _ = writeln!(out, "acc\t{name}\t{:.6}", s.acc);
                let _ = writeln!(out, "nmi\t{name}\t{:.6}", s.nmi);
                let _ = writeln!(out, "ari\t{name}\t{:.6}", s.ari);
            }
        }
        for (rel, (cos, kl)) in &self.semantic {
            let _ = writeln!(out, "cos\t{rel}\t{cos:.6}");
            let _ = writeln!(out, "kl\t{rel}\t{kl:.6}");
        }
        if let (Some(cos), Some(kl)) = (self.cos, self.kl) {
            let _ = writeln!(out, "cos\tmean_novel\t{cos:.6}");
            let _ = writeln!(out, "kl\tmean_novel\t{kl:.6}");
        }
        out
    }
}
