//! Alignment of per-view cluster labels to class-index anchor labels.
//!
//! Labels are zero-based throughout.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hungarian::min_cost_assignment;

/// `Q = max(q̂) - q̂`, where `q̂[c][c']` counts instances with anchor `c`
/// and cluster `c'`.
pub fn build_cost_matrix(
    anchors: &[usize],
    clusters: &[usize],
    num_clusters: usize,
) -> Result<Array2<f64>> {
    if anchors.len() != clusters.len() {
        return Err(Error::Dimension(format!(
            "{} anchors vs {} cluster labels",
            anchors.len(),
            clusters.len()
        )));
    }
    let mut counts = Array2::<f64>::zeros((num_clusters, num_clusters));
    for (&a, &c) in anchors.iter().zip(clusters) {
        if a >= num_clusters || c >= num_clusters {
            return Err(Error::InvalidInput(format!(
                "label pair ({a}, {c}) outside 0..{num_clusters}"
            )));
        }
        counts[[a, c]] += 1.0;
    }
    let max = counts.iter().copied().fold(0.0, f64::max);
    Ok(counts.mapv(|q| max - q))
}

/// Boolean permutation matrix `U`: `u[c][c'] = 1` sends cluster `c'` to
/// aligned label `c`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    /// `to_aligned[c'] = c`.
    pub to_aligned: Vec<usize>,
}

impl Alignment {
    pub fn identity(n: usize) -> Self {
        Alignment {
            to_aligned: (0..n).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.to_aligned.len()
    }

    pub fn matrix(&self) -> Array2<u8> {
        let n = self.size();
        let mut u = Array2::zeros((n, n));
        for (c_prime, &c) in self.to_aligned.iter().enumerate() {
            u[[c, c_prime]] = 1;
        }
        u
    }

    pub fn from_matrix(u: &Array2<u8>) -> Result<Self> {
        let n = u.nrows();
        if u.ncols() != n {
            return Err(Error::Dimension("alignment matrix must be square".into()));
        }
        let mut to_aligned = vec![usize::MAX; n];
        for ((c, c_prime), &v) in u.indexed_iter() {
            if v == 1 {
                if to_aligned[c_prime] != usize::MAX {
                    return Err(Error::InvalidInput("column with two ones".into()));
                }
                to_aligned[c_prime] = c;
            }
        }
        let alignment = Alignment { to_aligned };
        if !alignment.is_permutation() {
            return Err(Error::InvalidInput("not a permutation matrix".into()));
        }
        Ok(alignment)
    }

    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.size()];
        for &c in &self.to_aligned {
            if c >= seen.len() || seen[c] {
                return false;
            }
            seen[c] = true;
        }
        true
    }

    pub fn inverse(&self) -> Alignment {
        let mut inv = vec![0; self.size()];
        for (c_prime, &c) in self.to_aligned.iter().enumerate() {
            inv[c] = c_prime;
        }
        Alignment { to_aligned: inv }
    }

    pub fn total_cost(&self, cost: &Array2<f64>) -> f64 {
        self.to_aligned
            .iter()
            .enumerate()
            .map(|(c_prime, &c)| cost[[c, c_prime]])
            .sum()
    }
}

/// Minimum-cost one-to-one alignment (Hungarian method).
pub fn align(cost: &Array2<f64>) -> Result<Alignment> {
    let row_to_col = min_cost_assignment(cost)?;
    let mut to_aligned = vec![0; row_to_col.len()];
    for (c, &c_prime) in row_to_col.iter().enumerate() {
        to_aligned[c_prime] = c;
    }
    Ok(Alignment { to_aligned })
}

/// Relabels cluster labels through the alignment.
pub fn apply_alignment(labels: &[usize], alignment: &Alignment) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            alignment.to_aligned.get(l).copied().ok_or_else(|| {
                Error::InvalidInput(format!("label {l} outside 0..{}", alignment.size()))
            })
        })
        .collect()
}

/// Re-indexes assignment probabilities so column `c` holds the probability
/// of the cluster that aligns to `c`.
pub fn align_probabilities(probs: &Array2<f64>, alignment: &Alignment) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for (c_prime, &c) in alignment.to_aligned.iter().enumerate() {
        out.column_mut(c).assign(&probs.column(c_prime));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_correspondence() {
        let labels: Vec<usize> = (0..3).flat_map(|c| std::iter::repeat(c).take(10)).collect();
        let q = build_cost_matrix(&labels, &labels, 3).unwrap();
        for ((i, j), &v) in q.indexed_iter() {
            assert_eq!(v, if i == j { 0.0 } else { 10.0 });
        }
        let u = align(&q).unwrap();
        assert_eq!(u, Alignment::identity(3));
        assert_eq!(u.matrix(), Array2::<u8>::eye(3));
    }

    #[test]
    fn empty_lists_give_zero_matrix() {
        let q = build_cost_matrix(&[], &[], 4).unwrap();
        assert_eq!(q, Array2::<f64>::zeros((4, 4)));
    }

    #[test]
    fn out_of_range_is_error() {
        assert!(build_cost_matrix(&[0, 3], &[0, 1], 3).is_err());
        assert!(build_cost_matrix(&[0], &[0, 1], 3).is_err());
        assert!(align(&Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn cyclic_shift_advances_labels() {
        let shift = Alignment {
            to_aligned: vec![1, 2, 3, 0],
        };
        assert_eq!(
            apply_alignment(&[0, 1, 2, 3], &shift).unwrap(),
            vec![1, 2, 3, 0]
        );
        assert_eq!(
            apply_alignment(&[0, 1], &Alignment::identity(4)).unwrap(),
            vec![0, 1]
        );
        assert!(apply_alignment(&[4], &shift).is_err());
        assert_eq!(Alignment::from_matrix(&shift.matrix()).unwrap(), shift);
    }

    #[test]
    fn probabilities_follow_labels() {
        let probs = ndarray::array![[0.7, 0.2, 0.1]];
        let a = Alignment {
            to_aligned: vec![2, 0, 1],
        };
        let p = align_probabilities(&probs, &a);
        assert_eq!(p, ndarray::array![[0.2, 0.1, 0.7]]);
    }
}
