//! Minimum-cost perfect assignment on a square cost matrix (Hungarian method
//! with row/column potentials, O(n^3)).

use ndarray::Array2;

use crate::error::{Error, Result};

/// Returns `assignment` where `assignment[row] = col`, minimizing
/// `sum cost[row, assignment[row]]`.
pub fn min_cost_assignment(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::Dimension(format!(
            "assignment needs a square cost matrix, got {n}x{m}"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite assignment cost".into()));
    }

    // 1-based arrays; index 0 is the virtual column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if col_owner[j] != 0 {
            assignment[col_owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Maximum-weight assignment, via negation.
pub fn max_weight_assignment(weight: &Array2<f64>) -> Result<Vec<usize>> {
    let cost = weight.mapv(|w| -w);
    min_cost_assignment(&cost)
}

pub fn assignment_cost(cost: &Array2<f64>, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| cost[[r, c]])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn picks_off_diagonal_optimum() {
        let cost = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let a = min_cost_assignment(&cost).unwrap();
        assert_eq!(assignment_cost(&cost, &a), 5.0);
    }

    #[test]
    fn empty_and_non_square() {
        assert!(min_cost_assignment(&Array2::zeros((0, 0)))
            .unwrap()
            .is_empty());
        assert!(min_cost_assignment(&Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn result_is_a_permutation() {
        let cost = Array2::from_shape_fn((5, 5), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        let mut a = min_cost_assignment(&cost).unwrap();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3, 4]);
    }
}
