//! Small dense helpers shared by the losses.

use ndarray::{Array2, ArrayView1, ArrayViewMut1};

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(mut row: ArrayViewMut1<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.mapv_inplace(|v| (v - max).exp());
    let sum = row.sum();
    row.mapv_inplace(|v| v / sum);
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for row in out.rows_mut() {
        softmax_in_place(row);
    }
    out
}

/// Gradient w.r.t. logits of a row-wise softmax, given the softmax output and
/// the gradient w.r.t. it.
pub fn softmax_backward(probs: &Array2<f64>, d_probs: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((p, g), mut o) in probs
        .rows()
        .into_iter()
        .zip(d_probs.rows())
        .zip(out.rows_mut())
    {
        let inner = p.dot(&g);
        o.assign(&(&p * &(&g - inner)));
    }
    out
}

/// Lowest index of the maximum entry.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_slice(row: &[f64]) -> usize {
    argmax(ArrayView1::from(row))
}
