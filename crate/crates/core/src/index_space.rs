//! Class-index space: a shared affine + softmax classifier over `K` heads,
//! trained so that each class column agrees across the three views.

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{argmax, softmax_backward, softmax_rows};
use crate::rng::rng_for;
use crate::semantic::tri_view_contrastive;

/// Single affine map from the hidden width to `K` logits, then softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Classifier {
    pub fn zeros(heads: usize, hidden_dim: usize) -> Self {
        Classifier {
            weight: Array2::zeros((heads, hidden_dim)),
            bias: Array1::zeros(heads),
        }
    }

    /// Small Gaussian weights (std `scale`), zero bias. Every head uses the
    /// same scheme.
    pub fn random(heads: usize, hidden_dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, &["classifier-init"]);
        let normal = Normal::new(0.0, scale).expect("finite scale");
        Classifier {
            weight: Array2::from_shape_fn((heads, hidden_dim), |_| normal.sample(&mut rng)),
            bias: Array1::zeros(heads),
        }
    }

    pub fn heads(&self) -> usize {
        self.weight.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn logits(&self, hidden: &Array2<f64>) -> Result<Array2<f64>> {
        if hidden.ncols() != self.hidden_dim() {
            return Err(Error::Dimension(format!(
                "hidden width {} vs classifier width {}",
                hidden.ncols(),
                self.hidden_dim()
            )));
        }
        Ok(hidden.dot(&self.weight.t()) + &self.bias)
    }

    /// Backpropagates `d_probs` (gradient w.r.t. the softmax rows). Returns
    /// the flat parameter gradient and the gradient w.r.t. `hidden`.
    pub fn backward(
        &self,
        hidden: &Array2<f64>,
        probs: &Array2<f64>,
        d_probs: &Array2<f64>,
    ) -> (Vec<f64>, Array2<f64>) {
        let d_logits = softmax_backward(probs, d_probs);
        let d_weight = d_logits.t().dot(hidden);
        let d_bias = d_logits.sum_axis(Axis(0));
        let d_hidden = d_logits.dot(&self.weight);
        (
            d_weight.iter().chain(d_bias.iter()).copied().collect(),
            d_hidden,
        )
    }

    pub fn params(&self) -> Vec<f64> {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let (k, d) = self.weight.dim();
        if params.len() != k * d + k {
            return Err(Error::Dimension(format!(
                "classifier has {} parameters, got {}",
                k * d + k,
                params.len()
            )));
        }
        self.weight = Array2::from_shape_vec((k, d), params[..k * d].to_vec())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        self.bias = Array1::from(params[k * d..].to_vec());
        Ok(())
    }
}

/// Softmax label-index rows `z = f(x)`.
pub fn classify(hidden: &Array2<f64>, clf: &Classifier) -> Result<Array2<f64>> {
    Ok(softmax_rows(&clf.logits(hidden)?))
}

/// Column marginals `Z_j = mean_i z_ij`.
pub fn column_marginals(z: &Array2<f64>) -> Array1<f64> {
    z.mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(z.ncols()))
}

#[derive(Debug, Clone)]
pub struct ConsistencyLoss {
    pub loss: f64,
    pub contrastive: f64,
    /// `sum_m sum_j Z_j log Z_j` (negative entropy of the marginals).
    pub neg_entropy: f64,
    pub grads: [Array2<f64>; 3],
}

const MARGINAL_FLOOR: f64 = 1e-12;

/// Column-consistency contrastive loss over the three views' assignment
/// matrices plus `reg_weight` times the negative marginal entropy, so that
/// minimizing the total spreads mass over the heads.
pub fn consistency_loss(
    z: [&Array2<f64>; 3],
    tau2: f64,
    exclude_self: bool,
    reg_weight: f64,
) -> Result<ConsistencyLoss> {
    let cols = [
        z[0].t().to_owned(),
        z[1].t().to_owned(),
        z[2].t().to_owned(),
    ];
    let con = tri_view_contrastive([&cols[0], &cols[1], &cols[2]], tau2, exclude_self)?;
    let n = z[0].nrows() as f64;
    let mut neg_entropy = 0.0;
    let mut grads = Vec::with_capacity(3);
    for (m, view) in z.iter().enumerate() {
        let marg = column_marginals(view);
        neg_entropy += marg
            .iter()
            .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
            .sum::<f64>();
        let d_reg: Array1<f64> = marg.mapv(|p| (p.max(MARGINAL_FLOOR).ln() + 1.0) / n);
        let mut g = con.grads[m].t().to_owned();
        g += &(d_reg * reg_weight);
        grads.push(g);
    }
    let grads: [Array2<f64>; 3] = grads.try_into().expect("three views");
    Ok(ConsistencyLoss {
        loss: con.loss + reg_weight * neg_entropy,
        contrastive: con.loss,
        neg_entropy,
        grads,
    })
}

/// Per-row argmax head (lowest index on ties).
pub fn anchor_labels(z: &Array2<f64>) -> Vec<usize> {
    z.rows().into_iter().map(argmax).collect()
}
