//! Reliable pseudo-label selection across the three aligned views.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semifactual::ViewKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Selected { label: usize, source_view: ViewKind },
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDecision {
    pub instance: usize,
    pub outcome: Outcome,
    /// Highest aligned-label probability over the views.
    pub max_probability: f64,
}

impl LabelDecision {
    pub fn label(&self) -> Option<usize> {
        match self.outcome {
            Outcome::Selected { label, .. } => Some(label),
            Outcome::Abandoned => None,
        }
    }
}

/// Decides one instance from its three aligned labels and the probability
/// each view assigns to its own label.
///
/// Unanimous views win outright. Otherwise the most confident view wins if
/// its probability reaches `theta` (ties go to the earlier view), else the
/// instance is abandoned.
pub fn decide(instance: usize, labels: [usize; 3], probs: [f64; 3], theta: f64) -> LabelDecision {
    let mut g = 0;
    for m in 1..3 {
        if probs[m] > probs[g] {
            g = m;
        }
    }
    let max_probability = probs[g];
    let outcome = if labels[0] == labels[1] && labels[1] == labels[2] {
        Outcome::Selected {
            label: labels[0],
            source_view: ViewKind::Main,
        }
    } else if max_probability >= theta {
        Outcome::Selected {
            label: labels[g],
            source_view: ViewKind::ALL[g],
        }
    } else {
        Outcome::Abandoned
    };
    LabelDecision {
        instance,
        outcome,
        max_probability,
    }
}

/// Applies [`decide`] to every instance. `aligned_probs[m]` must already be
/// re-indexed to the aligned label space.
pub fn select_labels(
    aligned: [&[usize]; 3],
    aligned_probs: [&Array2<f64>; 3],
    theta: f64,
) -> Result<Vec<LabelDecision>> {
    let n = aligned[0].len();
    if aligned.iter().any(|a| a.len() != n) || aligned_probs.iter().any(|p| p.nrows() != n) {
        return Err(Error::Dimension("views disagree on instance count".into()));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Config(format!("theta {theta} outside [0, 1]")));
    }
    (0..n)
        .map(|i| {
            let labels = [aligned[0][i], aligned[1][i], aligned[2][i]];
            let mut probs = [0.0; 3];
            for m in 0..3 {
                probs[m] = *aligned_probs[m].get((i, labels[m])).ok_or_else(|| {
                    Error::InvalidInput(format!("label {} outside probability row", labels[m]))
                })?;
            }
            Ok(decide(i, labels, probs, theta))
        })
        .collect()
}

pub fn abandoned_fraction(decisions: &[LabelDecision]) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    decisions
        .iter()
        .filter(|d| d.outcome == Outcome::Abandoned)
        .count() as f64
        / decisions.len() as f64
}
