//! Collaborative relation learning across the two spaces: alignment, label
//! selection, the supervised loss, and the training loop.

pub mod align;
pub mod loss;
pub mod select;
pub mod train;

pub use align::{align, align_probabilities, apply_alignment, build_cost_matrix, Alignment};
pub use loss::supervised_loss;
pub use select::{abandoned_fraction, decide, select_labels, LabelDecision, Outcome};
pub use train::{
    bind_heads, encode_views, mean_label_distribution, mean_view_heads, objective_gradient,
    predict_heads, tri_prompts, Checkpoint, EpochMetrics, LossParts, ModelState, Objective,
    StopReason, TrainConfig, TrainOutcome, Trainer, TrainingSet, TriPrompt,
};

use crate::encoder::EncoderBackend;
use crate::error::Result;
use crate::index_space::Classifier;
use crate::math::argmax;
use crate::semantic::{estimate_relation_count, top_relational_words, KMeansConfig};

/// Inference result for one instance.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Prediction {
    pub instance_id: String,
    pub head: usize,
    /// The pre-defined relation bound to `head`, if any.
    pub relation: Option<String>,
    pub words: Vec<String>,
}

/// Predicted head (argmax of the view-averaged label distribution) plus the
/// top `k_words` words of the main view's word distribution.
pub fn infer<B: EncoderBackend>(
    backend: &B,
    classifier: &Classifier,
    head_binding: &[Option<String>],
    items: &[TriPrompt],
    k_words: usize,
    batch_size: usize,
) -> Result<Vec<Prediction>> {
    let mean = mean_label_distribution(backend, classifier, items, batch_size)?;
    let encoded = encode_views(backend, items, batch_size)?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let head = argmax(mean.row(i));
            let dist = encoded[0].word_dist.row(i).to_vec();
            Ok(Prediction {
                instance_id: item[0].instance_id.clone(),
                head,
                relation: head_binding.get(head).cloned().flatten(),
                words: top_relational_words(&dist, backend.vocab(), k_words)?,
            })
        })
        .collect()
}

/// Estimates the number of relations from main-view word distributions of
/// unlabeled data.
pub fn estimate_heads<B: EncoderBackend>(
    backend: &B,
    unlabeled: &[TriPrompt],
    k_init: usize,
    config: &KMeansConfig,
    seed: u64,
    batch_size: usize,
) -> Result<usize> {
    let encoded = encode_views(backend, unlabeled, batch_size)?;
    estimate_relation_count(&encoded[0].word_dist, k_init, config, seed)
}
