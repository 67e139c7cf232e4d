//! The alternating optimization loop: warm-up on labeled data, then episodes
//! of semantic refinement, clustering, anchor learning, alignment, selection
//! and supervised fine-tuning.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::align::{align, align_probabilities, apply_alignment, build_cost_matrix};
use super::loss::supervised_loss;
use super::select::{abandoned_fraction, select_labels, LabelDecision};
use crate::corpus::SplitSpec;
use crate::encoder::{
    build_prompt, fit_to_length, truncate_top_k, EncodedBatch, EncoderBackend, Mode, PromptedInput,
};
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::index_space::{anchor_labels, classify, consistency_loss, Classifier};
use crate::math::argmax;
use crate::optim::Adam;
use crate::rng::{derive_seed, rng_for};
use crate::semantic::{
    fit_centroids, self_contrastive_loss, soft_assign_rows, Centroids, KMeansConfig,
};
use crate::semifactual::TriView;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub theta: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub weight_self: f64,
    pub weight_consistency: f64,
    pub weight_supervised: f64,
    pub entropy_weight: f64,
    /// Drop the anchor's own term from the contrastive denominators.
    pub exclude_self: bool,
    pub classifier_init_scale: f64,
    /// Truncate word distributions to this many entries before clustering.
    pub word_dist_top_k: Option<usize>,
    pub kmeans: KMeansConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau1: 0.05,
            tau2: 0.1,
            theta: 0.7,
            learning_rate: 1e-4,
            max_epochs: 100,
            patience: 10,
            batch_size: 64,
            warmup_epochs: 5,
            seed: 0,
            weight_self: 1.0,
            weight_consistency: 1.0,
            weight_supervised: 1.0,
            entropy_weight: 1.0,
            exclude_self: false,
            classifier_init_scale: 0.01,
            word_dist_top_k: Some(2048),
            kmeans: KMeansConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > 0.0) || !(self.tau2 > 0.0) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!(
                "theta {} outside [0, 1]",
                self.theta
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// The three prompts of one instance (main, entity, context).
pub type TriPrompt = [PromptedInput; 3];

pub fn tri_prompts(view: &TriView, max_len: usize) -> Result<TriPrompt> {
    let build = |m: usize| -> Result<PromptedInput> {
        fit_to_length(&build_prompt(&view.views[m], &view.source_id)?, max_len)
    };
    Ok([build(0)?, build(1)?, build(2)?])
}

/// Prompts and targets for one training run. Unlabeled gold relations are
/// never stored here.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub labeled: Vec<TriPrompt>,
    pub labeled_heads: Vec<usize>,
    pub unlabeled: Vec<TriPrompt>,
    pub test: Vec<TriPrompt>,
    pub test_gold: Vec<String>,
    pub novel_relations: BTreeSet<String>,
    pub head_binding: Vec<Option<String>>,
}

/// Heads `0..|R^l|` are bound to the pre-defined relations in sorted order;
/// the remaining heads are free.
pub fn bind_heads(split: &SplitSpec, heads: usize) -> Result<Vec<Option<String>>> {
    if heads < split.predefined_relations.len() {
        return Err(Error::Config(format!(
            "{heads} heads cannot cover {} pre-defined relations",
            split.predefined_relations.len()
        )));
    }
    let mut binding: Vec<Option<String>> = split
        .predefined_relations
        .iter()
        .cloned()
        .map(Some)
        .collect();
    binding.resize(heads, None);
    Ok(binding)
}

impl TrainingSet {
    pub fn new(views: &[TriView], split: &SplitSpec, heads: usize, max_len: usize) -> Result<Self> {
        let head_binding = bind_heads(split, heads)?;
        let head_of: BTreeMap<&str, usize> = head_binding
            .iter()
            .enumerate()
            .filter_map(|(h, r)| r.as_deref().map(|r| (r, h)))
            .collect();
        let by_id: BTreeMap<&str, &TriView> =
            views.iter().map(|v| (v.source_id.as_str(), v)).collect();
        let lookup = |id: &String| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("no tri-view for split instance {id}")))
        };
        let mut set = TrainingSet {
            labeled: Vec::new(),
            labeled_heads: Vec::new(),
            unlabeled: Vec::new(),
            test: Vec::new(),
            test_gold: Vec::new(),
            novel_relations: split.novel_relations.clone(),
            head_binding: head_binding.clone(),
        };
        for id in &split.labeled_ids {
            let view = lookup(id)?;
            let rel = view
                .relation_label
                .as_deref()
                .ok_or_else(|| Error::InvalidInstance {
                    id: id.clone(),
                    reason: "labeled instance without relation".into(),
                })?;
            let head = *head_of.get(rel).ok_or_else(|| Error::InvalidInstance {
                id: id.clone(),
                reason: format!("relation {rel} is not pre-defined"),
            })?;
            set.labeled.push(tri_prompts(view, max_len)?);
            set.labeled_heads.push(head);
        }
        for id in &split.unlabeled_ids {
            set.unlabeled.push(tri_prompts(lookup(id)?, max_len)?);
        }
        for id in &split.test_ids {
            let view = lookup(id)?;
            set.test.push(tri_prompts(view, max_len)?);
            set.test_gold
                .push(
                    view.relation_label
                        .clone()
                        .ok_or_else(|| Error::InvalidInstance {
                            id: id.clone(),
                            reason: "test instance without relation".into(),
                        })?,
                );
        }
        Ok(set)
    }
}

/// Weighted combination of the three objectives for one step.
#[derive(Debug, Clone, Default)]
pub struct Objective {
    pub weight_self: f64,
    pub weight_consistency: f64,
    pub weight_supervised: f64,
    /// One entry per batch row; required when `weight_supervised > 0`.
    pub targets: Option<Vec<Option<usize>>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub self_contrastive: f64,
    pub consistency: f64,
    pub supervised: f64,
    pub total: f64,
}

/// Objective value and its gradient w.r.t. `[backend params, classifier params]`.
pub fn objective_gradient<B: EncoderBackend>(
    backend: &B,
    classifier: &Classifier,
    batch: &[&TriPrompt],
    objective: &Objective,
    config: &TrainConfig,
) -> Result<(LossParts, Vec<f64>)> {
    let mut encoded = Vec::with_capacity(3);
    let mut caches = Vec::with_capacity(3);
    let mut z = Vec::with_capacity(3);
    for m in 0..3 {
        let prompts: Vec<PromptedInput> = batch.iter().map(|t| t[m].clone()).collect();
        let (enc, cache) = backend.forward(&prompts, Mode::Train)?;
        z.push(classify(&enc.hidden, classifier)?);
        encoded.push(enc);
        caches.push(cache);
    }
    let (n, vocab) = encoded[0].word_dist.dim();
    let heads = classifier.heads();
    let mut d_v = vec![Array2::<f64>::zeros((n, vocab)); 3];
    let mut d_z = vec![Array2::<f64>::zeros((n, heads)); 3];
    let mut parts = LossParts::default();

    if objective.weight_self != 0.0 {
        let out = self_contrastive_loss(
            [
                &encoded[0].word_dist,
                &encoded[1].word_dist,
                &encoded[2].word_dist,
            ],
            config.tau1,
            config.exclude_self,
        )?;
        parts.self_contrastive = out.loss;
        for m in 0..3 {
            d_v[m].scaled_add(objective.weight_self, &out.grads[m]);
        }
    }
    if objective.weight_consistency != 0.0 {
        let out = consistency_loss(
            [&z[0], &z[1], &z[2]],
            config.tau2,
            config.exclude_self,
            config.entropy_weight,
        )?;
        parts.consistency = out.loss;
        for m in 0..3 {
            d_z[m].scaled_add(objective.weight_consistency, &out.grads[m]);
        }
    }
    if objective.weight_supervised != 0.0 {
        let targets = objective
            .targets
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("supervised objective without targets".into()))?;
        let (loss, grads) = supervised_loss([&z[0], &z[1], &z[2]], targets)?;
        parts.supervised = loss;
        for m in 0..3 {
            d_z[m].scaled_add(objective.weight_supervised, &grads[m]);
        }
    }
    parts.total = objective.weight_self * parts.self_contrastive
        + objective.weight_consistency * parts.consistency
        + objective.weight_supervised * parts.supervised;

    let mut grad_backend = vec![0.0; backend.params().len()];
    let mut grad_clf = vec![0.0; classifier.params().len()];
    for m in 0..3 {
        let (g_clf, d_hidden) = classifier.backward(&encoded[m].hidden, &z[m], &d_z[m]);
        let g_enc = backend.backward(&caches[m], &d_hidden, &d_v[m]);
        grad_clf.iter_mut().zip(g_clf).for_each(|(a, b)| *a += b);
        grad_backend
            .iter_mut()
            .zip(g_enc)
            .for_each(|(a, b)| *a += b);
    }
    grad_backend.extend(grad_clf);
    Ok((parts, grad_backend))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub acc_pre: Option<f64>,
    pub acc_nov: Option<f64>,
    pub acc_all: f64,
    pub nmi_pre: Option<f64>,
    pub nmi_nov: Option<f64>,
    pub nmi_all: f64,
    pub ari_pre: Option<f64>,
    pub ari_nov: Option<f64>,
    pub ari_all: f64,
    pub abandoned_fraction: f64,
    pub selected: usize,
    pub self_loss: f64,
    pub consistency_loss: f64,
    /// Mean cross entropy over the fine-tuning batches.
    pub supervised_loss: f64,
    /// Cross entropy on the selected unlabeled subset after fine-tuning.
    pub selected_loss: Option<f64>,
}

impl EpochMetrics {
    fn from_report(epoch: usize, report: &MetricReport) -> Self {
        EpochMetrics {
            epoch,
            acc_pre: report.pre.map(|s| s.acc),
            acc_nov: report.nov.map(|s| s.acc),
            acc_all: report.all.acc,
            nmi_pre: report.pre.map(|s| s.nmi),
            nmi_nov: report.nov.map(|s| s.nmi),
            nmi_all: report.all.nmi,
            ari_pre: report.pre.map(|s| s.ari),
            ari_nov: report.nov.map(|s| s.ari),
            ari_all: report.all.ari,
            ..Default::default()
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint<B> {
    pub backend: B,
    pub classifier: Classifier,
    pub centroids: Vec<Centroids>,
    pub head_binding: Vec<Option<String>>,
    pub config: TrainConfig,
    pub metrics: Vec<EpochMetrics>,
    /// Completed episodes.
    pub epoch: usize,
    pub warmed_up: bool,
    pub optimizer: Adam,
    pub best_acc: f64,
    pub best_epoch: usize,
    pub stagnant: usize,
    /// Parameters of the best epoch so far, if any episode has run.
    pub best_model: Option<ModelState<B>>,
}

impl<B: Serialize + DeserializeOwned> Checkpoint<B> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = bincode::serialize(self).map_err(|e| Error::Serialization(e.to_string()))?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        bincode::deserialize(&bytes)
            .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
    }
}

/// Model parameters from one epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelState<B> {
    pub backend: B,
    pub classifier: Classifier,
    pub centroids: Vec<Centroids>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

pub struct TrainOutcome<B> {
    pub best: Checkpoint<B>,
    pub last: Checkpoint<B>,
    pub stop: StopReason,
}

/// Single owner of all mutable training state.
pub struct Trainer<B: EncoderBackend> {
    backend: B,
    classifier: Classifier,
    optimizer: Adam,
    config: TrainConfig,
    centroids: Vec<Centroids>,
    head_binding: Vec<Option<String>>,
    metrics: Vec<EpochMetrics>,
    epoch: usize,
    warmed_up: bool,
    best_acc: f64,
    best_epoch: usize,
    stagnant: usize,
    best: Option<ModelState<B>>,
    diagnostic_path: Option<PathBuf>,
    last_decisions: Vec<LabelDecision>,
}

impl<B> Trainer<B>
where
    B: EncoderBackend + Clone + Serialize + DeserializeOwned,
{
    pub fn new(backend: B, head_binding: Vec<Option<String>>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let heads = head_binding.len();
        if heads == 0 {
            return Err(Error::Config(
                "at least one classification head is needed".into(),
            ));
        }
        let classifier = Classifier::random(
            heads,
            backend.hidden_dim(),
            config.classifier_init_scale,
            derive_seed(config.seed, &["classifier"]),
        );
        let optimizer = Adam::new(
            config.learning_rate,
            backend.params().len() + classifier.params().len(),
        );
        Ok(Trainer {
            backend,
            classifier,
            optimizer,
            config,
            centroids: Vec::new(),
            head_binding,
            metrics: Vec::new(),
            epoch: 0,
            warmed_up: false,
            best_acc: f64::NEG_INFINITY,
            best_epoch: 0,
            stagnant: 0,
            best: None,
            diagnostic_path: None,
            last_decisions: Vec::new(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint<B>) -> Result<Self> {
        ck.config.validate()?;
        let best = ck.best_model;
        Ok(Trainer {
            backend: ck.backend,
            classifier: ck.classifier,
            optimizer: ck.optimizer,
            config: ck.config,
            centroids: ck.centroids,
            head_binding: ck.head_binding,
            metrics: ck.metrics,
            epoch: ck.epoch,
            warmed_up: ck.warmed_up,
            best_acc: ck.best_acc,
            best_epoch: ck.best_epoch,
            stagnant: ck.stagnant,
            best,
            diagnostic_path: None,
            last_decisions: Vec::new(),
        })
    }

    /// Where to write the checkpoint if a loss turns non-finite.
    pub fn set_diagnostic_path(&mut self, path: PathBuf) {
        self.diagnostic_path = Some(path);
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.metrics
    }

    pub fn last_decisions(&self) -> &[LabelDecision] {
        &self.last_decisions
    }

    pub fn checkpoint(&self) -> Checkpoint<B> {
        Checkpoint {
            backend: self.backend.clone(),
            classifier: self.classifier.clone(),
            centroids: self.centroids.clone(),
            head_binding: self.head_binding.clone(),
            config: self.config.clone(),
            metrics: self.metrics.clone(),
            epoch: self.epoch,
            warmed_up: self.warmed_up,
            optimizer: self.optimizer.clone(),
            best_acc: self.best_acc,
            best_epoch: self.best_epoch,
            stagnant: self.stagnant,
            best_model: self.best.clone(),
        }
    }

    /// The current state with model parameters from the best epoch.
    pub fn best_checkpoint(&self) -> Checkpoint<B> {
        let mut ck = self.checkpoint();
        if let Some(best) = &self.best {
            ck.backend = best.backend.clone();
            ck.classifier = best.classifier.clone();
            ck.centroids = best.centroids.clone();
        }
        ck
    }

    fn diverged(&self, reason: String) -> Error {
        if let Some(path) = &self.diagnostic_path {
            // Best effort; the divergence error is what the caller sees.
            let _ = self.checkpoint().save(path);
        }
        Error::Diverged {
            epoch: self.epoch + 1,
            reason,
        }
    }

    fn step(&mut self, batch: &[&TriPrompt], objective: &Objective) -> Result<LossParts> {
        let (parts, grad) = objective_gradient(
            &self.backend,
            &self.classifier,
            batch,
            objective,
            &self.config,
        )?;
        if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(self.diverged(format!("non-finite loss {parts:?}")));
        }
        let n_enc = self.backend.params().len();
        let mut params = self.backend.params();
        params.extend(self.classifier.params());
        self.optimizer.update(&mut params, &grad);
        self.backend.set_params(&params[..n_enc])?;
        self.classifier.set_params(&params[n_enc..])?;
        Ok(parts)
    }

    fn shuffled(&self, n: usize, phase: &str) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(
            self.config.seed,
            &["batches", phase, &self.epoch.to_string()],
        ));
        order
    }

    /// One pass over `items` in shuffled batches; returns mean losses.
    fn pass(
        &mut self,
        items: &[&TriPrompt],
        targets: Option<&[Option<usize>]>,
        weights: (f64, f64, f64),
        phase: &str,
    ) -> Result<LossParts> {
        let order = self.shuffled(items.len(), phase);
        let mut acc = LossParts::default();
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&TriPrompt> = chunk.iter().map(|&i| items[i]).collect();
            let objective = Objective {
                weight_self: weights.0,
                weight_consistency: weights.1,
                weight_supervised: weights.2,
                targets: targets.map(|t| chunk.iter().map(|&i| t[i]).collect()),
            };
            let parts = self.step(&batch, &objective)?;
            acc.self_contrastive += parts.self_contrastive;
            acc.consistency += parts.consistency;
            acc.supervised += parts.supervised;
            acc.total += parts.total;
            batches += 1;
        }
        let b = batches.max(1) as f64;
        Ok(LossParts {
            self_contrastive: acc.self_contrastive / b,
            consistency: acc.consistency / b,
            supervised: acc.supervised / b,
            total: acc.total / b,
        })
    }

    /// Encodes every view of `items` in evaluation mode.
    pub fn encode_views(&self, items: &[TriPrompt]) -> Result<[EncodedBatch; 3]> {
        encode_views(&self.backend, items, self.config.batch_size)
    }

    /// Initializes the encoder and classifier on labeled data with all three
    /// objectives.
    pub fn warmup(&mut self, data: &TrainingSet) -> Result<()> {
        if self.warmed_up {
            return Ok(());
        }
        let items: Vec<&TriPrompt> = data.labeled.iter().collect();
        let targets: Vec<Option<usize>> = data.labeled_heads.iter().map(|&h| Some(h)).collect();
        if !items.is_empty() {
            for e in 0..self.config.warmup_epochs {
                let phase = format!("warmup-{e}");
                self.pass(
                    &items,
                    Some(&targets),
                    (
                        self.config.weight_self,
                        self.config.weight_consistency,
                        self.config.weight_supervised,
                    ),
                    &phase,
                )?;
            }
        }
        self.warmed_up = true;
        Ok(())
    }

    fn clustering_input(&self, dists: &Array2<f64>) -> Array2<f64> {
        match self.config.word_dist_top_k {
            Some(k) if k < dists.ncols() => {
                let mut out = dists.clone();
                for mut row in out.rows_mut() {
                    let t = truncate_top_k(&row.to_vec(), k);
                    row.assign(&ndarray::Array1::from(t));
                }
                out
            }
            _ => dists.clone(),
        }
    }

    /// One episode over the unlabeled data followed by test evaluation.
    pub fn episode(&mut self, data: &TrainingSet) -> Result<EpochMetrics> {
        if data.unlabeled.is_empty() {
            return Err(Error::InvalidInput("no unlabeled instances".into()));
        }
        let heads = self.head_binding.len();
        if data.unlabeled.len() < heads {
            return Err(Error::InvalidInput(format!(
                "{} unlabeled instances cannot form {heads} clusters",
                data.unlabeled.len()
            )));
        }
        let unlabeled: Vec<&TriPrompt> = data.unlabeled.iter().collect();

        // Refine the word distributions.
        let refine = self.pass(
            &unlabeled,
            None,
            (self.config.weight_self, 0.0, 0.0),
            "refine",
        )?;

        // Cluster each view.
        let encoded = self.encode_views(&data.unlabeled)?;
        let mut centroids = Vec::with_capacity(3);
        let mut assignments = Vec::with_capacity(3);
        for (m, enc) in encoded.iter().enumerate() {
            let input = self.clustering_input(&enc.word_dist);
            let seed = derive_seed(
                self.config.seed,
                &["cluster", &self.epoch.to_string(), &m.to_string()],
            );
            let c = fit_centroids(&input, heads, &self.config.kmeans, seed)?;
            assignments.push(soft_assign_rows(&input, &c)?);
            centroids.push(c);
        }
        self.centroids = centroids;

        // Anchor labels from the class-index space.
        let anchor = self.pass(
            &unlabeled,
            None,
            (0.0, self.config.weight_consistency, 0.0),
            "anchor",
        )?;
        let encoded = self.encode_views(&data.unlabeled)?;
        let mut aligned = Vec::with_capacity(3);
        let mut aligned_probs = Vec::with_capacity(3);
        for m in 0..3 {
            let z = classify(&encoded[m].hidden, &self.classifier)?;
            let anchors = anchor_labels(&z);
            let cost = build_cost_matrix(&anchors, &assignments[m].labels, heads)?;
            let alignment = align(&cost)?;
            aligned.push(apply_alignment(&assignments[m].labels, &alignment)?);
            aligned_probs.push(align_probabilities(&assignments[m].probs, &alignment));
        }

        let decisions = select_labels(
            [&aligned[0], &aligned[1], &aligned[2]],
            [&aligned_probs[0], &aligned_probs[1], &aligned_probs[2]],
            self.config.theta,
        )?;

        // Fine-tune on labeled ground truth plus selected pseudo-labels.
        let mut items: Vec<&TriPrompt> = data.labeled.iter().collect();
        let mut targets: Vec<Option<usize>> = data.labeled_heads.iter().map(|&h| Some(h)).collect();
        let mut selected = 0;
        for d in &decisions {
            if let Some(label) = d.label() {
                items.push(&data.unlabeled[d.instance]);
                targets.push(Some(label));
                selected += 1;
            }
        }
        let finetune = self.pass(
            &items,
            Some(&targets),
            (0.0, 0.0, self.config.weight_supervised),
            "finetune",
        )?;
        let selected_loss = self.selected_loss(data, &decisions)?;

        let report = self.evaluate(&data.test, &data.test_gold, &data.novel_relations)?;
        let mut metrics = EpochMetrics::from_report(self.epoch + 1, &report);
        metrics.abandoned_fraction = abandoned_fraction(&decisions);
        metrics.selected = selected;
        metrics.self_loss = refine.self_contrastive;
        metrics.consistency_loss = anchor.consistency;
        metrics.supervised_loss = finetune.supervised;
        metrics.selected_loss = selected_loss;
        self.last_decisions = decisions;
        self.epoch += 1;
        self.metrics.push(metrics.clone());
        Ok(metrics)
    }

    fn selected_loss(
        &self,
        data: &TrainingSet,
        decisions: &[LabelDecision],
    ) -> Result<Option<f64>> {
        let chosen: Vec<(usize, usize)> = decisions
            .iter()
            .filter_map(|d| d.label().map(|l| (d.instance, l)))
            .collect();
        if chosen.is_empty() {
            return Ok(None);
        }
        let items: Vec<TriPrompt> = chosen
            .iter()
            .map(|&(i, _)| data.unlabeled[i].clone())
            .collect();
        let targets: Vec<Option<usize>> = chosen.iter().map(|&(_, l)| Some(l)).collect();
        let encoded = self.encode_views(&items)?;
        let z = [
            classify(&encoded[0].hidden, &self.classifier)?,
            classify(&encoded[1].hidden, &self.classifier)?,
            classify(&encoded[2].hidden, &self.classifier)?,
        ];
        let (loss, _) = supervised_loss([&z[0], &z[1], &z[2]], &targets)?;
        Ok(Some(loss))
    }

    /// Head predictions (argmax of the view-averaged label distribution).
    pub fn predict(&self, items: &[TriPrompt]) -> Result<Vec<usize>> {
        predict_heads(
            &self.backend,
            &self.classifier,
            items,
            self.config.batch_size,
        )
    }

    pub fn evaluate(
        &self,
        items: &[TriPrompt],
        gold: &[String],
        novel: &BTreeSet<String>,
    ) -> Result<MetricReport> {
        let preds = self.predict(items)?;
        MetricReport::clustering(&preds, gold, |g| novel.contains(g))
    }

    /// Warm-up (if not yet done), then episodes until patience runs out or
    /// `max_epochs` is reached. `on_epoch` sees every epoch's metrics.
    pub fn train(
        &mut self,
        data: &TrainingSet,
        mut on_epoch: impl FnMut(&EpochMetrics, &Self) -> Result<()>,
    ) -> Result<TrainOutcome<B>> {
        self.warmup(data)?;
        let mut stop = StopReason::MaxEpochs;
        while self.epoch < self.config.max_epochs {
            if self.stagnant >= self.config.patience && self.epoch > 0 {
                stop = StopReason::Patience;
                break;
            }
            let metrics = self.episode(data)?;
            if metrics.acc_all > self.best_acc {
                self.best_acc = metrics.acc_all;
                self.best_epoch = metrics.epoch;
                self.stagnant = 0;
                self.best = Some(ModelState {
                    backend: self.backend.clone(),
                    classifier: self.classifier.clone(),
                    centroids: self.centroids.clone(),
                });
            } else {
                self.stagnant += 1;
            }
            on_epoch(&metrics, self)?;
        }
        if self.stagnant >= self.config.patience && self.epoch > 0 {
            stop = StopReason::Patience;
        }
        Ok(TrainOutcome {
            best: self.best_checkpoint(),
            last: self.checkpoint(),
            stop,
        })
    }
}

/// Encodes every view of `items` in evaluation mode, `batch_size` at a time.
pub fn encode_views<B: EncoderBackend>(
    backend: &B,
    items: &[TriPrompt],
    batch_size: usize,
) -> Result<[EncodedBatch; 3]> {
    let mut out = Vec::with_capacity(3);
    for m in 0..3 {
        let mut hidden = Vec::new();
        let mut dists = Vec::new();
        for chunk in items.chunks(batch_size.max(1)) {
            let prompts: Vec<PromptedInput> = chunk.iter().map(|t| t[m].clone()).collect();
            let (enc, _) = backend.forward(&prompts, Mode::Eval)?;
            hidden.push(enc.hidden);
            dists.push(enc.word_dist);
        }
        let stack = |parts: Vec<Array2<f64>>, width: usize| -> Array2<f64> {
            if parts.is_empty() {
                return Array2::zeros((0, width));
            }
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            concatenate(Axis(0), &views).expect("uniform widths")
        };
        out.push(EncodedBatch {
            hidden: stack(hidden, backend.hidden_dim()),
            word_dist: stack(dists, backend.vocab().len()),
        });
    }
    Ok(out.try_into().map_err(|_| ()).expect("three views"))
}

/// Mean of the three views' label distributions, per instance.
pub fn mean_label_distribution<B: EncoderBackend>(
    backend: &B,
    classifier: &Classifier,
    items: &[TriPrompt],
    batch_size: usize,
) -> Result<Array2<f64>> {
    let encoded = encode_views(backend, items, batch_size)?;
    let mut mean = Array2::<f64>::zeros((items.len(), classifier.heads()));
    for enc in &encoded {
        mean += &classify(&enc.hidden, classifier)?;
    }
    Ok(mean / 3.0)
}

pub fn predict_heads<B: EncoderBackend>(
    backend: &B,
    classifier: &Classifier,
    items: &[TriPrompt],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mean = mean_label_distribution(backend, classifier, items, batch_size)?;
    Ok(mean.rows().into_iter().map(argmax).collect())
}

/// Argmax over heads of the mean of the three views' rows.
pub fn mean_view_heads(z: [&Array2<f64>; 3]) -> Result<Vec<usize>> {
    if z[1].dim() != z[0].dim() || z[2].dim() != z[0].dim() {
        return Err(Error::Dimension("views differ in shape".into()));
    }
    let mean = (z[0] + z[1] + z[2]) / 3.0;
    Ok(mean.rows().into_iter().map(argmax).collect())
}
