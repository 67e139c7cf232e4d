//! Plain-text `key = value` experiment configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::collab::TrainConfig;
use crate::corpus::{DatasetFormat, SizingPolicy};
use crate::error::{Error, Result};
use crate::semifactual::DEFAULT_CONTEXT_RATIO;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            other => Err(Error::Config(format!(
                "backend `{other}` is not available in this build (supported: mock)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub format: DatasetFormat,
    /// Optional `id<TAB>tags` part-of-speech file.
    pub pos_tags: Option<PathBuf>,
    pub novel_ratio: f64,
    pub split_policy: String,
    pub backend: BackendKind,
    /// Planted vector table for the mock backend.
    pub encoder_table: Option<PathBuf>,
    pub noise_scale: f64,
    pub max_len: usize,
    pub checkpoint: Option<PathBuf>,
    pub entity_types: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    /// `relation<TAB>description` used for the COS / KL scores.
    pub descriptions: Option<PathBuf>,
    pub context_ratio: f64,
    pub output_dir: PathBuf,
    /// Use the ground-truth relation count instead of estimating it.
    pub known_k: bool,
    pub k_init: usize,
    pub top_words: usize,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            format: DatasetFormat::FewrelJson,
            pos_tags: None,
            novel_ratio: 0.2,
            split_policy: "fewrel".into(),
            backend: BackendKind::Mock,
            encoder_table: None,
            noise_scale: 0.1,
            max_len: 128,
            checkpoint: None,
            entity_types: None,
            synonyms: None,
            descriptions: None,
            context_ratio: DEFAULT_CONTEXT_RATIO,
            output_dir: PathBuf::from("out"),
            known_k: true,
            k_init: 100,
            top_words: 3,
            train: TrainConfig::default(),
        }
    }
}

/// Every key accepted by [`ExperimentConfig::set`].
pub const KEYS: &[&str] = &[
    "dataset",
    "format",
    "pos_tags",
    "novel_ratio",
    "split_policy",
    "backend",
    "encoder_table",
    "noise_scale",
    "max_len",
    "checkpoint",
    "entity_types",
    "synonyms",
    "descriptions",
    "context_ratio",
    "output_dir",
    "known_k",
    "k_init",
    "top_words",
    "seed",
    "tau1",
    "tau2",
    "theta",
    "learning_rate",
    "max_epochs",
    "patience",
    "batch_size",
    "warmup_epochs",
    "weight_self",
    "weight_consistency",
    "weight_supervised",
    "entropy_weight",
    "exclude_self",
    "classifier_init_scale",
    "word_dist_top_k",
    "kmeans_n_init",
    "kmeans_max_iter",
    "kmeans_tol",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = `{value}`: {e}")))
}

fn path_or_none(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Lines are `key = value`; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "dataset" => self.dataset = path_or_none(value),
            "format" => self.format = value.parse()?,
            "pos_tags" => self.pos_tags = path_or_none(value),
            "novel_ratio" => self.novel_ratio = parse_num(key, value)?,
            "split_policy" => {
                SizingPolicy::from_str(value)?;
                self.split_policy = value.to_string();
            }
            "backend" => self.backend = value.parse()?,
            "encoder_table" => self.encoder_table = path_or_none(value),
            "noise_scale" => self.noise_scale = parse_num(key, value)?,
            "max_len" => self.max_len = parse_num(key, value)?,
            "checkpoint" => self.checkpoint = path_or_none(value),
            "entity_types" => self.entity_types = path_or_none(value),
            "synonyms" => self.synonyms = path_or_none(value),
            "descriptions" => self.descriptions = path_or_none(value),
            "context_ratio" => self.context_ratio = parse_num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "known_k" => self.known_k = parse_num(key, value)?,
            "k_init" => self.k_init = parse_num(key, value)?,
            "top_words" => self.top_words = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "tau1" => t.tau1 = parse_num(key, value)?,
            "tau2" => t.tau2 = parse_num(key, value)?,
            "theta" => t.theta = parse_num(key, value)?,
            "learning_rate" => t.learning_rate = parse_num(key, value)?,
            "max_epochs" => t.max_epochs = parse_num(key, value)?,
            "patience" => t.patience = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "warmup_epochs" => t.warmup_epochs = parse_num(key, value)?,
            "weight_self" => t.weight_self = parse_num(key, value)?,
            "weight_consistency" => t.weight_consistency = parse_num(key, value)?,
            "weight_supervised" => t.weight_supervised = parse_num(key, value)?,
            "entropy_weight" => t.entropy_weight = parse_num(key, value)?,
            "exclude_self" => t.exclude_self = parse_num(key, value)?,
            "classifier_init_scale" => t.classifier_init_scale = parse_num(key, value)?,
            "word_dist_top_k" => {
                t.word_dist_top_k = match value {
                    "" | "full" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "kmeans_n_init" => t.kmeans.n_init = parse_num(key, value)?,
            "kmeans_max_iter" => t.kmeans.max_iter = parse_num(key, value)?,
            "kmeans_tol" => t.kmeans.tol = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn sizing(&self) -> Result<SizingPolicy> {
        self.split_policy.parse()
    }

    /// Range checks on the numeric fields.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.sizing()?;
        if !(0.0..1.0).contains(&self.novel_ratio) {
            return Err(Error::Config(format!(
                "novel_ratio {} outside [0, 1)",
                self.novel_ratio
            )));
        }
        if !(self.context_ratio > 0.0 && self.context_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "context_ratio {} outside (0, 1]",
                self.context_ratio
            )));
        }
        if self.max_len < 8 {
            return Err(Error::Config("max_len must be at least 8".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Config("noise_scale must be non-negative".into()));
        }
        if self.k_init == 0 || self.top_words == 0 {
            return Err(Error::Config(
                "k_init and top_words must be positive".into(),
            ));
        }
        if self.train.kmeans.n_init == 0 || self.train.kmeans.max_iter == 0 {
            return Err(Error::Config(
                "kmeans_n_init and kmeans_max_iter must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Checks that every configured path exists.
    pub fn check_paths(&self) -> Result<()> {
        let paths = [
            ("dataset", &self.dataset),
            ("pos_tags", &self.pos_tags),
            ("encoder_table", &self.encoder_table),
            ("entity_types", &self.entity_types),
            ("synonyms", &self.synonyms),
            ("descriptions", &self.descriptions),
        ];
        for (key, path) in paths {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "{key}: {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serializes back to the `key = value` format; `parse` round-trips it.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let format = match self.format {
            DatasetFormat::FewrelJson => "fewrel-json",
            DatasetFormat::TacredJson => "tacred-json",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("dataset", show_path(&self.dataset)),
            ("format", format.into()),
            ("pos_tags", show_path(&self.pos_tags)),
            ("novel_ratio", self.novel_ratio.to_string()),
            ("split_policy", self.split_policy.clone()),
            ("backend", "mock".into()),
            ("encoder_table", show_path(&self.encoder_table)),
            ("noise_scale", self.noise_scale.to_string()),
            ("max_len", self.max_len.to_string()),
            ("checkpoint", show_path(&self.checkpoint)),
            ("entity_types", show_path(&self.entity_types)),
            ("synonyms", show_path(&self.synonyms)),
            ("descriptions", show_path(&self.descriptions)),
            ("context_ratio", self.context_ratio.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("known_k", self.known_k.to_string()),
            ("k_init", self.k_init.to_string()),
            ("top_words", self.top_words.to_string()),
            ("seed", t.seed.to_string()),
            ("tau1", t.tau1.to_string()),
            ("tau2", t.tau2.to_string()),
            ("theta", t.theta.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("warmup_epochs", t.warmup_epochs.to_string()),
            ("weight_self", t.weight_self.to_string()),
            ("weight_consistency", t.weight_consistency.to_string()),
            ("weight_supervised", t.weight_supervised.to_string()),
            ("entropy_weight", t.entropy_weight.to_string()),
            ("exclude_self", t.exclude_self.to_string()),
            ("classifier_init_scale", t.classifier_init_scale.to_string()),
            (
                "word_dist_top_k",
                t.word_dist_top_k
                    .map(|k| k.to_string())
                    .unwrap_or_else(|| "full".into()),
            ),
            ("kmeans_n_init", t.kmeans.n_init.to_string()),
            ("kmeans_max_iter", t.kmeans.max_iter.to_string()),
            ("kmeans_tol", t.kmeans.tol.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
