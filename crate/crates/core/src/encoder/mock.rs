use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EncodedBatch, EncoderBackend, Mode, PromptedInput};
use crate::error::{Error, Result};
use crate::math::softmax_rows;
use crate::rng::rng_for;

/// Deterministic CPU encoder for tests and synthetic runs.
///
/// Tokens listed in the planted table embed to their table vector; every
/// other token (markers and `[MASK]` included) gets a fixed pseudo-random
/// vector of scale `noise_scale` derived from `(seed, token)`. The masked
/// position reads the mean token embedding through a trainable affine map;
/// vocabulary logits are the dot products with the planted vectors, so the
/// vocabulary is exactly the planted table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockBackend {
    dim: usize,
    vocab: Vec<String>,
    index: BTreeMap<String, usize>,
    output: Array2<f64>,
    weight: Array2<f64>,
    bias: Array1<f64>,
    noise_scale: f64,
    seed: u64,
    max_len: usize,
}

#[derive(Debug, Clone)]
pub struct MockCache {
    pooled: Array2<f64>,
    word_dist: Array2<f64>,
}

impl MockBackend {
    /// `table` maps vocabulary words to their planted vectors (equal length).
    pub fn new(
        table: BTreeMap<String, Vec<f64>>,
        noise_scale: f64,
        seed: u64,
        max_len: usize,
    ) -> Result<Self> {
        let dim = table
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("mock table is empty".into()))?;
        if dim == 0 || table.values().any(|v| v.len() != dim) {
            return Err(Error::Dimension("mock table rows differ in width".into()));
        }
        let vocab: Vec<String> = table.keys().cloned().collect();
        let mut output = Array2::zeros((vocab.len(), dim));
        for (i, v) in table.values().enumerate() {
            output.row_mut(i).assign(&Array1::from(v.clone()));
        }
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(MockBackend {
            dim,
            vocab,
            index,
            output,
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
            noise_scale,
            seed,
            max_len,
        })
    }

    /// Table file: `token<TAB>x1 x2 ... xd` per line.
    pub fn load_table(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = BTreeMap::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Lexicon {
                path: path.to_path_buf(),
                line: line_no + 1,
                reason,
            };
            let (token, values) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `token<TAB>values`".into()))?;
            let values: Vec<f64> = values
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(format!("bad number: {e}")))?;
            table.insert(token.to_string(), values);
        }
        Ok(table)
    }

    pub fn table_to_string(table: &BTreeMap<String, Vec<f64>>) -> String {
        let mut out = String::new();
        for (token, values) in table {
            let vals: Vec<String> = values.iter().map(|v| format!("{v:.17e}")).collect();
            out.push_str(token);
            out.push('\t');
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, token: &str) -> Array1<f64> {
        match self.index.get(token) {
            Some(&i) => self.output.row(i).to_owned(),
            None => {
                let mut rng = rng_for(self.seed, &["mock-token", token]);
                Array1::from_shape_fn(self.dim, |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * self.noise_scale
                })
            }
        }
    }

    fn pool(&self, prompt: &PromptedInput) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim);
        for tok in &prompt.tokens {
            acc += &self.embed(tok);
        }
        acc / prompt.tokens.len().max(1) as f64
    }
}

impl EncoderBackend for MockBackend {
    type Cache = MockCache;

    fn hidden_dim(&self) -> usize {
        self.dim
    }

    fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn forward(&self, batch: &[PromptedInput], _mode: Mode) -> Result<(EncodedBatch, MockCache)> {
        let mut pooled = Array2::zeros((batch.len(), self.dim));
        for (i, prompt) in batch.iter().enumerate() {
            if prompt.tokens.len() > self.max_len {
                return Err(Error::PromptTooLong {
                    id: prompt.instance_id.clone(),
                    max_len: self.max_len,
                    needed: prompt.tokens.len(),
                });
            }
            pooled.row_mut(i).assign(&self.pool(prompt));
        }
        let hidden = pooled.dot(&self.weight.t()) + &self.bias;
        let word_dist = softmax_rows(&hidden.dot(&self.output.t()));
        Ok((
            EncodedBatch {
                hidden,
                word_dist: word_dist.clone(),
            },
            MockCache { pooled, word_dist },
        ))
    }

    fn backward(
        &self,
        cache: &MockCache,
        d_hidden: &Array2<f64>,
        d_word_dist: &Array2<f64>,
    ) -> Vec<f64> {
        let d_logits = crate::math::softmax_backward(&cache.word_dist, d_word_dist);
        let d_x = d_hidden + &d_logits.dot(&self.output);
        let d_weight = d_x.t().dot(&cache.pooled);
        let d_bias = d_x.sum_axis(Axis(0));
        d_weight.iter().chain(d_bias.iter()).copied().collect()
    }

    fn params(&self) -> Vec<f64> {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .copied()
            .collect()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let n_w = self.dim * self.dim;
        if params.len() != n_w + self.dim {
            return Err(Error::Dimension(format!(
                "mock backend has {} parameters, got {}",
                n_w + self.dim,
                params.len()
            )));
        }
        self.weight = Array2::from_shape_vec((self.dim, self.dim), params[..n_w].to_vec())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        self.bias = Array1::from(params[n_w..].to_vec());
        Ok(())
    }
}
