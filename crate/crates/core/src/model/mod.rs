//! The topic-biased language model.
//!
//! Word logits are `Vᵀh + (1 − l)·Bᵀθ`, where `h` is the top recurrent
//! state, `l` the stop-word indicator and `θ` the document topic vector.
//! The stop indicator itself is modelled as `Bernoulli(σ(Γᵀh))`.
//!
//! Parameter layout:
//!
//! | name          | shape    |
//! |---------------|----------|
//! | `embedding`   | `[C, H]` |
//! | `cell.*`      | see [`crate::cells`] |
//! | `output`      | `[H, C]` |
//! | `stop`        | `[H]`    |
//! | `topic_words` | `[K, C]` |
//! | `infer.*`     | see [`crate::inference`] |

mod elbo;
mod eval;
mod generate;
mod topics;
mod train;

pub use elbo::{
    doc_log_likelihood, elbo_graph, sequence_elbo, ElboBreakdown, ElboOptions, ElboVars,
};
pub use eval::{document_nlls, perplexity, perplexity_with, EvalOptions, ThetaWindow};
pub use generate::{generate, GenerateOptions};
pub use topics::top_topic_words;
pub use train::{train, train_model, EpochMetrics, TrainConfig, TrainOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{CellConfig, CellKind, HiddenState};
use crate::corpus::Vocabulary;
use crate::engine::{log_sigmoid, sigmoid, softmax, ParamStore, Tensor};
use crate::inference::{self, GaussianPosterior, InferenceConfig};
use crate::{Error, Result};

/// Default half-width of the uniform parameter initialisation.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub topic_dim: usize,
    pub cell: CellConfig,
    pub inference: InferenceConfig,
}

impl ModelConfig {
    pub fn new(
        vocab: &Vocabulary,
        kind: CellKind,
        hidden: usize,
        layers: usize,
        topics: usize,
        infer_hidden: usize,
        infer_layers: usize,
    ) -> Self {
        Self {
            vocab_size: vocab.len(),
            topic_dim: topics,
            cell: CellConfig::new(kind, hidden).with_layers(layers),
            inference: InferenceConfig {
                input_size: vocab.bow_len(),
                hidden_size: infer_hidden,
                num_hidden_layers: infer_layers,
                topic_dim: topics,
                normalize_bow: false,
            },
        }
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden_size
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        self.inference.validate()?;
        if self.cell.input_size != self.cell.hidden_size {
            return Err(Error::Config("embedding width must equal the hidden size".into()));
        }
        if self.inference.topic_dim != self.topic_dim || self.topic_dim == 0 {
            return Err(Error::Config("topic dimension mismatch".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocabulary too small".into()));
        }
        Ok(())
    }

    /// Scalar parameter counts per component, each from its own shape formula.
    pub fn param_breakdown(&self) -> ParamBreakdown {
        let (c, h, k) = (self.vocab_size, self.hidden(), self.topic_dim);
        let embedding = c * h;
        let cell = self.cell.param_count();
        let output = h * c;
        let stop = h;
        let topic_words = k * c;
        let inference = self.inference.param_count();
        ParamBreakdown {
            embedding,
            cell,
            output,
            stop,
            topic_words,
            inference,
            total: embedding + cell + output + stop + topic_words + inference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub embedding: usize,
    pub cell: usize,
    pub output: usize,
    pub stop: usize,
    pub topic_words: usize,
    pub inference: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicRnn {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

impl TopicRnn {
    /// Uniform initialisation in `[-scale, scale]` from `seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64, scale: f64) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size || vocab.bow_len() != config.inference.input_size {
            return Err(Error::Config(format!(
                "vocabulary sizes ({}, {}) disagree with the model config ({}, {})",
                vocab.len(),
                vocab.bow_len(),
                config.vocab_size,
                config.inference.input_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, k) = (config.vocab_size, config.hidden(), config.topic_dim);
        let mut params = ParamStore::new();
        params.insert_uniform("embedding", &[c, h], scale, &mut rng)?;
        config.cell.init_params(&mut params, scale, &mut rng)?;
        params.insert_uniform("output", &[h, c], scale, &mut rng)?;
        params.insert_uniform("stop", &[h], scale, &mut rng)?;
        params.insert_uniform("topic_words", &[k, c], scale, &mut rng)?;
        config.inference.init_params(&mut params, scale, &mut rng)?;
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    pub fn zeros(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        Self::new(config, vocab, 0, 0.0)
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name)
    }

    /// q(θ | bag of words).
    pub fn posterior(&self, bow: &[u32]) -> Result<GaussianPosterior> {
        inference::encode(&self.config.inference, &self.params, bow)
    }

    /// `Bᵀθ`, the additive topic bias over the vocabulary.
    pub fn topic_bias(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let b = self.params.get("topic_words")?;
        check_len(theta.len(), self.config.topic_dim, "topic vector")?;
        let (k, c) = b.dims2().expect("matrix");
        let mut out = vec![0.0; c];
        for (row, th) in b.data().chunks_exact(c).zip(theta).take(k) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v * th;
            }
        }
        Ok(out)
    }

    /// `Vᵀh`.
    pub fn rnn_logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        let v = self.params.get("output")?;
        check_len(h.len(), self.config.hidden(), "hidden vector")?;
        let c = self.config.vocab_size;
        let mut out = vec![0.0; c];
        for (row, hv) in v.data().chunks_exact(c).zip(h) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * hv;
            }
        }
        Ok(out)
    }

    /// Logit for word `i`: `v_iᵀh + (1 − l)·b_iᵀθ`. With `l = 1` the topic
    /// term is skipped entirely, so the result is bitwise independent of θ.
    pub fn word_logits(&self, h: &[f64], theta: &[f64], stop: bool) -> Result<Vec<f64>> {
        let mut logits = self.rnn_logits(h)?;
        check_len(theta.len(), self.config.topic_dim, "topic vector")?;
        if !stop {
            for (l, b) in logits.iter_mut().zip(self.topic_bias(theta)?) {
                *l += b;
            }
        }
        Ok(logits)
    }

    /// σ(Γᵀh).
    pub fn stop_probability(&self, h: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.stop_logit(h)?))
    }

    fn stop_logit(&self, h: &[f64]) -> Result<f64> {
        let gamma = self.params.get("stop")?;
        check_len(h.len(), gamma.len(), "hidden vector")?;
        Ok(gamma.data().iter().zip(h).map(|(a, b)| a * b).sum())
    }

    /// p(y | h, θ̂) with the stop indicator marginalised out:
    /// `σ(Γᵀh)·softmax(Vᵀh) + (1 − σ(Γᵀh))·softmax(Vᵀh + Bᵀθ̂)`.
    pub fn predictive_distribution(&self, h: &[f64], theta_hat: &[f64]) -> Result<Vec<f64>> {
        let bias = self.topic_bias(theta_hat)?;
        self.predictive_with_bias(h, Some(&bias), 1.0)
    }

    /// Mixture distribution given a precomputed topic bias; `temperature`
    /// divides both branches' word logits.
    pub(crate) fn predictive_with_bias(
        &self,
        h: &[f64],
        topic_bias: Option<&[f64]>,
        temperature: f64,
    ) -> Result<Vec<f64>> {
        let rnn = self.rnn_logits(h)?;
        let s = self.stop_logit(h)?;
        let (log_p_stop, log_p_content) = (log_sigmoid(s), log_sigmoid(-s));
        let scaled: Vec<f64> = rnn.iter().map(|x| x / temperature).collect();
        let stop_branch = softmax(&scaled)?;
        let content_branch = match topic_bias {
            Some(b) => {
                let logits: Vec<f64> = rnn.iter().zip(b).map(|(x, b)| (x + b) / temperature).collect();
                softmax(&logits)?
            }
            None => stop_branch.clone(),
        };
        let (ps, pc) = (log_p_stop.exp(), log_p_content.exp());
        Ok(stop_branch
            .iter()
            .zip(&content_branch)
            .map(|(a, b)| ps * a + pc * b)
            .collect())
    }

    pub fn init_state(&self) -> HiddenState {
        crate::cells::init_state(&self.config.cell)
    }

    /// Advances the recurrent state by one input token.
    pub fn step(&self, token: usize, state: &HiddenState) -> Result<HiddenState> {
        let emb = self.params.get("embedding")?;
        if token >= self.config.vocab_size {
            return Err(Error::Validation(format!("token id {token} out of range")));
        }
        crate::cells::cell_step(&self.config.cell, &self.params, emb.row(token), state)
    }

    /// Zeroes `B` and excludes it from optimisation.
    pub fn freeze_topics(&mut self) -> Result<()> {
        self.params.get_mut("topic_words")?.fill(0.0);
        self.params.set_trainable("topic_words", false)
    }
}

fn check_len(got: usize, expected: usize, what: &str) -> Result<()> {
    if got != expected {
        return Err(Error::Config(format!("{what} has length {got}, expected {expected}")));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::corpus::{build_vocabulary, EOS, UNK};
    use std::collections::BTreeSet;

    /// Vocabulary `<unk> <eos> w0 .. w{n-3}` where `w0..w{stops-1}` are stop words.
    pub fn vocab(n: usize, stops: usize) -> Vocabulary {
        let mut tokens = vec![UNK.to_string(), EOS.to_string()];
        let mut flags = vec![false, false];
        for i in 0..n - 2 {
            tokens.push(format!("w{i}"));
            flags.push(i < stops);
        }
        Vocabulary::from_parts(tokens, flags).unwrap()
    }

    pub fn tiny_model(kind: CellKind, c: usize, h: usize, k: usize, e: usize, seed: u64, scale: f64) -> TopicRnn {
        let v = vocab(c, 3);
        let cfg = ModelConfig::new(&v, kind, h, 1, k, e, 1);
        TopicRnn::new(cfg, v, seed, scale).unwrap()
    }

    #[allow(dead_code)]
    pub fn vocab_from(words: &str, stop: &[&str]) -> Vocabulary {
        let stop: BTreeSet<String> = stop.iter().map(|s| s.to_string()).collect();
        build_vocabulary(words.split_whitespace(), 1000, &stop).unwrap()
    }
}
