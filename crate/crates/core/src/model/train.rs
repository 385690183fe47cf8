//! Variational training with truncated backpropagation through time.
//!
//! Each document visit draws one θ sample, builds the whole document on a
//! single graph with the hidden state detached at every `bptt_len`
//! boundary, and takes one clipped Adam step on −ELBO / T.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::elbo::{elbo_graph, ElboOptions};
use super::eval::{perplexity_with, EvalOptions};
use super::{ModelConfig, TopicRnn, INIT_SCALE};
use crate::cells::CellKind;
use crate::corpus::{CorpusSplit, Vocabulary};
use crate::engine::{clip_gradients, AdamConfig, AdamState, Graph, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub cell: CellKind,
    pub hidden: usize,
    pub layers: usize,
    pub topics: usize,
    pub infer_hidden: usize,
    pub infer_layers: usize,
    pub bptt_len: usize,
    pub epochs: usize,
    pub lr: f64,
    pub clip: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// θ̂ refresh interval used for validation perplexity.
    pub window: usize,
    /// `false` trains the plain RNN baseline: `B` frozen at zero, no KL.
    pub use_topics: bool,
    pub normalize_bow: bool,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Rnn,
            hidden: 100,
            layers: 1,
            topics: 50,
            infer_hidden: 200,
            infer_layers: 2,
            bptt_len: 20,
            epochs: 15,
            lr: 1e-3,
            clip: 5.0,
            seed: 0,
            patience: None,
            window: 10,
            use_topics: true,
            normalize_bow: false,
            init_scale: INIT_SCALE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bptt_len == 0 || self.epochs == 0 || self.window == 0 {
            return Err(Error::Config("bptt length, epochs and window must be at least 1".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip norm must be positive, got {}", self.clip)));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab: &Vocabulary) -> ModelConfig {
        let mut cfg = ModelConfig::new(
            vocab,
            self.cell,
            self.hidden,
            self.layers,
            self.topics,
            self.infer_hidden,
            self.infer_layers,
        );
        cfg.inference.normalize_bow = self.normalize_bow;
        cfg
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            window: self.window,
            use_topics: self.use_topics,
            ..EvalOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_elbo_per_token: f64,
    pub valid_perplexity: f64,
    pub kl_per_token: f64,
    pub seconds: f64,
    pub train_elbo: f64,
    pub train_tokens: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation perplexity.
    pub model: TopicRnn,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

/// Initialises a model from `config.seed` and trains it.
pub fn train(
    vocab: &Vocabulary,
    train_split: &CorpusSplit,
    valid_split: &CorpusSplit,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    let model = TopicRnn::new(config.model_config(vocab), vocab.clone(), config.seed, config.init_scale)?;
    train_model(model, train_split, valid_split, config, on_epoch)
}

/// Trains an existing model in place of its current parameters.
pub fn train_model(
    mut model: TopicRnn,
    train_split: &CorpusSplit,
    valid_split: &CorpusSplit,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_split.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    if !config.use_topics {
        model.freeze_topics()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &model.params)?;
    let options = ElboOptions {
        bptt_len: Some(config.bptt_len),
        use_topics: config.use_topics,
    };
    let k = model.config.topic_dim;

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train_split.documents.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut elbo_sum, mut kl_sum, mut tokens) = (0.0, 0.0, 0usize);
        for &doc_index in &order {
            let doc = &train_split.documents[doc_index];
            if doc.is_empty() {
                continue;
            }
            let noise: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            let t = doc.len() as f64;
            let (grads, breakdown, loss) = {
                let mut g = Graph::new(&model.params);
                let vars = elbo_graph(&mut g, &model, doc, &noise, options)?;
                let loss = g.scale(vars.elbo, -1.0 / t);
                let loss_value = g.scalar_value(loss);
                if !loss_value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        doc: doc_index,
                        value: loss_value,
                    });
                }
                (g.backward(loss)?, vars.breakdown(&g), loss_value)
            };
            log::trace!("epoch {epoch} doc {doc_index} loss {loss:.4}");
            model.params.accumulate(&grads)?;
            clip_gradients(&mut model.params, config.clip);
            adam.step(&mut model.params)?;
            elbo_sum += breakdown.elbo;
            kl_sum += breakdown.kl;
            tokens += doc.len();
        }

        let valid_perplexity = perplexity_with(&model, valid_split, config.eval_options())?;
        let metrics = EpochMetrics {
            epoch,
            train_elbo_per_token: elbo_sum / tokens.max(1) as f64,
            valid_perplexity,
            kl_per_token: kl_sum / tokens.max(1) as f64,
            seconds: started.elapsed().as_secs_f64(),
            train_elbo: elbo_sum,
            train_tokens: tokens,
        };
        log::info!(
            "epoch {epoch}: elbo/token {:.4}, valid ppl {:.3}, kl/token {:.4}",
            metrics.train_elbo_per_token,
            metrics.valid_perplexity,
            metrics.kl_per_token
        );
        on_epoch(&metrics);
        history.push(metrics);

        let improved = best.as_ref().is_none_or(|(ppl, _, _)| valid_perplexity < *ppl);
        if improved {
            best = Some((valid_perplexity, epoch, model.params.clone()));
        } else if let (Some(patience), Some((_, best_epoch, _))) = (config.patience, best.as_ref()) {
            if epoch - best_epoch >= patience {
                log::info!("early stopping after epoch {epoch}");
                break;
            }
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    model.params.copy_values_from(&params)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, encode_documents};
    use std::collections::BTreeSet;

    fn data() -> (Vocabulary, CorpusSplit, CorpusSplit) {
        let text = "the cat sat on the mat\nthe dog ate the bone\na cat and a dog\nbonds rates and the market\n";
        let stop: BTreeSet<String> = ["the", "a", "and", "on"].iter().map(|s| s.to_string()).collect();
        let v = build_vocabulary(text.split_whitespace(), 100, &stop).unwrap();
        let tr = encode_documents(text, &v, 2, "train").unwrap();
        let va = encode_documents("the cat ate\na market\n", &v, 1, "valid").unwrap();
        (v, tr, va)
    }

    fn small() -> TrainConfig {
        TrainConfig {
            hidden: 4,
            topics: 2,
            infer_hidden: 5,
            infer_layers: 1,
            bptt_len: 3,
            epochs: 3,
            lr: 1e-2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let (v, tr, va) = data();
        let cfg = TrainConfig { lr: 0.0, ..small() };
        let init = TopicRnn::new(cfg.model_config(&v), v.clone(), cfg.seed, cfg.init_scale).unwrap();
        let out = train(&v, &tr, &va, &cfg, |_| {}).unwrap();
        assert_eq!(out.model.params, init.params);
    }

    #[test]
    fn deterministic_per_seed() {
        let (v, tr, va) = data();
        let a = train(&v, &tr, &va, &small(), |_| {}).unwrap();
        let b = train(&v, &tr, &va, &small(), |_| {}).unwrap();
        assert_eq!(a.history[0].train_elbo.to_bits(), b.history[0].train_elbo.to_bits());
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn training_improves_elbo() {
        let (v, tr, va) = data();
        let cfg = TrainConfig { epochs: 30, ..small() };
        let out = train(&v, &tr, &va, &cfg, |_| {}).unwrap();
        let first = out.history.first().unwrap().train_elbo_per_token;
        let last = out.history.last().unwrap().train_elbo_per_token;
        assert!(last > first, "{first} -> {last}");
    }

    #[test]
    fn baseline_keeps_topic_matrix_zero() {
        let (v, tr, va) = data();
        let cfg = TrainConfig { use_topics: false, ..small() };
        let out = train(&v, &tr, &va, &cfg, |_| {}).unwrap();
        assert!(out.model.param("topic_words").unwrap().data().iter().all(|&x| x == 0.0));
        assert!(out.history.iter().all(|m| m.kl_per_token == 0.0));
    }

    #[test]
    fn early_stopping_restores_best() {
        let (v, tr, va) = data();
        let cfg = TrainConfig { epochs: 12, lr: 0.3, patience: Some(1), ..small() };
        let mut seen = Vec::new();
        let out = train(&v, &tr, &va, &cfg, |m| seen.push(m.valid_perplexity)).unwrap();
        let best = seen.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(seen[out.best_epoch - 1], best);
        let ppl = perplexity_with(&out.model, &va, cfg.eval_options()).unwrap();
        assert!((ppl - best).abs() < 1e-9);
    }

    #[test]
    fn nan_loss_aborts_with_location() {
        let (v, tr, va) = data();
        let cfg = small();
        let mut model = TopicRnn::new(cfg.model_config(&v), v.clone(), 1, 0.1).unwrap();
        model.params.get_mut("stop").unwrap().fill(f64::NAN);
        let err = train_model(model, &tr, &va, &cfg, |_| {}).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, .. }), "{err}");
    }
}
