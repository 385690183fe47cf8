//! Per-token negative log-likelihood and perplexity with a sliding topic
//! estimate.
//!
//! Within a document θ̂ starts at the prior mean (zero). At every multiple
//! of `window` tokens it is replaced by the posterior mean of the bag of
//! non-stop tokens already scored, so the tokens being scored never feed
//! their own topic estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TopicRnn;
use crate::corpus::{CorpusSplit, EncodedDocument};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaWindow {
    /// Encode every earlier token of the document.
    Cumulative,
    /// Encode only the previous `window` tokens.
    Trailing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub window: usize,
    pub mode: ThetaWindow,
    /// `false` evaluates with the topic bias removed (B treated as zero).
    pub use_topics: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            window: 10,
            mode: ThetaWindow::Cumulative,
            use_topics: true,
        }
    }
}

impl EvalOptions {
    pub fn with_window(window: usize) -> Self {
        Self {
            window,
            ..Self::default()
        }
    }
}

/// Negative log-likelihood of each token of `doc` under the predictive
/// distribution.
pub fn document_nlls(model: &TopicRnn, doc: &EncodedDocument, options: EvalOptions) -> Result<Vec<f64>> {
    if options.window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    let vocab = &model.vocab;
    let mut bow = vec![0u32; vocab.bow_len()];
    let mut topic_bias: Option<Vec<f64>> = None;
    let mut state = model.init_state();
    let mut prev = vocab.eos_id();
    let mut nlls = Vec::with_capacity(doc.len());

    for (t, &y) in doc.ids.iter().enumerate() {
        if options.use_topics && t > 0 && t % options.window == 0 {
            if options.mode == ThetaWindow::Trailing {
                bow.iter_mut().for_each(|c| *c = 0);
                for &id in &doc.ids[t - options.window..t] {
                    if let Some(slot) = vocab.bow_slot(id) {
                        bow[slot] += 1;
                    }
                }
            }
            let mu = model.posterior(&bow)?.mu;
            topic_bias = Some(model.topic_bias(&mu)?);
        }
        state = model.step(prev, &state)?;
        let p = model.predictive_with_bias(state.top(), topic_bias.as_deref(), 1.0)?;
        nlls.push(-p[y].ln());
        if options.mode == ThetaWindow::Cumulative {
            if let Some(slot) = vocab.bow_slot(y) {
                bow[slot] += 1;
            }
        }
        prev = y;
    }
    Ok(nlls)
}

/// exp(total NLL / total tokens) over a split.
///
/// Documents are scored in parallel on the current rayon pool; their sums
/// are combined in document order.
pub fn perplexity_with(model: &TopicRnn, split: &CorpusSplit, options: EvalOptions) -> Result<f64> {
    if split.is_empty() || split.num_tokens() == 0 {
        return Err(Error::Validation(format!("split {:?} has no tokens", split.name)));
    }
    let per_doc: Vec<f64> = split
        .documents
        .par_iter()
        .map(|d| document_nlls(model, d, options).map(|v| v.iter().sum::<f64>()))
        .collect::<Result<_>>()?;
    let total: f64 = per_doc.iter().sum();
    Ok((total / split.num_tokens() as f64).exp())
}

pub fn perplexity(model: &TopicRnn, split: &CorpusSplit, window: usize) -> Result<f64> {
    perplexity_with(model, split, EvalOptions::with_window(window))
}
