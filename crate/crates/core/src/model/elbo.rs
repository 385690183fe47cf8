use serde::{Deserialize, Serialize};

use super::TopicRnn;
use crate::cells::{cell_step_graph, init_state};
use crate::corpus::EncodedDocument;
use crate::engine::{Graph, Tensor, Var};
use crate::inference::{self, GaussianPosterior, PosteriorVars};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    /// Σ_t log p(y_t | h_t, l_t, θ)
    pub word_loglik: f64,
    /// Σ_t log p(l_t | h_t)
    pub stop_loglik: f64,
    pub kl: f64,
    pub elbo: f64,
}

impl ElboBreakdown {
    pub fn from_parts(word_loglik: f64, stop_loglik: f64, kl: f64) -> Self {
        Self {
            word_loglik,
            stop_loglik,
            kl,
            elbo: word_loglik + stop_loglik - kl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElboOptions {
    /// Gradients are cut at multiples of this many tokens; the hidden
    /// state still flows forward.
    pub bptt_len: Option<usize>,
    /// `false` drops the topic bias and the KL term (plain RNN baseline).
    pub use_topics: bool,
}

impl Default for ElboOptions {
    fn default() -> Self {
        Self {
            bptt_len: None,
            use_topics: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ElboVars {
    pub word_loglik: Var,
    pub stop_loglik: Var,
    pub kl: Option<Var>,
    pub elbo: Var,
    pub posterior: Option<PosteriorVars>,
}

impl ElboVars {
    pub fn breakdown(&self, g: &Graph<'_>) -> ElboBreakdown {
        ElboBreakdown::from_parts(
            g.scalar_value(self.word_loglik),
            g.scalar_value(self.stop_loglik),
            self.kl.map_or(0.0, |k| g.scalar_value(k)),
        )
    }
}

fn check_doc(model: &TopicRnn, doc: &EncodedDocument) -> Result<()> {
    if doc.is_empty() {
        return Err(Error::Validation("document is empty".into()));
    }
    if doc.stop.len() != doc.ids.len() {
        return Err(Error::Validation("stop indicators do not match token count".into()));
    }
    if let Some(&bad) = doc.ids.iter().find(|&&i| i >= model.config.vocab_size) {
        return Err(Error::Validation(format!("token id {bad} out of range")));
    }
    Ok(())
}

/// Word and stop-indicator log-likelihoods of `doc`, reading the inputs as
/// `x_t = y_{t-1}` with `<eos>` as the initial input.
fn forward_doc(
    g: &mut Graph<'_>,
    model: &TopicRnn,
    doc: &EncodedDocument,
    topic_bias: Option<Var>,
    bptt_len: Option<usize>,
) -> Result<(Var, Var)> {
    let cfg = &model.config.cell;
    let emb = g.param_named("embedding")?;
    let output = g.param_named("output")?;
    let gamma = g.param_named("stop")?;
    let mut state = init_state(cfg).to_vars(g);
    let mut prev = model.vocab.eos_id();
    let mut word_terms = Vec::with_capacity(doc.len());
    let mut stop_terms = Vec::with_capacity(doc.len());
    for (t, (&y, &is_stop)) in doc.ids.iter().zip(&doc.stop).enumerate() {
        if let Some(n) = bptt_len {
            if t > 0 && t % n == 0 {
                state = state.detach(g);
            }
        }
        let x = g.row(emb, prev)?;
        state = cell_step_graph(g, cfg, x, &state)?;
        let h = state.top();
        let rnn = g.matvec_t(output, h)?;
        let logits = match topic_bias {
            Some(tb) if !is_stop => g.add(rnn, tb)?,
            _ => rnn,
        };
        let log_probs = g.log_softmax(logits);
        word_terms.push(g.pick(log_probs, y)?);
        let s = g.dot(gamma, h)?;
        let s = if is_stop { s } else { g.neg(s) };
        stop_terms.push(g.log_sigmoid(s));
        prev = y;
    }
    Ok((g.add_n(&word_terms)?, g.add_n(&stop_terms)?))
}

/// Records the single-sample ELBO of `doc` with θ = μ + σ ⊙ `noise`.
pub fn elbo_graph(
    g: &mut Graph<'_>,
    model: &TopicRnn,
    doc: &EncodedDocument,
    noise: &[f64],
    options: ElboOptions,
) -> Result<ElboVars> {
    check_doc(model, doc)?;
    if options.bptt_len == Some(0) {
        return Err(Error::Config("bptt length must be at least 1".into()));
    }
    let (topic_bias, kl, posterior) = if options.use_topics {
        if noise.len() != model.config.topic_dim {
            return Err(Error::Config(format!(
                "noise has length {}, topic dimension is {}",
                noise.len(),
                model.config.topic_dim
            )));
        }
        let post = inference::encode_graph(g, &model.config.inference, &doc.bow)?;
        let theta = inference::sample_theta_graph(g, post, noise)?;
        let b = g.param_named("topic_words")?;
        let tb = g.matvec_t(b, theta)?;
        (Some(tb), Some(inference::kl_graph(g, post)?), Some(post))
    } else {
        (None, None, None)
    };
    let (word, stop) = forward_doc(g, model, doc, topic_bias, options.bptt_len)?;
    let ll = g.add(word, stop)?;
    let elbo = match kl {
        Some(kl) => g.sub(ll, kl)?,
        None => ll,
    };
    Ok(ElboVars {
        word_loglik: word,
        stop_loglik: stop,
        kl,
        elbo,
        posterior,
    })
}

/// `(Σ log p(y_t | ·, θ), Σ log p(l_t | ·))` for a fixed θ; `None` means no
/// topic bias at all.
pub fn doc_log_likelihood(
    model: &TopicRnn,
    doc: &EncodedDocument,
    theta: Option<&[f64]>,
) -> Result<(f64, f64)> {
    check_doc(model, doc)?;
    let mut g = Graph::new(&model.params);
    let tb = match theta {
        Some(th) => Some(g.constant(Tensor::vector(model.topic_bias(th)?))),
        None => None,
    };
    let (w, s) = forward_doc(&mut g, model, doc, tb, None)?;
    Ok((g.scalar_value(w), g.scalar_value(s)))
}

/// ELBO estimate for a θ already sampled from `post`.
pub fn sequence_elbo(
    model: &TopicRnn,
    doc: &EncodedDocument,
    theta: &[f64],
    post: &GaussianPosterior,
) -> Result<ElboBreakdown> {
    let (w, s) = doc_log_likelihood(model, doc, Some(theta))?;
    Ok(ElboBreakdown::from_parts(w, s, inference::kl_to_prior(post)))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;
    use crate::cells::CellKind;
    use crate::engine::finite_difference_check;

    fn doc(model: &TopicRnn, ids: &[usize]) -> EncodedDocument {
        EncodedDocument::from_ids(ids.to_vec(), &model.vocab)
    }

    #[test]
    fn zero_model_single_token() {
        let m = tiny_model(CellKind::Rnn, 4, 3, 2, 2, 0, 0.0);
        let d = doc(&m, &[3]);
        let e = sequence_elbo(&m, &d, &[0.4, -0.2], &GaussianPosterior::standard(2)).unwrap();
        assert!((e.word_loglik - 0.25f64.ln()).abs() < 1e-12);
        assert!((e.stop_loglik - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(e.kl, 0.0);
    }

    #[test]
    fn empty_doc_rejected() {
        let m = tiny_model(CellKind::Rnn, 4, 3, 2, 2, 0, 0.0);
        let d = doc(&m, &[]);
        assert!(matches!(
            sequence_elbo(&m, &d, &[0.0, 0.0], &GaussianPosterior::standard(2)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn graph_breakdown_is_additive_and_matches_value_path() {
        let m = tiny_model(CellKind::Gru, 12, 4, 3, 5, 2, 0.5);
        let d = doc(&m, &[5, 2, 1, 7, 7, 11, 3, 1]);
        let noise = [0.3, -0.8, 1.1];
        let mut g = Graph::new(&m.params);
        let vars = elbo_graph(&mut g, &m, &d, &noise, ElboOptions::default()).unwrap();
        let e = vars.breakdown(&g);
        assert!((e.elbo - (e.word_loglik + e.stop_loglik - e.kl)).abs() < 1e-9);
        assert!((g.scalar_value(vars.elbo) - e.elbo).abs() < 1e-9);
        assert!(e.kl >= 0.0);

        let post = vars.posterior.unwrap().values(&g);
        let theta = inference::sample_theta(&post, &noise);
        let v = sequence_elbo(&m, &d, &theta, &post).unwrap();
        assert!((v.elbo - e.elbo).abs() < 1e-9);
    }

    #[test]
    fn truncation_changes_gradients_not_values() {
        let m = tiny_model(CellKind::Rnn, 10, 3, 2, 3, 4, 0.6);
        let d = doc(&m, &[4, 5, 6, 7, 8, 9, 4, 5]);
        let noise = [0.1, 0.2];
        let run = |bptt| {
            let mut g = Graph::new(&m.params);
            let v = elbo_graph(&mut g, &m, &d, &noise, ElboOptions { bptt_len: bptt, use_topics: true }).unwrap();
            let grads = g.backward(v.elbo).unwrap();
            let emb = m.params.id("cell.0.w_hh").unwrap();
            (g.scalar_value(v.elbo), grads.get(emb).unwrap().to_vec())
        };
        let (full_v, full_g) = run(None);
        let (cut_v, cut_g) = run(Some(3));
        assert_eq!(full_v, cut_v);
        assert_ne!(full_g, cut_g);
    }

    #[test]
    fn baseline_has_no_kl_and_ignores_topics() {
        let m = tiny_model(CellKind::Rnn, 8, 3, 2, 3, 4, 0.6);
        let d = doc(&m, &[4, 5, 6, 2]);
        let mut g = Graph::new(&m.params);
        let v = elbo_graph(&mut g, &m, &d, &[], ElboOptions { bptt_len: None, use_topics: false }).unwrap();
        assert!(v.kl.is_none());
        let (w, s) = doc_log_likelihood(&m, &d, None).unwrap();
        assert!((g.scalar_value(v.elbo) - (w + s)).abs() < 1e-12);
    }

    #[test]
    fn full_model_gradient_check() {
        for kind in [CellKind::Rnn, CellKind::Gru, CellKind::Lstm] {
            let m = tiny_model(kind, 12, 4, 3, 5, 11, 0.5);
            let d = doc(&m, &[5, 2, 9, 1, 11, 3]);
            let noise = [0.7, -0.4, 1.3];
            let t = d.len() as f64;
            let report = finite_difference_check(&m.params, 1e-5, 1e-4, |g| {
                let v = elbo_graph(g, &m, &d, &noise, ElboOptions::default())?;
                Ok(g.scale(v.elbo, -1.0 / t))
            })
            .unwrap();
            assert!(report.passed(), "{kind}: {report:?}");
            assert_eq!(report.checked, m.params.num_scalars());
        }
    }
}
