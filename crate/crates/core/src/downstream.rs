//! Document features from a trained model and a small binary classifier on
//! top of them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EncodedDocument;
use crate::engine::{clip_gradients, sigmoid, AdamConfig, AdamState, Graph, ParamStore, Tensor, Var};
use crate::model::TopicRnn;
use crate::{Error, Result};

pub const CLASSIFIER_HIDDEN: usize = 50;

/// Length of the vectors produced by [`extract_features_with`].
pub fn feature_dim(model: &TopicRnn, include_cell: bool) -> usize {
    let h = model.config.hidden();
    let c = if include_cell && model.config.cell.kind == crate::cells::CellKind::Lstm { h } else { 0 };
    model.config.topic_dim + h + c
}

/// `[μ(bow) ‖ h_T]`, with h_T the top layer's state after the last token.
pub fn extract_features(model: &TopicRnn, doc: &EncodedDocument) -> Result<Vec<f64>> {
    extract_features_with(model, doc, false)
}

/// As [`extract_features`]; for LSTMs `include_cell` also appends the top
/// layer's final memory cell.
pub fn extract_features_with(model: &TopicRnn, doc: &EncodedDocument, include_cell: bool) -> Result<Vec<f64>> {
    if doc.is_empty() {
        return Err(Error::Validation("cannot extract features from an empty document".into()));
    }
    let mut out = model.posterior(&doc.bow)?.mu;
    let mut state = model.init_state();
    state = model.step(model.vocab.eos_id(), &state)?;
    for &y in &doc.ids {
        state = model.step(y, &state)?;
    }
    let top = state.layers.last().expect("at least one layer");
    out.extend_from_slice(&top.h);
    if include_cell {
        if let Some(c) = &top.c {
            out.extend_from_slice(c);
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite document feature".into()));
    }
    Ok(out)
}

/// Features for every document, computed in parallel, in input order.
pub fn extract_all(model: &TopicRnn, docs: &[EncodedDocument], include_cell: bool) -> Result<Vec<Vec<f64>>> {
    docs.par_iter()
        .map(|d| extract_features_with(model, d, include_cell))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: CLASSIFIER_HIDDEN,
            epochs: 200,
            lr: 1e-2,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// One sigmoid hidden layer, sigmoid output.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub params: ParamStore,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Classifier {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::Config("classifier dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let s1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let s2 = (6.0 / (hidden + 1) as f64).sqrt();
        params.insert_uniform("clf.hidden.w", &[input_dim, hidden], s1, &mut rng)?;
        params.insert("clf.hidden.b", Tensor::zeros(&[hidden]))?;
        params.insert_uniform("clf.out.w", &[hidden], s2, &mut rng)?;
        params.insert("clf.out.b", Tensor::zeros(&[1]))?;
        Ok(Self { params, input_dim, hidden })
    }

    fn check_input(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.input_dim {
            return Err(Error::Validation(format!(
                "feature length {} does not match classifier input {}",
                f.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Output logit on the graph.
    pub fn logit_graph(&self, g: &mut Graph<'_>, f: &[f64]) -> Result<Var> {
        self.check_input(f)?;
        let x = g.vector(f.to_vec());
        let w = g.param_named("clf.hidden.w")?;
        let b = g.param_named("clf.hidden.b")?;
        let pre = g.matvec_t(w, x)?;
        let pre = g.add(pre, b)?;
        let hid = g.sigmoid(pre);
        let v = g.param_named("clf.out.w")?;
        let c = g.param_named("clf.out.b")?;
        let z = g.dot(v, hid)?;
        g.add(z, c)
    }

    /// Binary cross-entropy of one example, from the logit for stability.
    pub fn loss_graph(&self, g: &mut Graph<'_>, f: &[f64], label: bool) -> Result<Var> {
        let z = self.logit_graph(g, f)?;
        let z = if label { z } else { g.neg(z) };
        let ll = g.log_sigmoid(z);
        let ll = g.sum(ll);
        Ok(g.neg(ll))
    }

    pub fn probability(&self, f: &[f64]) -> Result<f64> {
        self.check_input(f)?;
        let w = self.params.get("clf.hidden.w")?;
        let b = self.params.get("clf.hidden.b")?;
        let v = self.params.get("clf.out.w")?;
        let c = self.params.get("clf.out.b")?.data()[0];
        let mut z = c;
        for j in 0..self.hidden {
            let mut a = b.data()[j];
            for (i, x) in f.iter().enumerate() {
                a += w.get2(i, j) * x;
            }
            z += v.data()[j] * sigmoid(a);
        }
        Ok(sigmoid(z))
    }
}

fn check_labels(features: &[Vec<f64>], labels: &[bool]) -> Result<()> {
    if features.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Adam on mean binary cross-entropy over shuffled minibatches.
pub fn train_classifier(features: &[Vec<f64>], labels: &[bool], config: ClassifierConfig) -> Result<Classifier> {
    check_labels(features, labels)?;
    let dim = features
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Validation("no training examples".into()))?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        log::warn!("all training labels are {}; the classifier can only learn a constant", labels[0]);
    }
    let mut clf = Classifier::new(dim, config.hidden, config.seed)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &clf.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..features.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let grads = {
                let mut g = Graph::new(&clf.params);
                let losses = batch
                    .iter()
                    .map(|&i| clf.loss_graph(&mut g, &features[i], labels[i]))
                    .collect::<Result<Vec<_>>>()?;
                let total = g.add_n(&losses)?;
                let mean = g.scale(total, 1.0 / batch.len() as f64);
                if !g.scalar_value(mean).is_finite() {
                    return Err(Error::Numeric("classifier loss is not finite".into()));
                }
                g.backward(mean)?
            };
            clf.params.accumulate(&grads)?;
            clip_gradients(&mut clf.params, 5.0);
            adam.step(&mut clf.params)?;
        }
    }
    Ok(clf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub probabilities: Vec<f64>,
    pub predictions: Vec<bool>,
    pub error_rate: f64,
}

/// Predicts `p ≥ 0.5` as positive and scores against `labels`.
pub fn classify(features: &[Vec<f64>], labels: &[bool], clf: &Classifier) -> Result<Classification> {
    check_labels(features, labels)?;
    if features.is_empty() {
        return Err(Error::Validation("no examples to classify".into()));
    }
    let probabilities = features
        .iter()
        .map(|f| clf.probability(f))
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<bool> = probabilities.iter().map(|&p| p >= 0.5).collect();
    let wrong = predictions.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(Classification {
        probabilities,
        predictions,
        error_rate: wrong as f64 / labels.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use crate::engine::finite_difference_check;
    use crate::model::test_support::*;
    use rand::Rng;

    #[test]
    fn zero_model_gives_zero_features() {
        let m = tiny_model(CellKind::Gru, 10, 3, 2, 4, 0, 0.0);
        let doc = EncodedDocument::from_ids(vec![2, 5, 7, 1], &m.vocab);
        assert_eq!(extract_features(&m, &doc).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn feature_layout_and_cell_flag() {
        let m = tiny_model(CellKind::Lstm, 10, 3, 2, 4, 1, 0.5);
        let doc = EncodedDocument::from_ids(vec![2, 5, 7], &m.vocab);
        let f = extract_features(&m, &doc).unwrap();
        assert_eq!(f.len(), feature_dim(&m, false));
        assert_eq!(&f[..2], m.posterior(&doc.bow).unwrap().mu.as_slice());
        let fc = extract_features_with(&m, &doc, true).unwrap();
        assert_eq!(fc.len(), 2 + 3 + 3);
        assert_eq!(&fc[..5], f.as_slice());
        assert_eq!(extract_features(&m, &doc).unwrap(), f);
    }

    #[test]
    fn empty_document_rejected() {
        let m = tiny_model(CellKind::Rnn, 10, 3, 2, 4, 1, 0.5);
        let doc = EncodedDocument::from_ids(vec![], &m.vocab);
        assert!(matches!(extract_features(&m, &doc), Err(Error::Validation(_))));
    }

    #[test]
    fn word_order_only_moves_hidden_half() {
        let m = tiny_model(CellKind::Rnn, 12, 4, 3, 5, 2, 0.5);
        let a = EncodedDocument::from_ids(vec![2, 3, 4, 5, 6, 7, 8], &m.vocab);
        let b = EncodedDocument::from_ids(vec![8, 6, 4, 2, 7, 5, 3], &m.vocab);
        let (fa, fb) = (extract_features(&m, &a).unwrap(), extract_features(&m, &b).unwrap());
        assert_eq!(fa[..3], fb[..3]);
        assert_ne!(fa[3..], fb[3..]);
    }

    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        while xs.len() < n {
            let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let margin: f64 = x[0] + 0.5 * x[1];
            if margin.abs() > 0.1 {
                ys.push(margin > 0.0);
                xs.push(x);
            }
        }
        (xs, ys)
    }

    #[test]
    fn separable_set_is_learned() {
        let (xs, ys) = separable(200, 3);
        let cfg = ClassifierConfig { epochs: 200, ..ClassifierConfig::default() };
        let clf = train_classifier(&xs, &ys, cfg).unwrap();
        assert_eq!(classify(&xs, &ys, &clf).unwrap().error_rate, 0.0);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let (xs, ys) = separable(20, 4);
        let cfg = ClassifierConfig { epochs: 3, lr: 0.0, seed: 9, ..ClassifierConfig::default() };
        let clf = train_classifier(&xs, &ys, cfg).unwrap();
        let fresh = Classifier::new(2, CLASSIFIER_HIDDEN, 9).unwrap();
        for id in fresh.params.ids() {
            assert_eq!(clf.params.value(id), fresh.params.value(id));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (xs, ys) = separable(40, 5);
        let cfg = ClassifierConfig { epochs: 5, seed: 2, ..ClassifierConfig::default() };
        let a = train_classifier(&xs, &ys, cfg).unwrap();
        let b = train_classifier(&xs, &ys, cfg).unwrap();
        for id in a.params.ids() {
            assert_eq!(a.params.value(id), b.params.value(id));
        }
    }

    #[test]
    fn random_labels_stay_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut draw = |n: usize| -> (Vec<Vec<f64>>, Vec<bool>) {
            (0..n)
                .map(|_| ((0..4).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_bool(0.5)))
                .unzip()
        };
        let (xtr, ytr) = draw(200);
        let (xte, yte) = draw(2000);
        let cfg = ClassifierConfig { epochs: 50, ..ClassifierConfig::default() };
        let clf = train_classifier(&xtr, &ytr, cfg).unwrap();
        let acc = 1.0 - classify(&xte, &yte, &clf).unwrap().error_rate;
        assert!((acc - 0.5).abs() <= 0.05, "accuracy {acc}");
    }

    #[test]
    fn zero_classifier_is_constant() {
        let mut clf = Classifier::new(3, 4, 0).unwrap();
        for id in clf.params.ids().collect::<Vec<_>>() {
            clf.params.value_mut(id).fill(0.0);
        }
        let xs = vec![vec![1.0, 2.0, 3.0], vec![-4.0, 0.0, 9.0], vec![0.0; 3]];
        let out = classify(&xs, &[true, false, false], &clf).unwrap();
        assert!(out.probabilities.iter().all(|&p| p == 0.5));
        // p = 0.5 predicts positive everywhere.
        assert!((out.error_rate - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn classifier_gradient_matches_finite_differences() {
        let clf = Classifier::new(4, 6, 8).unwrap();
        let xs = [vec![0.3, -1.2, 0.5, 2.0], vec![-0.7, 0.1, 0.9, -0.4], vec![1.5, 0.2, -0.3, 0.0]];
        let ys = [true, false, true];
        let report = finite_difference_check(&clf.params, 1e-5, 1e-4, |g| {
            let losses = xs
                .iter()
                .zip(ys)
                .map(|(x, y)| clf.loss_graph(g, x, y))
                .collect::<Result<Vec<_>>>()?;
            g.add_n(&losses)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let clf = Classifier::new(2, 3, 0).unwrap();
        assert!(classify(&[vec![0.0, 0.0]], &[], &clf).is_err());
        assert!(classify(&[vec![0.0]], &[true], &clf).is_err());
        assert!(train_classifier(&[], &[], ClassifierConfig::default()).is_err());
    }
}
