use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TopicRnn;
use crate::corpus::{EncodedDocument, TokenId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub length: usize,
    /// Divides the word logits of both mixture branches. Zero selects the
    /// most probable token at every step.
    pub temperature: f64,
    /// Tokens between refreshes of θ̂.
    pub window: usize,
    pub rng_seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            length: 50,
            temperature: 1.0,
            window: 10,
            rng_seed: 0,
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Samples `length` tokens after a fresh `<eos>`, with θ̂ seeded from the
/// bag of words of `seed_doc` and updated with every generated non-stop
/// token at each window boundary.
pub fn generate(model: &TopicRnn, seed_doc: &EncodedDocument, options: GenerateOptions) -> Result<Vec<TokenId>> {
    if options.length == 0 {
        return Err(Error::Config("generation length must be at least 1".into()));
    }
    if !(options.temperature >= 0.0) || !options.temperature.is_finite() {
        return Err(Error::Config(format!("invalid temperature {}", options.temperature)));
    }
    if options.window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    let vocab = &model.vocab;
    if seed_doc.bow.len() != vocab.bow_len() {
        return Err(Error::Config("seed document was encoded with a different vocabulary".into()));
    }
    let greedy = options.temperature == 0.0;
    let temperature = if greedy { 1.0 } else { options.temperature };
    let mut rng = ChaCha8Rng::seed_from_u64(options.rng_seed);

    let mut bow = seed_doc.bow.clone();
    let mut topic_bias = model.topic_bias(&model.posterior(&bow)?.mu)?;
    let mut state = model.init_state();
    let mut prev = vocab.eos_id();
    let mut out = Vec::with_capacity(options.length);
    for i in 0..options.length {
        if i > 0 && i % options.window == 0 {
            topic_bias = model.topic_bias(&model.posterior(&bow)?.mu)?;
        }
        state = model.step(prev, &state)?;
        let p = model.predictive_with_bias(state.top(), Some(&topic_bias), temperature)?;
        let y = if greedy {
            argmax(&p)
        } else {
            WeightedIndex::new(&p)
                .map_err(|e| Error::Numeric(format!("bad predictive distribution: {e}")))?
                .sample(&mut rng)
        };
        if let Some(slot) = vocab.bow_slot(y) {
            bow[slot] += 1;
        }
        out.push(y);
        prev = y;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;
    use crate::cells::CellKind;

    fn seed(model: &TopicRnn) -> EncodedDocument {
        EncodedDocument::from_ids(vec![5, 6, 2, 7, 1], &model.vocab)
    }

    #[test]
    fn fixed_seed_reproducible() {
        let m = tiny_model(CellKind::Gru, 12, 4, 2, 3, 1, 0.8);
        let opts = GenerateOptions { length: 40, rng_seed: 7, ..Default::default() };
        let a = generate(&m, &seed(&m), opts).unwrap();
        let b = generate(&m, &seed(&m), opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        let c = generate(&m, &seed(&m), GenerateOptions { rng_seed: 8, ..opts }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn greedy_ignores_rng_seed() {
        let m = tiny_model(CellKind::Lstm, 12, 4, 2, 3, 1, 0.8);
        let opts = GenerateOptions { length: 25, temperature: 0.0, ..Default::default() };
        let a = generate(&m, &seed(&m), opts).unwrap();
        let b = generate(&m, &seed(&m), GenerateOptions { rng_seed: 99, ..opts }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_options() {
        let m = tiny_model(CellKind::Rnn, 8, 2, 1, 2, 0, 0.1);
        let s = seed(&m);
        assert!(generate(&m, &s, GenerateOptions { length: 0, ..Default::default() }).is_err());
        assert!(generate(&m, &s, GenerateOptions { temperature: -1.0, ..Default::default() }).is_err());
        assert!(generate(&m, &s, GenerateOptions { temperature: f64::NAN, ..Default::default() }).is_err());
    }
}
