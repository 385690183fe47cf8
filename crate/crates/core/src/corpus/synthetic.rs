//! Seeded two-topic corpora with known ground truth, used as a test oracle.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::format_labels;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub label: String,
    pub words: Vec<(String, f64)>,
}

impl TopicSpec {
    pub fn uniform(label: &str, words: &[&str]) -> Self {
        let p = 1.0 / words.len() as f64;
        Self {
            label: label.to_string(),
            words: words.iter().map(|w| (w.to_string(), p)).collect(),
        }
    }

    /// `purity` of the mass spread uniformly over `own`, the rest uniformly
    /// over `other`. A single word is then only weak evidence of the topic.
    pub fn mixed(label: &str, own: &[&str], other: &[&str], purity: f64) -> Self {
        let p_own = purity / own.len() as f64;
        let p_other = (1.0 - purity) / other.len() as f64;
        Self {
            label: label.to_string(),
            words: own
                .iter()
                .map(|w| (w.to_string(), p_own))
                .chain(other.iter().map(|w| (w.to_string(), p_other)))
                .collect(),
        }
    }

    pub fn support(&self) -> impl Iterator<Item = &str> {
        self.words
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(w, _)| w.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_docs: usize,
    pub doc_len: usize,
    pub topics: Vec<TopicSpec>,
    pub stop_words: Vec<String>,
    /// Probability that any given token is a stop word.
    pub stop_rate: f64,
}

pub const TOPIC_A_WORDS: [&str; 12] = [
    "cat", "dog", "horse", "mouse", "bird", "fish", "cow", "sheep", "goat", "pig", "lion", "tiger",
];
pub const TOPIC_B_WORDS: [&str; 12] = [
    "bond", "rate", "stock", "market", "bank", "loan", "price", "yield", "fund", "cash", "trade",
    "debt",
];
pub const STOP_WORDS: [&str; 10] = ["the", "a", "of", "and", "to", "in", "is", "it", "that", "on"];

impl SyntheticConfig {
    /// Animals (label `A`) versus finance (label `B`), uniform within each
    /// topic. 85% of tokens are stop words, so topic words sit several
    /// tokens apart and remembering the topic is a long-range problem.
    pub fn two_topic(seed: u64, n_docs: usize, doc_len: usize) -> Self {
        Self {
            seed,
            n_docs,
            doc_len,
            topics: vec![
                TopicSpec::uniform("A", &TOPIC_A_WORDS),
                TopicSpec::uniform("B", &TOPIC_B_WORDS),
            ],
            stop_words: STOP_WORDS.iter().map(|s| s.to_string()).collect(),
            stop_rate: 0.85,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.topics.is_empty() {
            return Err(Error::Validation("at least one topic is required".into()));
        }
        for t in &self.topics {
            if t.words.iter().any(|(_, p)| *p < 0.0 || !p.is_finite()) {
                return Err(Error::Validation(format!("topic {} has a negative probability", t.label)));
            }
            let total: f64 = t.words.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "topic {} probabilities sum to {total}, not 1",
                    t.label
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.stop_rate) {
            return Err(Error::Validation(format!("stop rate {} outside [0, 1]", self.stop_rate)));
        }
        if self.stop_rate > 0.0 && self.stop_words.is_empty() {
            return Err(Error::Validation("stop rate is positive but no stop words given".into()));
        }
        if self.doc_len == 0 {
            return Err(Error::Validation("documents need at least one token".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    /// One document per line.
    pub text: String,
    pub labels: Vec<String>,
}

impl SyntheticCorpus {
    pub fn label_file(&self) -> String {
        format_labels(&self.labels)
    }

    pub fn stopword_file(config: &SyntheticConfig) -> String {
        config.stop_words.iter().map(|w| format!("{w}\n")).collect()
    }
}

/// Each document picks one topic uniformly, then every token is a uniform
/// stop word with probability `stop_rate` and a topic word otherwise.
pub fn generate_synthetic_corpus(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samplers = config
        .topics
        .iter()
        .map(|t| {
            WeightedIndex::new(t.words.iter().map(|(_, p)| *p))
                .map_err(|e| Error::Validation(format!("topic {}: {e}", t.label)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut text = String::new();
    let mut labels = Vec::with_capacity(config.n_docs);
    for _ in 0..config.n_docs {
        let k = rng.random_range(0..config.topics.len());
        let topic = &config.topics[k];
        let mut words = Vec::with_capacity(config.doc_len);
        for _ in 0..config.doc_len {
            if rng.random_bool(config.stop_rate) {
                let s = rng.random_range(0..config.stop_words.len());
                words.push(config.stop_words[s].as_str());
            } else {
                words.push(topic.words[samplers[k].sample(&mut rng)].0.as_str());
            }
        }
        text.push_str(&words.join(" "));
        text.push('\n');
        labels.push(topic.label.clone());
    }
    Ok(SyntheticCorpus { text, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let c = SyntheticConfig::two_topic(1, 20, 30);
        let a = generate_synthetic_corpus(&c).unwrap();
        let b = generate_synthetic_corpus(&c).unwrap();
        assert_eq!(a.text.as_bytes(), b.text.as_bytes());
        assert_eq!(a.label_file(), b.label_file());
        let other = generate_synthetic_corpus(&SyntheticConfig::two_topic(2, 20, 30)).unwrap();
        assert_ne!(a.text, other.text);
    }

    #[test]
    fn topic_words_stay_in_support() {
        let mut c = SyntheticConfig::two_topic(5, 100, 40);
        c.topics = vec![
            TopicSpec::uniform("A", &["cat", "dog"]),
            TopicSpec::uniform("B", &["bond", "rate"]),
        ];
        let corpus = generate_synthetic_corpus(&c).unwrap();
        for (line, label) in corpus.text.lines().zip(&corpus.labels) {
            let allowed: &[&str] = if label == "A" { &["cat", "dog"] } else { &["bond", "rate"] };
            for w in line.split_whitespace() {
                assert!(
                    STOP_WORDS.contains(&w) || allowed.contains(&w),
                    "{w} in a {label} document"
                );
            }
        }
    }

    #[test]
    fn stop_fraction_concentrates() {
        let c = SyntheticConfig::two_topic(11, 1000, 50);
        let corpus = generate_synthetic_corpus(&c).unwrap();
        let (mut stops, mut total) = (0usize, 0usize);
        for w in corpus.text.split_whitespace() {
            total += 1;
            if STOP_WORDS.contains(&w) {
                stops += 1;
            }
        }
        assert_eq!(total, 50_000);
        let frac = stops as f64 / total as f64;
        assert!((frac - 0.85).abs() < 0.03, "stop fraction {frac}");
    }

    #[test]
    fn invalid_distributions_rejected() {
        let mut c = SyntheticConfig::two_topic(1, 5, 5);
        c.topics[0].words[0].1 = -0.1;
        assert!(matches!(generate_synthetic_corpus(&c), Err(Error::Validation(_))));
        let mut c = SyntheticConfig::two_topic(1, 5, 5);
        c.topics[1].words[0].1 += 1e-6;
        assert!(matches!(generate_synthetic_corpus(&c), Err(Error::Validation(_))));
    }

    #[test]
    fn label_file_format() {
        let corpus = generate_synthetic_corpus(&SyntheticConfig::two_topic(3, 3, 4)).unwrap();
        let file = corpus.label_file();
        let lines: Vec<&str> = file.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("2\t"));
    }
}
