//! Trains the topic model and the no-topic baseline on a synthetic
//! two-topic corpus and prints both test perplexities.
//!
//! cargo run --release -p topicrnn --example synthetic_gap -- [seed] [epochs] [doc_len] [lr] [cell]
//!
//! Environment knobs for exploring where the gap appears:
//! - `STOP=0.6` overrides the stop-word rate,
//! - `PURITY=0.9` lets each topic leak words of the other,
//! - `RAW_BOW=1` feeds raw counts instead of term frequencies to the encoder,
//! - `WINDOW=5` changes the θ̂ refresh interval,
//! - `DIAG=1` also prints the mean test NLL in each sixth of the documents.

use std::collections::BTreeSet;
use std::time::Instant;

use topicrnn::corpus::{
    build_vocabulary, encode_documents, generate_synthetic_corpus, SyntheticConfig, TopicSpec, TOPIC_A_WORDS,
    TOPIC_B_WORDS,
};
use topicrnn::model::{document_nlls, perplexity_with, top_topic_words, train, TrainConfig};

fn env<T: std::str::FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let seed: u64 = arg(1, "1").parse()?;
    let epochs: usize = arg(2, "10").parse()?;
    let doc_len: usize = arg(3, "200").parse()?;
    let lr: f64 = arg(4, "3e-3").parse()?;
    let cell = arg(5, "rnn").parse()?;

    let mut gen = SyntheticConfig::two_topic(seed, 300, doc_len);
    if let Some(q) = env("PURITY") {
        gen.topics = vec![
            TopicSpec::mixed("A", &TOPIC_A_WORDS, &TOPIC_B_WORDS, q),
            TopicSpec::mixed("B", &TOPIC_B_WORDS, &TOPIC_A_WORDS, q),
        ];
    }
    if let Some(r) = env("STOP") {
        gen.stop_rate = r;
    }
    let corpus = generate_synthetic_corpus(&gen)?;
    let lines: Vec<&str> = corpus.text.lines().collect();
    let stop: BTreeSet<String> = gen.stop_words.iter().cloned().collect();
    let vocab = build_vocabulary(lines[..200].iter().flat_map(|l| l.split_whitespace()), 1000, &stop)?;
    let split = |a: usize, b: usize, name: &str| encode_documents(&lines[a..b].join("\n"), &vocab, 1, name);
    let (tr, va, te) = (split(0, 200, "train")?, split(200, 250, "valid")?, split(250, 300, "test")?);

    let base = TrainConfig {
        cell,
        hidden: 16,
        topics: 2,
        infer_hidden: 32,
        infer_layers: 1,
        epochs,
        lr,
        seed,
        normalize_bow: std::env::var("RAW_BOW").is_err(),
        window: env("WINDOW").unwrap_or(10),
        ..TrainConfig::default()
    };
    for use_topics in [true, false] {
        let cfg = TrainConfig { use_topics, ..base.clone() };
        let start = Instant::now();
        let out = train(&vocab, &tr, &va, &cfg, |m| {
            eprintln!(
                "  epoch {} elbo/tok {:.3} valid {:.3} kl/tok {:.3}",
                m.epoch, m.train_elbo_per_token, m.valid_perplexity, m.kl_per_token
            )
        })?;
        let ppl = perplexity_with(&out.model, &te, cfg.eval_options())?;
        if std::env::var("DIAG").is_ok() {
            let mut by = [(0.0, 0usize); 6];
            for d in &te.documents {
                let nll = document_nlls(&out.model, d, cfg.eval_options())?;
                for (t, x) in nll.iter().enumerate() {
                    let b = (t * 6 / nll.len()).min(5);
                    by[b].0 += x;
                    by[b].1 += 1;
                }
            }
            let means: Vec<String> = by.iter().map(|(s, n)| format!("{:.2}", s / *n as f64)).collect();
            eprintln!("  nll by sixth {means:?}");
        }
        println!("topics={use_topics} test ppl {ppl:.3} ({:.1}s)", start.elapsed().as_secs_f64());
        if use_topics {
            for t in top_topic_words(&out.model, 5)? {
                println!("  {}", t.join(" "));
            }
        }
    }
    Ok(())
}
