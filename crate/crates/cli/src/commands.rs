use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use topicrnn::cells::CellKind;
use topicrnn::corpus::{
    build_vocabulary, encode_documents, load_stopwords, parse_labels, read_text, tokens, CorpusSplit, EncodedDocument,
    Vocabulary,
};
use topicrnn::downstream::{classify, extract_all, train_classifier, ClassifierConfig, CLASSIFIER_HIDDEN};
use topicrnn::model::{
    generate, perplexity_with, top_topic_words, train, EvalOptions, GenerateOptions, ThetaWindow, TopicRnn,
    TrainConfig, INIT_SCALE,
};

use crate::checkpoint;
use crate::report::RunReport;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "topicrnn", version, about = "RNN language models with a document-level topic bias")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its best-validation checkpoint.
    Train(TrainArgs),
    /// Per-word perplexity of a corpus.
    Eval(EvalArgs),
    /// Sample text, optionally conditioned on a seed document.
    Generate(GenerateArgs),
    /// Top words of every topic row.
    Topics(TopicsArgs),
    /// Write document features as CSV.
    Features(FeaturesArgs),
    /// Train a classifier on document features and report its test error.
    Classify(ClassifyArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub stopwords: PathBuf,
    #[arg(long, default_value = "rnn")]
    pub cell: CellKind,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 50)]
    pub topics: usize,
    #[arg(long, default_value_t = 200)]
    pub infer_hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub infer_layers: usize,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub bptt: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sentences (lines) per document.
    #[arg(long, default_value_t = 10)]
    pub block_size: usize,
    /// Tokens between θ̂ refreshes during validation.
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value_t = 10_000)]
    pub max_vocab: usize,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Feed term frequencies instead of raw counts to the inference network.
    #[arg(long)]
    pub normalize_bow: bool,
    /// Train the plain RNN baseline (topic matrix frozen at zero).
    #[arg(long)]
    pub no_topics: bool,
    #[arg(long, default_value_t = INIT_SCALE)]
    pub init_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the checkpoint path with a `.json` extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Append one JSON line of metrics per epoch.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    /// Re-encode only the previous window instead of the whole prefix.
    #[arg(long)]
    pub trailing: bool,
    /// Score with the topic bias removed.
    #[arg(long)]
    pub ablate_topics: bool,
    #[arg(long, default_value_t = 10)]
    pub block_size: usize,
    /// Must agree with the stop flags stored in the checkpoint.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Text whose bag of words seeds the topic estimate.
    #[arg(long)]
    pub seed_doc: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub length: usize,
    /// 0 picks the most likely word at every step.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
}

#[derive(Debug, Args)]
pub struct TopicsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(short, long, default_value_t = 10)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub block_size: usize,
    /// Append the final LSTM memory cell to each row.
    #[arg(long)]
    pub include_cell: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub train_labels: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub test_labels: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub block_size: usize,
    #[arg(long, default_value_t = CLASSIFIER_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub include_cell: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Sizes the global rayon pool from `TOPICRNN_THREADS`, if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("TOPICRNN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("TOPICRNN_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Generate(a) => cmd_generate(&a, out),
        Command::Topics(a) => cmd_topics(&a, out),
        Command::Features(a) => cmd_features(&a, out),
        Command::Classify(a) => cmd_classify(&a, out),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(io_err(Path::new("<stdout>")))
}

fn encode_file(path: &Path, vocab: &Vocabulary, block_size: usize, name: &str) -> Result<CorpusSplit, CliError> {
    let raw = read_text(path)?;
    Ok(encode_documents(&raw, vocab, block_size, name)?)
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let start = Instant::now();
    let stop = load_stopwords(&a.stopwords)?;
    let train_raw = read_text(&a.corpus)?;
    let vocab = build_vocabulary(tokens(&train_raw), a.max_vocab, &stop)?;
    let train_split = encode_documents(&train_raw, &vocab, a.block_size, "train")?;
    let valid = encode_file(&a.valid, &vocab, a.block_size, "valid")?;
    let test = a
        .test
        .as_ref()
        .map(|p| encode_file(p, &vocab, a.block_size, "test"))
        .transpose()?;

    let cfg = TrainConfig {
        cell: a.cell,
        hidden: a.hidden,
        layers: a.layers,
        topics: a.topics,
        infer_hidden: a.infer_hidden,
        infer_layers: a.infer_layers,
        bptt_len: a.bptt,
        epochs: a.epochs,
        lr: a.lr,
        clip: a.clip,
        seed: a.seed,
        patience: a.patience,
        window: a.window,
        use_topics: !a.no_topics,
        normalize_bow: a.normalize_bow,
        init_scale: a.init_scale,
    };
    let breakdown = cfg.model_config(&vocab).param_breakdown();
    say(
        out,
        format_args!(
            "vocabulary {} words; {} train / {} valid documents",
            vocab.len(),
            train_split.documents.len(),
            valid.documents.len()
        ),
    )?;
    say(
        out,
        format_args!(
            "parameters: embedding {} + cell {} + output {} + stop {} + topics {} + inference {} = {}",
            breakdown.embedding,
            breakdown.cell,
            breakdown.output,
            breakdown.stop,
            breakdown.topic_words,
            breakdown.inference,
            breakdown.total
        ),
    )?;

    let mut metrics = match &a.metrics {
        Some(p) => Some((BufWriter::new(File::create(p).map_err(io_err(p))?), p)),
        None => None,
    };
    let mut sink_err: Option<CliError> = None;
    let outcome = train(&vocab, &train_split, &valid, &cfg, |m| {
        let _ = writeln!(
            out,
            "epoch {}: elbo/token {:.4} kl/token {:.4} valid perplexity {:.2} ({:.1}s)",
            m.epoch, m.train_elbo_per_token, m.kl_per_token, m.valid_perplexity, m.seconds
        );
        if let Some((w, p)) = metrics.as_mut() {
            let line = serde_json::to_string(m).map_err(CliError::from);
            if let Err(e) = line.and_then(|l| writeln!(w, "{l}").map_err(io_err(p))) {
                sink_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    if let Some((mut w, p)) = metrics {
        w.flush().map_err(io_err(p))?;
    }

    checkpoint::save(&outcome.model, &a.out)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    say(out, format_args!("best epoch {} valid perplexity {:.2}", best.epoch, best.valid_perplexity))?;
    let mut report = RunReport::new("train", json!({ "train": cfg, "block_size": a.block_size, "max_vocab": a.max_vocab }));
    report.seed = Some(a.seed);
    report.parameters = Some(breakdown);
    report.best_epoch = Some(outcome.best_epoch);
    report.valid_perplexity = Some(best.valid_perplexity);
    report.window = Some(a.window);
    if let Some(test) = &test {
        let ppl = perplexity_with(&outcome.model, test, cfg.eval_options())?;
        say(out, format_args!("test perplexity {ppl:.2}"))?;
        report.test_perplexity = Some(ppl);
    }
    report.epochs = outcome.history;
    report.seconds = start.elapsed().as_secs_f64();
    report.write(&a.report.clone().unwrap_or_else(|| a.out.with_extension("json")))
}

/// Encoding a corpus needs the same stop flags the model was trained with.
fn check_stopwords(vocab: &Vocabulary, stop: &BTreeSet<String>) -> Result<(), CliError> {
    let differing: Vec<&str> = vocab
        .tokens()
        .iter()
        .zip(vocab.stop_flags())
        .filter(|(t, &f)| stop.contains(t.as_str()) != f)
        .map(|(t, _)| t.as_str())
        .take(5)
        .collect();
    if differing.is_empty() {
        Ok(())
    } else {
        Err(CliError::VocabMismatch(format!(
            "stop list disagrees with the checkpoint on {}",
            differing.join(", ")
        )))
    }
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let start = Instant::now();
    let model = checkpoint::load(&a.model)?;
    if let Some(p) = &a.stopwords {
        check_stopwords(&model.vocab, &load_stopwords(p)?)?;
    }
    let split = encode_file(&a.corpus, &model.vocab, a.block_size, "eval")?;
    let options = EvalOptions {
        window: a.window,
        mode: if a.trailing { ThetaWindow::Trailing } else { ThetaWindow::Cumulative },
        use_topics: !a.ablate_topics,
    };
    let ppl = perplexity_with(&model, &split, options)?;
    say(out, format_args!("perplexity {ppl:.1}"))?;
    if let Some(p) = &a.report {
        let mut report = RunReport::new(
            "eval",
            json!({
                "model": a.model,
                "corpus": a.corpus,
                "eval": options,
                "block_size": a.block_size,
                "vocab_hash": checkpoint::vocab_hash(&model.vocab),
            }),
        );
        report.test_perplexity = Some(ppl);
        report.window = Some(a.window);
        report.parameters = Some(model.config.param_breakdown());
        report.seconds = start.elapsed().as_secs_f64();
        report.write(p)?;
    }
    Ok(())
}

pub fn cmd_generate(a: &GenerateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = checkpoint::load(&a.model)?;
    let seed = match &a.seed_doc {
        Some(p) => {
            let raw = read_text(p)?;
            let ids = tokens(&raw).map(|t| model.vocab.id_or_unk(t)).collect();
            EncodedDocument::from_ids(ids, &model.vocab)
        }
        None => EncodedDocument::from_ids(Vec::new(), &model.vocab),
    };
    let options = GenerateOptions {
        length: a.length,
        temperature: a.temperature,
        window: a.window,
        rng_seed: a.rng_seed,
    };
    let ids = generate(&model, &seed, options)?;
    say(out, format_args!("{}", render(&model, &ids)))
}

/// Tokens separated by spaces, one sentence per line.
pub fn render(model: &TopicRnn, ids: &[usize]) -> String {
    let mut text = String::new();
    for &id in ids {
        if id == model.vocab.eos_id() {
            text.push('\n');
        } else {
            if !text.is_empty() && !text.ends_with('\n') {
                text.push(' ');
            }
            text.push_str(model.vocab.token(id));
        }
    }
    text.trim_end().to_string()
}

pub fn cmd_topics(a: &TopicsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = checkpoint::load(&a.model)?;
    let topics = top_topic_words(&model, a.n)?;
    let width = topics
        .iter()
        .flatten()
        .map(|w| w.chars().count())
        .max()
        .unwrap_or(0)
        .max(format!("topic {}", topics.len()).len());
    let header: Vec<String> = (0..topics.len()).map(|k| format!("{:<width$}", format!("topic {k}"))).collect();
    say(out, format_args!("{}", header.join("  ").trim_end()))?;
    for row in 0..a.n {
        let cells: Vec<String> = topics.iter().map(|t| format!("{:<width$}", t[row])).collect();
        say(out, format_args!("{}", cells.join("  ").trim_end()))?;
    }
    Ok(())
}

pub fn cmd_features(a: &FeaturesArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = checkpoint::load(&a.model)?;
    let split = encode_file(&a.corpus, &model.vocab, a.block_size, "features")?;
    let features = extract_all(&model, &split.documents, a.include_cell)?;
    let file = File::create(&a.out).map_err(io_err(&a.out))?;
    let mut w = BufWriter::new(file);
    write_features_csv(&mut w, &features, topicrnn::downstream::feature_dim(&model, a.include_cell))
        .map_err(io_err(&a.out))?;
    w.flush().map_err(io_err(&a.out))?;
    say(out, format_args!("wrote {} feature rows to {}", features.len(), a.out.display()))
}

pub fn write_features_csv(w: &mut impl Write, features: &[Vec<f64>], dim: usize) -> std::io::Result<()> {
    let header: Vec<String> = std::iter::once("doc_id".to_string())
        .chain((0..dim).map(|i| format!("f_{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (i, row) in features.iter().enumerate() {
        write!(w, "{i}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a label file with exactly one line per document, indexed
/// `0..n_docs` in order.
fn read_labels(path: &Path, n_docs: usize) -> Result<Vec<String>, CliError> {
    let pairs = parse_labels(&read_text(path)?)?;
    if pairs.len() != n_docs {
        return Err(CliError::Usage(format!(
            "{} has {} labels for {n_docs} documents",
            path.display(),
            pairs.len()
        )));
    }
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, (idx, label))| {
            if idx == i {
                Ok(label)
            } else {
                Err(CliError::Usage(format!("{}: expected index {i}, found {idx}", path.display())))
            }
        })
        .collect()
}

pub fn cmd_classify(a: &ClassifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let start = Instant::now();
    let model = checkpoint::load(&a.model)?;
    let train_split = encode_file(&a.train, &model.vocab, a.block_size, "train")?;
    let test_split = encode_file(&a.test, &model.vocab, a.block_size, "test")?;
    let train_labels = read_labels(&a.train_labels, train_split.documents.len())?;
    let test_labels = read_labels(&a.test_labels, test_split.documents.len())?;

    let classes: BTreeSet<&str> = train_labels.iter().map(String::as_str).collect();
    if classes.len() > 2 {
        return Err(CliError::Usage(format!("expected two classes, found {}", classes.len())));
    }
    // The larger label (in sort order) is the positive class.
    let positive = *classes.iter().next_back().ok_or_else(|| CliError::Usage("no labels".into()))?;
    if let Some(l) = test_labels.iter().find(|l| !classes.contains(l.as_str())) {
        return Err(CliError::Usage(format!("test label {l:?} never appears in training")));
    }
    let to_bool = |ls: &[String]| -> Vec<bool> { ls.iter().map(|l| l == positive).collect() };
    let (ytr, yte) = (to_bool(&train_labels), to_bool(&test_labels));

    let xtr = extract_all(&model, &train_split.documents, a.include_cell)?;
    let xte = extract_all(&model, &test_split.documents, a.include_cell)?;
    let config = ClassifierConfig {
        hidden: a.hidden,
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let clf = train_classifier(&xtr, &ytr, config)?;
    let result = classify(&xte, &yte, &clf)?;
    say(out, format_args!("error rate {:.2}", result.error_rate))?;
    if let Some(p) = &a.report {
        let mut report = RunReport::new(
            "classify",
            json!({ "classifier": config, "positive_label": positive, "block_size": a.block_size }),
        );
        report.seed = Some(a.seed);
        report.error_rate = Some(result.error_rate);
        report.seconds = start.elapsed().as_secs_f64();
        report.write(p)?;
    }
    Ok(())
}
