//! Command-line pipeline: prepare data, fit/assign LDA, train the baseline,
//! fork and fine-tune topic replicas, generate, and evaluate.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
//! `TOPICNHG_LOG` selects the log verbosity (error/warn/info/debug/trace).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::corpus::{self, Document, Vocabulary};
use crate::error::{Error, Result};
use crate::lda::{fit_gibbs, LdaModel};
use crate::nhg::{train_loop, NhgModel};
use crate::nn::Sgd;
use crate::rouge::{self, ScoredPair};
use crate::synth;
use crate::topic_nhg::{encode_pair, TopicNhgModel};

#[derive(Parser)]
#[command(
    name = "topicnhg",
    version,
    about = "Topic-sensitive neural headline generation pipeline"
)]
struct Cli {
    /// Config file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set topics=3 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary (and optional train/dev/test splits) from a corpus.
    Prepare {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_vocab: PathBuf,
        /// Directory for train.jsonl/dev.jsonl/test.jsonl splits.
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        dev_frac: f64,
        #[arg(long, default_value_t = 0.0)]
        test_frac: f64,
    },
    /// Fit LDA by collapsed Gibbs sampling.
    LdaFit {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write hard topic labels into a JSONL corpus.
    LdaAssign {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lda: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the shared baseline model.
    TrainBaseline {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override config baseline_steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fork the baseline into one replica per LDA topic.
    Fork {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        lda: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune one topic's replica on its labeled documents.
    TrainTopic {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        topic: usize,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Override config topic_steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate headlines with a baseline checkpoint or a topic-model dir.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only documents with score >= config min_score first.
        #[arg(long)]
        filter_score: bool,
        /// Write per-step attention weights as JSON (greedy only).
        #[arg(long)]
        dump_attention: Option<PathBuf>,
    },
    /// Score a predictions file with ROUGE-1/2/L, overall and per topic.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// Plain-text report path (stdout always gets the table).
        #[arg(long)]
        report: Option<PathBuf>,
        /// JSON report path.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Vocabulary to check against the predictions' recorded hash.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Emit the synthetic topic-pattern corpus (train.jsonl, test.jsonl).
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses argv and runs one subcommand; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("TOPICNHG_LOG", "info"),
    )
    .format_timestamp(None)
    .try_init();

    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    log::info!(
        "config hash {}; seeds: init={} train={} lda={} fold_in={} synth={}",
        cfg.hash(),
        cfg.init_seed,
        cfg.train_seed,
        cfg.lda_seed,
        cfg.fold_in_seed,
        cfg.synth_seed
    );
    match execute(cli.command, &cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (key, value) = kv.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got {kv:?}"))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Prepare {
            corpus,
            out_vocab,
            splits,
            dev_frac,
            test_frac,
        } => prepare(cfg, &corpus, &out_vocab, splits.as_deref(), dev_frac, test_frac),
        Command::LdaFit { corpus, vocab, out } => lda_fit(cfg, &corpus, &vocab, &out),
        Command::LdaAssign {
            corpus,
            lda,
            vocab,
            out,
        } => lda_assign(&corpus, &lda, &vocab, &out),
        Command::TrainBaseline {
            corpus,
            vocab,
            out,
            steps,
        } => train_baseline(cfg, &corpus, &vocab, &out, steps),
        Command::Fork {
            baseline,
            lda,
            vocab,
            out,
        } => fork(cfg, &baseline, &lda, &vocab, &out),
        Command::TrainTopic {
            model,
            topic,
            corpus,
            vocab,
            steps,
        } => train_topic(cfg, &model, topic, &corpus, &vocab, steps),
        Command::Generate {
            model,
            corpus,
            vocab,
            out,
            filter_score,
            dump_attention,
        } => generate(cfg, &model, &corpus, &vocab, &out, filter_score, dump_attention.as_deref()),
        Command::Evaluate {
            pred,
            report,
            json,
            vocab,
        } => evaluate(&pred, report.as_deref(), json.as_deref(), vocab.as_deref()),
        Command::Synth { out } => synth_cmd(cfg, &out),
    }
}

fn prepare(
    cfg: &RunConfig,
    corpus_path: &Path,
    out_vocab: &Path,
    splits: Option<&Path>,
    dev_frac: f64,
    test_frac: f64,
) -> Result<()> {
    let docs = corpus::load_corpus(corpus_path)?;
    let vocab_source: Vec<Document> = match splits {
        None => docs.clone(),
        Some(dir) => {
            if !(0.0..1.0).contains(&dev_frac)
                || !(0.0..1.0).contains(&test_frac)
                || dev_frac + test_frac >= 1.0
            {
                return Err(Error::Config(
                    "split fractions must be in [0,1) and sum below 1".into(),
                ));
            }
            let mut order: Vec<usize> = (0..docs.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
            order.shuffle(&mut rng);
            let n_dev = (docs.len() as f64 * dev_frac) as usize;
            let n_test = (docs.len() as f64 * test_frac) as usize;
            let pick = |ids: &[usize]| -> Vec<Document> {
                ids.iter().map(|&i| docs[i].clone()).collect()
            };
            let dev = pick(&order[..n_dev]);
            let test = pick(&order[n_dev..n_dev + n_test]);
            let train = pick(&order[n_dev + n_test..]);
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            corpus::save_corpus(dir.join("train.jsonl"), &train)?;
            corpus::save_corpus(dir.join("dev.jsonl"), &dev)?;
            corpus::save_corpus(dir.join("test.jsonl"), &test)?;
            log::info!(
                "split {} docs into train={} dev={} test={}",
                docs.len(),
                train.len(),
                dev.len(),
                test.len()
            );
            train
        }
    };
    let vocab = Vocabulary::build(&vocab_source, cfg.min_count)?;
    vocab.save(out_vocab)?;
    log::info!("vocabulary: {} entries, hash {}", vocab.len(), vocab.hash());
    Ok(())
}

fn lda_fit(cfg: &RunConfig, corpus_path: &Path, vocab_path: &Path, out: &Path) -> Result<()> {
    let docs = corpus::load_corpus(corpus_path)?;
    let vocab = Vocabulary::load(vocab_path)?;
    let mut model = fit_gibbs(
        &docs,
        &vocab,
        cfg.topics,
        cfg.effective_alpha(),
        cfg.beta,
        cfg.lda_iters,
        cfg.lda_seed,
    )?;
    model.fold_in_iters = cfg.fold_in_iters;
    model.fold_in_seed = cfg.fold_in_seed;
    model.save(out, &cfg.hash())?;
    for k in 0..cfg.topics {
        log::info!("topic {k} top words: {:?}", model.top_words(k, 8)?);
    }
    Ok(())
}

fn lda_assign(corpus_path: &Path, lda_path: &Path, vocab_path: &Path, out: &Path) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let model = LdaModel::load(lda_path, &vocab)?;
    // operate on raw JSON values so unrelated fields and exact strings
    // survive the rewrite
    let bytes = fs::read(corpus_path).map_err(|e| Error::io(corpus_path, e))?;
    let text = corpus::text_from_bytes(&bytes)?;
    let mut out_lines = String::new();
    let mut n = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::CorpusLine {
                line: i + 1,
                msg: e.to_string(),
            })?;
        let doc_text = value
            .get("text")
            .and_then(|t| t.as_str())
            .ok_or_else(|| Error::MissingField {
                line: i + 1,
                field: "text".into(),
            })?;
        let ids = vocab.encode(&corpus::tokenize_chars(doc_text));
        let label = model.assign_topic_ids(&ids);
        value
            .as_object_mut()
            .expect("corpus lines are objects")
            .insert("topic".into(), label.into());
        out_lines.push_str(&value.to_string());
        out_lines.push('\n');
        n += 1;
    }
    fs::write(out, out_lines).map_err(|e| Error::io(out, e))?;
    log::info!("labeled {n} documents");
    Ok(())
}

fn load_pairs(corpus_path: &Path, vocab: &Vocabulary) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let docs = corpus::load_corpus(corpus_path)?;
    Ok(docs.iter().map(|d| encode_pair(vocab, d)).collect())
}

fn train_baseline(
    cfg: &RunConfig,
    corpus_path: &Path,
    vocab_path: &Path,
    out: &Path,
    steps: Option<usize>,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let pairs = load_pairs(corpus_path, &vocab)?;
    let mut model = NhgModel::new(cfg.nhg_config(vocab.len()), cfg.init_seed)?;
    let opt = Sgd::new(cfg.lr, cfg.clip);
    let steps = steps.unwrap_or(cfg.baseline_steps);
    let losses = train_loop(&mut model, &pairs, &opt, steps, cfg.batch, cfg.train_seed)?;
    if let Some(last) = losses.last() {
        log::info!("final mean loss {last:.6}");
    }
    model.save(out, &vocab.hash(), &cfg.hash())?;
    Ok(())
}

fn fork(
    cfg: &RunConfig,
    baseline_path: &Path,
    lda_path: &Path,
    vocab_path: &Path,
    out: &Path,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let (baseline, header) = NhgModel::load(baseline_path)?;
    check_vocab_hash(&header, &vocab, baseline_path)?;
    let lda = LdaModel::load(lda_path, &vocab)?;
    let k = lda.k();
    let model = TopicNhgModel::fork(&baseline, k, lda, !cfg.fork_embeddings)?;
    model.save_dir(out, &vocab.hash(), &cfg.hash())?;
    log::info!("forked {k} replicas from {}", model.baseline_hash());
    Ok(())
}

fn train_topic(
    cfg: &RunConfig,
    model_dir: &Path,
    topic: usize,
    corpus_path: &Path,
    vocab_path: &Path,
    steps: Option<usize>,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let mut model = TopicNhgModel::load_dir(model_dir, &vocab)?;
    let docs = corpus::load_corpus(corpus_path)?;
    let topic_docs: Vec<Document> = docs
        .into_iter()
        .filter(|d| d.topic == Some(topic))
        .collect();
    if topic_docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    log::info!("fine-tuning topic {topic} on {} documents", topic_docs.len());
    let opt = Sgd::new(cfg.lr, cfg.clip);
    let steps = steps.unwrap_or(cfg.topic_steps);
    model.train_topic(
        topic,
        &topic_docs,
        &vocab,
        &opt,
        steps,
        cfg.batch,
        cfg.train_seed,
    )?;
    model.save_replica(model_dir, topic, &vocab.hash())
}

enum AnyModel {
    Baseline(NhgModel),
    Topic(TopicNhgModel),
}

fn load_any_model(path: &Path, vocab: &Vocabulary) -> Result<AnyModel> {
    if path.is_dir() {
        Ok(AnyModel::Topic(TopicNhgModel::load_dir(path, vocab)?))
    } else {
        let (model, header) = NhgModel::load(path)?;
        check_vocab_hash(&header, vocab, path)?;
        Ok(AnyModel::Baseline(model))
    }
}

fn check_vocab_hash(header: &serde_json::Value, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let expected = crate::checkpoint::header_str(header, "vocab_hash", &path.display().to_string())?;
    if expected != vocab.hash() {
        return Err(Error::VocabHashMismatch {
            expected: expected.to_string(),
            got: vocab.hash(),
        });
    }
    Ok(())
}

fn generate(
    cfg: &RunConfig,
    model_path: &Path,
    corpus_path: &Path,
    vocab_path: &Path,
    out: &Path,
    filter_score: bool,
    dump_attention: Option<&Path>,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let model = load_any_model(model_path, &vocab)?;
    let mut docs = corpus::load_corpus(corpus_path)?;
    if filter_score {
        docs = corpus::filter_by_score(&docs, cfg.min_score as u8);
        log::info!("score filter kept {} documents", docs.len());
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let decode = cfg.decode_config();
    if dump_attention.is_some() && decode.beam_width > 1 {
        return Err(Error::Config(
            "--dump-attention requires greedy decoding (beam = 1)".into(),
        ));
    }
    let mut out_lines = String::new();
    let mut attn_records = Vec::new();
    for doc in &docs {
        let x = vocab.encode(&doc.text);
        let (ids, topic, weights) = match &model {
            AnyModel::Baseline(m) => {
                if dump_attention.is_some() {
                    let (ids, w) = m.generate_greedy_traced(&x, &decode)?;
                    (ids, doc.topic, w)
                } else if decode.beam_width > 1 {
                    (m.generate_beam(&x, &decode)?, doc.topic, Vec::new())
                } else {
                    (m.generate_greedy(&x, &decode)?, doc.topic, Vec::new())
                }
            }
            AnyModel::Topic(m) => {
                if dump_attention.is_some() {
                    let (ids, label, w) = m.generate_traced(&x, &decode)?;
                    (ids, Some(label), w)
                } else {
                    let (ids, label) = m.generate(&x, &decode)?;
                    (ids, Some(label), Vec::new())
                }
            }
        };
        let generated = vocab.render(&ids)?;
        let mut obj = serde_json::Map::new();
        obj.insert("text".into(), doc.text.concat().into());
        obj.insert("headline".into(), doc.headline.concat().into());
        obj.insert("generated".into(), generated.clone().into());
        if let Some(t) = topic {
            obj.insert("topic".into(), t.into());
        }
        out_lines.push_str(&serde_json::Value::Object(obj).to_string());
        out_lines.push('\n');
        if dump_attention.is_some() {
            attn_records.push(serde_json::json!({
                "text": doc.text.concat(),
                "generated": generated,
                "topic": topic,
                "weights": weights,
            }));
        }
    }
    fs::write(out, out_lines).map_err(|e| Error::io(out, e))?;
    let meta = serde_json::json!({
        "kind": "predictions-meta",
        "vocab_hash": vocab.hash(),
        "config_hash": cfg.hash(),
        "model": model_path.display().to_string(),
    });
    let meta_path = meta_path_for(out);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta"))
        .map_err(|e| Error::io(&meta_path, e))?;
    if let Some(path) = dump_attention {
        let text =
            serde_json::to_string_pretty(&serde_json::Value::Array(attn_records)).expect("attn");
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    log::info!("generated {} headlines", docs.len());
    Ok(())
}

fn meta_path_for(pred: &Path) -> PathBuf {
    let mut name = pred.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    pred.with_file_name(name)
}

fn evaluate(
    pred: &Path,
    report_path: Option<&Path>,
    json_path: Option<&Path>,
    vocab_path: Option<&Path>,
) -> Result<()> {
    if let Some(vocab_path) = vocab_path {
        let vocab = Vocabulary::load(vocab_path)?;
        let meta_path = meta_path_for(pred);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            path: meta_path.display().to_string(),
            msg: e.to_string(),
        })?;
        let expected = crate::checkpoint::header_str(&meta, "vocab_hash", &meta_path.display().to_string())?;
        if expected != vocab.hash() {
            return Err(Error::VocabHashMismatch {
                expected: expected.to_string(),
                got: vocab.hash(),
            });
        }
    }
    let bytes = fs::read(pred).map_err(|e| Error::io(pred, e))?;
    let text = corpus::text_from_bytes(&bytes)?;
    let mut pairs: Vec<ScoredPair> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::CorpusLine {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let field = |name: &str| -> Result<String> {
            value
                .get(name)
                .and_then(|v| v.as_str())
                .map(|s| s.to_string())
                .ok_or_else(|| Error::MissingField {
                    line: i + 1,
                    field: name.into(),
                })
        };
        let headline = field("headline")?;
        let generated = field("generated")?;
        let topic = value.get("topic").and_then(|t| t.as_u64()).map(|t| t as usize);
        pairs.push((
            corpus::tokenize_chars(&generated),
            corpus::tokenize_chars(&headline),
            topic,
        ));
    }
    let report = rouge::evaluate(&pairs)?;
    print!("{}", report.to_table());
    if let Some(path) = report_path {
        fs::write(path, report.to_table()).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = json_path {
        fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn synth_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (train, test) = synth::generate(&cfg.synth_config())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    corpus::save_corpus(out.join("train.jsonl"), &train)?;
    corpus::save_corpus(out.join("test.jsonl"), &test)?;
    log::info!("wrote {} train and {} test documents", train.len(), test.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_path_appends_suffix() {
        assert_eq!(
            meta_path_for(Path::new("/tmp/preds.jsonl")),
            PathBuf::from("/tmp/preds.jsonl.meta.json")
        );
    }

    #[test]
    fn unknown_subcommand_exits_2() {
        assert_eq!(run(["topicnhg", "frobnicate"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run(["topicnhg", "--help"]), 0);
    }

    #[test]
    fn bad_override_exits_2() {
        assert_eq!(run(["topicnhg", "--set", "nope=1", "synth", "--out", "/tmp/x"]), 2);
        assert_eq!(run(["topicnhg", "--set", "garbage", "synth", "--out", "/tmp/x"]), 2);
    }
}
