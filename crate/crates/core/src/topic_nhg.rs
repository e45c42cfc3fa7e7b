//! Topic-sensitive headline generation: the trained baseline is forked into
//! K replicas, each fine-tuned on one topic's data; inference routes through
//! the hard LDA label; the joint likelihood
//! p(y, l | x) = p(l | x) p(y | x, l) is exposed for evaluation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::{sha256_hex, Document, Vocabulary, EOS_ID};
use crate::error::{Error, Result};
use crate::lda::LdaModel;
use crate::nhg::{DecodeConfig, NhgModel};
use crate::nn::Sgd;

#[derive(Debug, Clone)]
pub struct TopicNhgModel {
    k: usize,
    replicas: Vec<NhgModel>,
    lda: LdaModel,
    /// When true the embedding table is conceptually one shared tensor: it
    /// is frozen during fine-tuning so every replica keeps the fork-time
    /// values, and it is stored once in the checkpoint.
    shared_embedding: bool,
    baseline_hash: String,
}

impl TopicNhgModel {
    /// Forks the baseline into `k` value-equal replicas routed by `lda`.
    pub fn fork(baseline: &NhgModel, k: usize, lda: LdaModel, shared_embedding: bool) -> Result<TopicNhgModel> {
        if k < 1 {
            return Err(Error::Config("fork needs K >= 1".into()));
        }
        if lda.k() != k {
            return Err(Error::TopicCountMismatch {
                model_k: k,
                lda_k: lda.k(),
            });
        }
        let baseline_hash = sha256_hex(&baseline.to_bytes("", "")?);
        let mut replicas = Vec::with_capacity(k);
        for _ in 0..k {
            let mut replica = baseline.clone();
            replica.freeze_embedding = shared_embedding;
            replicas.push(replica);
        }
        Ok(TopicNhgModel {
            k,
            replicas,
            lda,
            shared_embedding,
            baseline_hash,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lda(&self) -> &LdaModel {
        &self.lda
    }

    pub fn replica(&self, l: usize) -> Result<&NhgModel> {
        self.replicas.get(l).ok_or(Error::TopicOutOfRange {
            topic: l,
            k: self.k,
        })
    }

    pub fn replica_mut(&mut self, l: usize) -> Result<&mut NhgModel> {
        let k = self.k;
        self.replicas.get_mut(l).ok_or(Error::TopicOutOfRange { topic: l, k })
    }

    pub fn shared_embedding(&self) -> bool {
        self.shared_embedding
    }

    pub fn baseline_hash(&self) -> &str {
        &self.baseline_hash
    }

    /// Fine-tunes replica `l` on its topic's documents for `steps` optimizer
    /// steps, returning the per-step losses. Every document must route to
    /// topic `l` under the model's LDA.
    pub fn train_topic(
        &mut self,
        l: usize,
        docs: &[Document],
        vocab: &Vocabulary,
        opt: &Sgd,
        steps: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if l >= self.k {
            return Err(Error::TopicOutOfRange { topic: l, k: self.k });
        }
        if batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if steps == 0 {
            return Ok(Vec::new());
        }
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for (index, doc) in docs.iter().enumerate() {
            let got = self.lda.assign_topic(index, doc).label;
            if got != l {
                return Err(Error::MislabeledDocument {
                    index,
                    expected: l,
                    got,
                });
            }
        }
        let pairs: Vec<(Vec<usize>, Vec<usize>)> = docs
            .iter()
            .map(|d| encode_pair(vocab, d))
            .collect();
        let shared = self.shared_embedding;
        let replica = &mut self.replicas[l];
        replica.freeze_embedding = shared;
        crate::nhg::train_loop(replica, &pairs, opt, steps, batch_size, seed)
    }

    /// Routes the input through the LDA label and generates with that
    /// topic's replica. Returns (output ids, label).
    pub fn generate(&self, x_ids: &[usize], cfg: &DecodeConfig) -> Result<(Vec<usize>, usize)> {
        let label = self.lda.assign_topic_ids(x_ids);
        let replica = self.replica(label)?;
        let out = if cfg.beam_width > 1 {
            replica.generate_beam(x_ids, cfg)?
        } else {
            replica.generate_greedy(x_ids, cfg)?
        };
        Ok((out, label))
    }

    /// Routed greedy generation that also reports attention weights.
    pub fn generate_traced(
        &self,
        x_ids: &[usize],
        cfg: &DecodeConfig,
    ) -> Result<(Vec<usize>, usize, Vec<Vec<f64>>)> {
        let label = self.lda.assign_topic_ids(x_ids);
        let (out, weights) = self.replica(label)?.generate_greedy_traced(x_ids, cfg)?;
        Ok((out, label, weights))
    }

    /// log p(y, l | x) = log p(l | x, θ₁) + log p(y | x, l, θ₂), the joint
    /// of the topic prior term and replica l's sequence likelihood.
    pub fn joint_logprob(&self, x_ids: &[usize], y_ids: &[usize], l: usize) -> Result<f64> {
        let replica = self.replica(l)?;
        let dist =
            self.lda
                .infer_topic_dist_ids(x_ids, self.lda.fold_in_iters, self.lda.fold_in_seed);
        let prior = dist[l].ln();
        let nll = replica.sequence_nll(x_ids, y_ids)?;
        Ok(prior - nll)
    }

    // -- checkpoint directory layout -------------------------------------

    pub fn save_dir(&self, dir: impl AsRef<Path>, vocab_hash: &str, config_hash: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.lda.save(dir.join("lda.json"), config_hash)?;
        let embedding = self.replicas[0].embedding_entry()?;
        checkpoint::write_file(
            dir.join("embedding.tensors"),
            &serde_json::json!({"kind": "embedding", "vocab_hash": vocab_hash}),
            &[embedding],
        )?;
        let mut replica_files = Vec::with_capacity(self.k);
        for (l, replica) in self.replicas.iter().enumerate() {
            let file = format!("replica_{l}.tensors");
            let tensors = replica.replica_tensors(!self.shared_embedding)?;
            let header = serde_json::json!({
                "kind": "replica",
                "topic": l,
                "config": replica.config(),
                "vocab_hash": vocab_hash,
            });
            checkpoint::write_file(dir.join(&file), &header, &tensors)?;
            replica_files.push(file);
        }
        let manifest = Manifest {
            kind: "topicnhg-checkpoint".into(),
            version: 1,
            k: self.k,
            shared_embedding: self.shared_embedding,
            baseline_hash: self.baseline_hash.clone(),
            lda_file: "lda.json".into(),
            embedding_file: "embedding.tensors".into(),
            replica_files,
            vocab_hash: vocab_hash.into(),
            config_hash: config_hash.into(),
        };
        let manifest_path = dir.join("manifest.json");
        fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest).expect("manifest serialization"),
        )
        .map_err(|e| Error::io(&manifest_path, e))
    }

    pub fn load_dir(dir: impl AsRef<Path>, vocab: &Vocabulary) -> Result<TopicNhgModel> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            path: manifest_path.display().to_string(),
            msg: e.to_string(),
        })?;
        if manifest.kind != "topicnhg-checkpoint" || manifest.version != 1 {
            return Err(Error::Checkpoint {
                path: manifest_path.display().to_string(),
                msg: "unsupported manifest".into(),
            });
        }
        if manifest.vocab_hash != vocab.hash() {
            return Err(Error::VocabHashMismatch {
                expected: manifest.vocab_hash,
                got: vocab.hash(),
            });
        }
        let lda = LdaModel::load(dir.join(&manifest.lda_file), vocab)?;
        if lda.k() != manifest.k {
            return Err(Error::TopicCountMismatch {
                model_k: manifest.k,
                lda_k: lda.k(),
            });
        }
        let emb_path = dir.join(&manifest.embedding_file);
        let (_, emb_tensors) = checkpoint::read_file(&emb_path)?;
        let embedding = emb_tensors
            .iter()
            .find(|t| t.name == "embedding")
            .ok_or_else(|| Error::Checkpoint {
                path: emb_path.display().to_string(),
                msg: "missing embedding tensor".into(),
            })?;
        if manifest.replica_files.len() != manifest.k {
            return Err(Error::Checkpoint {
                path: manifest_path.display().to_string(),
                msg: "replica file count does not match K".into(),
            });
        }
        let mut replicas = Vec::with_capacity(manifest.k);
        for file in &manifest.replica_files {
            let path = dir.join(file);
            let (header, tensors) = checkpoint::read_file(&path)?;
            let cfg: crate::nhg::NhgConfig = serde_json::from_value(
                header
                    .get("config")
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint {
                        path: path.display().to_string(),
                        msg: "replica header missing config".into(),
                    })?,
            )
            .map_err(|e| Error::Checkpoint {
                path: path.display().to_string(),
                msg: format!("bad replica config: {e}"),
            })?;
            let mut replica = NhgModel::new(cfg, 0)?;
            let emb = if manifest.shared_embedding {
                Some(embedding)
            } else {
                None
            };
            replica.load_replica_tensors(&tensors, emb, &path.display().to_string())?;
            replica.freeze_embedding = manifest.shared_embedding;
            replicas.push(replica);
        }
        Ok(TopicNhgModel {
            k: manifest.k,
            replicas,
            lda,
            shared_embedding: manifest.shared_embedding,
            baseline_hash: manifest.baseline_hash,
        })
    }

    /// Rewrites only replica `l`'s tensor file, so fine-tuning jobs for
    /// distinct topics can run as parallel processes against one directory.
    pub fn save_replica(&self, dir: impl AsRef<Path>, l: usize, vocab_hash: &str) -> Result<()> {
        let bytes = self.replica_bytes(l, vocab_hash)?;
        let path = dir.as_ref().join(format!("replica_{l}.tensors"));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    /// Serialized bytes of replica `l` exactly as save_dir would write them;
    /// hashing these observes the isolation invariant.
    pub fn replica_bytes(&self, l: usize, vocab_hash: &str) -> Result<Vec<u8>> {
        let replica = self.replica(l)?;
        let tensors = replica.replica_tensors(!self.shared_embedding)?;
        let header = serde_json::json!({
            "kind": "replica",
            "topic": l,
            "config": replica.config(),
            "vocab_hash": vocab_hash,
        });
        Ok(checkpoint::to_bytes(&header, &tensors))
    }
}

/// Encodes a document into (x_ids, y_ids-with-EOS) for training.
pub fn encode_pair(vocab: &Vocabulary, doc: &Document) -> (Vec<usize>, Vec<usize>) {
    let x = vocab.encode(&doc.text);
    let mut y = vocab.encode(&doc.headline);
    y.push(EOS_ID);
    (x, y)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: String,
    version: u32,
    k: usize,
    shared_embedding: bool,
    baseline_hash: String,
    lda_file: String,
    embedding_file: String,
    replica_files: Vec<String>,
    vocab_hash: String,
    config_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize_chars;
    use crate::lda::fit_gibbs;
    use crate::nhg::NhgConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn doc(text: &str, headline: &str) -> Document {
        Document {
            text: tokenize_chars(text),
            headline: tokenize_chars(headline),
            score: None,
            topic: None,
        }
    }

    /// Two topics with disjoint 50-char alphabets, plus a fitted LDA and a
    /// small baseline over the shared vocabulary.
    fn fixture(k: usize) -> (Vec<Document>, Vocabulary, LdaModel, NhgModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pool_for = |topic: usize| -> Vec<char> {
            let base = 0x3041 + (topic as u32) * 0x60;
            (0..50u32).map(|i| char::from_u32(base + i).unwrap()).collect()
        };
        let mut docs = Vec::new();
        for i in 0..(30 * k) {
            let pool = pool_for(i % k);
            let text: String = (0..25).map(|_| pool[rng.gen_range(0..50)]).collect();
            let headline: String = text.chars().take(3).collect();
            docs.push(doc(&text, &headline));
        }
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let lda = fit_gibbs(&docs, &vocab, k, 50.0 / k as f64, 0.01, 60, 7).unwrap();
        let mut cfg = NhgConfig::new(vocab.len(), 4, 3, 5);
        cfg.attn_size = 4;
        let baseline = NhgModel::new(cfg, 21).unwrap();
        (docs, vocab, lda, baseline)
    }

    #[test]
    fn fork_requires_matching_k() {
        let (_, _, lda, baseline) = fixture(2);
        assert!(matches!(
            TopicNhgModel::fork(&baseline, 3, lda.clone(), true),
            Err(Error::TopicCountMismatch { .. })
        ));
        assert!(TopicNhgModel::fork(&baseline, 2, lda, true).is_ok());
    }

    #[test]
    fn fork_identity_bit_exact_generation() {
        let (_, vocab, lda, baseline) = fixture(2);
        let model = TopicNhgModel::fork(&baseline, 2, lda, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = DecodeConfig {
            max_len: 5,
            ..DecodeConfig::default()
        };
        for _ in 0..20 {
            let x: Vec<usize> = (0..6).map(|_| rng.gen_range(4..vocab.len())).collect();
            let base_out = baseline.generate_greedy(&x, &cfg).unwrap();
            for l in 0..2 {
                assert_eq!(model.replica(l).unwrap().generate_greedy(&x, &cfg).unwrap(), base_out);
            }
            let (routed, label) = model.generate(&x, &cfg).unwrap();
            assert!(label < 2);
            assert_eq!(routed, base_out);
        }
    }

    #[test]
    fn training_one_replica_leaves_others_untouched() {
        let (docs, vocab, lda, baseline) = fixture(2);
        let mut model = TopicNhgModel::fork(&baseline, 2, lda, true).unwrap();
        let before_1 = model.replica_bytes(1, "vh").unwrap();
        let baseline_bytes = |m: &NhgModel| m.to_bytes("", "").unwrap();
        let base_ref = baseline_bytes(&baseline);

        // gather documents routed to topic 0
        let topic0: Vec<Document> = docs
            .iter()
            .enumerate()
            .filter(|(i, d)| model.lda().assign_topic(*i, d).label == 0)
            .map(|(_, d)| d.clone())
            .collect();
        assert!(!topic0.is_empty());
        let losses = model
            .train_topic(0, &topic0, &vocab, &Sgd::new(0.1, 5.0), 3, 4, 1)
            .unwrap();
        assert_eq!(losses.len(), 3);
        // replica 1 bytes unchanged, replica 0 diverged
        assert_eq!(sha256_hex(&before_1), sha256_hex(&model.replica_bytes(1, "vh").unwrap()));
        assert_ne!(
            sha256_hex(&baseline_bytes(model.replica(0).unwrap())),
            sha256_hex(&base_ref)
        );
        // shared embedding stayed frozen at fork-time values
        let emb_after = model.replicas[0].embedding_entry().unwrap();
        let emb_base = baseline.embedding_entry().unwrap();
        assert_eq!(emb_after.data, emb_base.data);
    }

    #[test]
    fn train_topic_rejects_mislabeled_documents() {
        let (docs, vocab, lda, baseline) = fixture(2);
        let mut model = TopicNhgModel::fork(&baseline, 2, lda, true).unwrap();
        // find one doc for each topic, then train topic 0 with a topic-1 doc
        let mut by_label = vec![Vec::new(), Vec::new()];
        for (i, d) in docs.iter().enumerate() {
            by_label[model.lda().assign_topic(i, d).label].push(d.clone());
        }
        let mixed = vec![by_label[0][0].clone(), by_label[1][0].clone()];
        match model.train_topic(0, &mixed, &vocab, &Sgd::new(0.1, 5.0), 1, 2, 0) {
            Err(Error::MislabeledDocument { index: 1, expected: 0, got: 1 }) => {}
            other => panic!("expected mislabeled error, got {other:?}"),
        }
    }

    #[test]
    fn zero_steps_and_zero_lr_are_identities() {
        let (docs, vocab, lda, baseline) = fixture(2);
        let mut model = TopicNhgModel::fork(&baseline, 2, lda, true).unwrap();
        let before = model.replica_bytes(0, "vh").unwrap();
        let topic0: Vec<Document> = docs
            .iter()
            .enumerate()
            .filter(|(i, d)| model.lda().assign_topic(*i, d).label == 0)
            .map(|(_, d)| d.clone())
            .collect();
        let losses = model
            .train_topic(0, &topic0, &vocab, &Sgd::new(0.1, 5.0), 0, 4, 1)
            .unwrap();
        assert!(losses.is_empty());
        assert_eq!(before, model.replica_bytes(0, "vh").unwrap());

        let losses = model
            .train_topic(0, &topic0, &vocab, &Sgd::new(0.0, 5.0), 2, 4, 1)
            .unwrap();
        assert_eq!(losses.len(), 2);
        assert_eq!(before, model.replica_bytes(0, "vh").unwrap());
    }

    #[test]
    fn k1_fork_matches_continued_baseline_training() {
        // forked embeddings: fine-tuning the single replica is exactly
        // continued baseline training
        let (docs, vocab, _, baseline) = fixture(1);
        let lda1 = fit_gibbs(&docs, &vocab, 1, 50.0, 0.01, 5, 0).unwrap();
        let mut forked = TopicNhgModel::fork(&baseline, 1, lda1, false).unwrap();
        let mut continued = baseline.clone();

        let opt = Sgd::new(0.05, 5.0);
        let fork_losses = forked
            .train_topic(0, &docs, &vocab, &opt, 5, 4, 3)
            .unwrap();

        let pairs: Vec<(Vec<usize>, Vec<usize>)> =
            docs.iter().map(|d| encode_pair(&vocab, d)).collect();
        let cont_losses =
            crate::nhg::train_loop(&mut continued, &pairs, &opt, 5, 4, 3).unwrap();
        for (a, b) in fork_losses.iter().zip(&cont_losses) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn joint_logprob_decomposes() {
        let (docs, vocab, lda, baseline) = fixture(2);
        let model = TopicNhgModel::fork(&baseline, 2, lda, true).unwrap();
        let (x, y) = encode_pair(&vocab, &docs[0]);
        for l in 0..2 {
            let joint = model.joint_logprob(&x, &y, l).unwrap();
            let dist = model.lda().infer_topic_dist_ids(
                &x,
                model.lda().fold_in_iters,
                model.lda().fold_in_seed,
            );
            let nll = model.replica(l).unwrap().sequence_nll(&x, &y).unwrap();
            assert!((joint - (dist[l].ln() - nll)).abs() < 1e-12);
        }
        assert!(model.joint_logprob(&x, &y, 5).is_err());
    }

    #[test]
    fn k1_joint_prior_term_is_zero() {
        let (docs, vocab, _, baseline) = fixture(1);
        let lda1 = fit_gibbs(&docs, &vocab, 1, 50.0, 0.01, 5, 0).unwrap();
        let model = TopicNhgModel::fork(&baseline, 1, lda1, true).unwrap();
        let (x, y) = encode_pair(&vocab, &docs[0]);
        let joint = model.joint_logprob(&x, &y, 0).unwrap();
        let nll = model.replica(0).unwrap().sequence_nll(&x, &y).unwrap();
        assert!((joint + nll).abs() < 1e-12);
    }

    #[test]
    fn save_load_dir_roundtrip() {
        let (docs, vocab, lda, baseline) = fixture(2);
        let mut model = TopicNhgModel::fork(&baseline, 2, lda, true).unwrap();
        let topic0: Vec<Document> = docs
            .iter()
            .enumerate()
            .filter(|(i, d)| model.lda().assign_topic(*i, d).label == 0)
            .map(|(_, d)| d.clone())
            .collect();
        model
            .train_topic(0, &topic0, &vocab, &Sgd::new(0.1, 5.0), 2, 4, 1)
            .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topic_model");
        model.save_dir(&path, &vocab.hash(), "cfg").unwrap();
        let loaded = TopicNhgModel::load_dir(&path, &vocab).unwrap();
        assert_eq!(loaded.k(), 2);
        assert_eq!(loaded.shared_embedding(), true);
        assert_eq!(loaded.baseline_hash(), model.baseline_hash());
        for l in 0..2 {
            assert_eq!(
                loaded.replica_bytes(l, "x").unwrap(),
                model.replica_bytes(l, "x").unwrap()
            );
        }
        // routing identical after reload
        let (x, _) = encode_pair(&vocab, &docs[0]);
        let cfg = DecodeConfig::default();
        assert_eq!(model.generate(&x, &cfg).unwrap(), loaded.generate(&x, &cfg).unwrap());

        // wrong vocabulary rejected
        let other = Vocabulary::build(&[doc("zz", "z")], 1).unwrap();
        assert!(TopicNhgModel::load_dir(&path, &other).is_err());
    }
}
