//! Latent Dirichlet allocation by collapsed Gibbs sampling, with fold-in
//! inference and hard topic assignment.
//!
//! Training resamples per-token topics from
//! p(z = k | rest) ∝ (n_{d,k} + α) (n_{k,w} + β) / (n_k + |V| β).
//! A fitted model keeps only the topic-word counts; new documents are
//! folded in against the frozen counts.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Vocabulary, UNK_ID};
use crate::error::{Error, Result};

/// Default number of fold-in sweeps for inference on a new document.
pub const DEFAULT_FOLD_IN_ITERS: usize = 25;
/// Fold-in runs with a fixed seed so assigned labels are reproducible.
pub const DEFAULT_FOLD_IN_SEED: u64 = 0;

/// Tokens appearing in more than this fraction of documents are excluded
/// from LDA counting (stopword proxy for character-level corpora).
pub const STOPWORD_DOC_FRACTION: f64 = 0.4;

#[derive(Debug, Clone)]
pub struct LdaModel {
    k: usize,
    alpha: f64,
    beta: f64,
    /// K x |V| topic-word counts.
    topic_word: Vec<Vec<u64>>,
    /// Row sums of `topic_word`.
    topic_totals: Vec<u64>,
    /// Ids excluded from counting: reserved ids plus high-document-frequency
    /// tokens measured on the fitting corpus.
    excluded: Vec<bool>,
    vocab: Vocabulary,
    pub fold_in_iters: usize,
    pub fold_in_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicAssignment {
    pub doc: usize,
    pub label: usize,
    pub distribution: Vec<f64>,
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Fits an LDA model on the documents' text fields.
pub fn fit_gibbs(
    docs: &[Document],
    vocab: &Vocabulary,
    k: usize,
    alpha: f64,
    beta: f64,
    iterations: usize,
    seed: u64,
) -> Result<LdaModel> {
    if k < 1 {
        return Err(Error::Config("LDA topic count K must be >= 1".into()));
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if alpha <= 0.0 || beta <= 0.0 {
        return Err(Error::Config("LDA priors must be positive".into()));
    }
    if iterations < 1 {
        return Err(Error::Config("LDA iterations must be >= 1".into()));
    }
    let v = vocab.len();

    // document frequencies over the fitting corpus decide the stopword set
    let mut doc_freq = vec![0usize; v];
    for doc in docs {
        let mut seen = vec![false; v];
        for id in vocab.encode(&doc.text) {
            if !seen[id] {
                seen[id] = true;
                doc_freq[id] += 1;
            }
        }
    }
    let threshold = STOPWORD_DOC_FRACTION * docs.len() as f64;
    let mut excluded = vec![false; v];
    for (id, ex) in excluded.iter_mut().enumerate() {
        *ex = id <= UNK_ID || doc_freq[id] as f64 > threshold;
    }

    let token_lists: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| {
            vocab
                .encode(&d.text)
                .into_iter()
                .filter(|&id| !excluded[id])
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut topic_word = vec![vec![0u64; v]; k];
    let mut topic_totals = vec![0u64; k];
    let mut doc_topic: Vec<Vec<u64>> = token_lists.iter().map(|_| vec![0u64; k]).collect();
    let mut assignments: Vec<Vec<usize>> = Vec::with_capacity(token_lists.len());

    for (d, tokens) in token_lists.iter().enumerate() {
        let mut zs = Vec::with_capacity(tokens.len());
        for &w in tokens {
            let z = rng.gen_range(0..k);
            topic_word[z][w] += 1;
            topic_totals[z] += 1;
            doc_topic[d][z] += 1;
            zs.push(z);
        }
        assignments.push(zs);
    }

    let v_beta = v as f64 * beta;
    for _sweep in 0..iterations {
        for (d, tokens) in token_lists.iter().enumerate() {
            for (i, &w) in tokens.iter().enumerate() {
                let old = assignments[d][i];
                topic_word[old][w] -= 1;
                topic_totals[old] -= 1;
                doc_topic[d][old] -= 1;

                let weights: Vec<f64> = (0..k)
                    .map(|t| {
                        (doc_topic[d][t] as f64 + alpha) * (topic_word[t][w] as f64 + beta)
                            / (topic_totals[t] as f64 + v_beta)
                    })
                    .collect();
                let new = sample_weighted(&mut rng, &weights);

                topic_word[new][w] += 1;
                topic_totals[new] += 1;
                doc_topic[d][new] += 1;
                assignments[d][i] = new;
            }
        }
    }

    Ok(LdaModel {
        k,
        alpha,
        beta,
        topic_word,
        topic_totals,
        excluded,
        vocab: vocab.clone(),
        fold_in_iters: DEFAULT_FOLD_IN_ITERS,
        fold_in_seed: DEFAULT_FOLD_IN_SEED,
    })
}

impl LdaModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn topic_word_counts(&self) -> &[Vec<u64>] {
        &self.topic_word
    }

    pub fn topic_totals(&self) -> &[u64] {
        &self.topic_totals
    }

    pub fn is_excluded(&self, id: usize) -> bool {
        self.excluded.get(id).copied().unwrap_or(true)
    }

    /// Total in-vocab token count absorbed by the model (for the count
    /// conservation invariant).
    pub fn total_count(&self) -> u64 {
        self.topic_totals.iter().sum()
    }

    fn counted_ids(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab
            .encode(tokens)
            .into_iter()
            .filter(|&id| !self.excluded[id])
            .collect()
    }

    /// Fold-in Gibbs against frozen topic-word counts. Returns the
    /// per-document topic proportions (n_{d,k} + α)/(N_d + Kα) averaged over
    /// the last quarter of the sweeps. A document with no countable tokens
    /// gets the uniform distribution.
    pub fn infer_topic_dist(&self, doc: &Document, iterations: usize, seed: u64) -> Vec<f64> {
        self.infer_topic_dist_ids(&self.counted_ids(&doc.text), iterations, seed)
    }

    /// Same as `infer_topic_dist`, over already-encoded ids.
    pub fn infer_topic_dist_ids(&self, ids: &[usize], iterations: usize, seed: u64) -> Vec<f64> {
        let iterations = iterations.max(1);
        let tokens: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&id| id < self.excluded.len() && !self.excluded[id])
            .collect();
        if tokens.is_empty() {
            return vec![1.0 / self.k as f64; self.k];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v_beta = self.vocab.len() as f64 * self.beta;
        let n_d = tokens.len() as f64;
        let denom = n_d + self.k as f64 * self.alpha;

        let mut doc_topic = vec![0u64; self.k];
        let mut zs = Vec::with_capacity(tokens.len());
        for &w in &tokens {
            let weights: Vec<f64> = (0..self.k)
                .map(|t| {
                    (doc_topic[t] as f64 + self.alpha) * (self.topic_word[t][w] as f64 + self.beta)
                        / (self.topic_totals[t] as f64 + v_beta)
                })
                .collect();
            let z = sample_weighted(&mut rng, &weights);
            doc_topic[z] += 1;
            zs.push(z);
        }

        let averaged_from = iterations - (iterations / 4).max(1).min(iterations);
        let mut acc = vec![0.0; self.k];
        let mut samples = 0usize;
        for sweep in 0..iterations {
            for (i, &w) in tokens.iter().enumerate() {
                let old = zs[i];
                doc_topic[old] -= 1;
                let weights: Vec<f64> = (0..self.k)
                    .map(|t| {
                        (doc_topic[t] as f64 + self.alpha)
                            * (self.topic_word[t][w] as f64 + self.beta)
                            / (self.topic_totals[t] as f64 + v_beta)
                    })
                    .collect();
                let new = sample_weighted(&mut rng, &weights);
                doc_topic[new] += 1;
                zs[i] = new;
            }
            if sweep >= averaged_from {
                for (t, a) in acc.iter_mut().enumerate() {
                    *a += (doc_topic[t] as f64 + self.alpha) / denom;
                }
                samples += 1;
            }
        }
        acc.iter_mut().for_each(|a| *a /= samples as f64);
        acc
    }

    /// Hard label: argmax of the fold-in distribution, ties to the lowest
    /// topic index. Uses the model's fixed fold-in seed for reproducibility.
    pub fn assign_topic(&self, doc_index: usize, doc: &Document) -> TopicAssignment {
        let distribution = self.infer_topic_dist(doc, self.fold_in_iters, self.fold_in_seed);
        let label = argmax_dist(&distribution);
        TopicAssignment {
            doc: doc_index,
            label,
            distribution,
        }
    }

    pub fn assign_topic_ids(&self, ids: &[usize]) -> usize {
        argmax_dist(&self.infer_topic_dist_ids(ids, self.fold_in_iters, self.fold_in_seed))
    }

    /// The n tokens with highest smoothed probability
    /// (n_{k,w} + β)/(n_k + |V|β) under topic `k`, ties by token order.
    pub fn top_words(&self, k: usize, n: usize) -> Result<Vec<String>> {
        if k >= self.k {
            return Err(Error::TopicOutOfRange { topic: k, k: self.k });
        }
        if n < 1 {
            return Err(Error::InvalidArgument("top_words needs n >= 1".into()));
        }
        let mut ranked: Vec<(u64, &str)> = (0..self.vocab.len())
            .map(|id| (self.topic_word[k][id], self.vocab.token_of(id).unwrap()))
            .collect();
        // smoothed probability is monotone in the raw count, so sorting by
        // count is sorting by probability
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        Ok(ranked
            .into_iter()
            .take(n)
            .map(|(_, t)| t.to_string())
            .collect())
    }

    /// Checks the internal consistency invariant
    /// topic_totals[k] == Σ_w topic_word[k][w].
    pub fn check_consistency(&self) -> bool {
        self.topic_word
            .iter()
            .zip(&self.topic_totals)
            .all(|(row, &total)| row.iter().sum::<u64>() == total)
    }

    pub fn to_json(&self, config_hash: &str) -> String {
        let repr = LdaRepr {
            kind: "lda-model".into(),
            version: 1,
            k: self.k,
            alpha: self.alpha,
            beta: self.beta,
            vocab_hash: self.vocab.hash(),
            config_hash: config_hash.into(),
            excluded: (0..self.excluded.len()).filter(|&i| self.excluded[i]).collect(),
            topic_word: self.topic_word.clone(),
            fold_in_iters: self.fold_in_iters,
            fold_in_seed: self.fold_in_seed,
        };
        serde_json::to_string(&repr).expect("lda serialization")
    }

    pub fn save(&self, path: impl AsRef<Path>, config_hash: &str) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json(config_hash))
            .map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Loads a model and re-attaches the vocabulary, verifying its hash.
    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<LdaModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LdaModel::from_json(&text, vocab, &path.display().to_string())
    }

    pub fn from_json(text: &str, vocab: &Vocabulary, path: &str) -> Result<LdaModel> {
        let repr: LdaRepr = serde_json::from_str(text).map_err(|e| Error::Checkpoint {
            path: path.into(),
            msg: e.to_string(),
        })?;
        if repr.kind != "lda-model" || repr.version != 1 {
            return Err(Error::Checkpoint {
                path: path.into(),
                msg: format!("unsupported lda file kind={} version={}", repr.kind, repr.version),
            });
        }
        if repr.vocab_hash != vocab.hash() {
            return Err(Error::VocabHashMismatch {
                expected: repr.vocab_hash,
                got: vocab.hash(),
            });
        }
        let v = vocab.len();
        if repr.topic_word.len() != repr.k || repr.topic_word.iter().any(|r| r.len() != v) {
            return Err(Error::Checkpoint {
                path: path.into(),
                msg: "count matrix shape mismatch".into(),
            });
        }
        let mut excluded = vec![false; v];
        for id in repr.excluded {
            if id >= v {
                return Err(Error::Checkpoint {
                    path: path.into(),
                    msg: format!("excluded id {id} out of range"),
                });
            }
            excluded[id] = true;
        }
        let topic_totals = repr.topic_word.iter().map(|r| r.iter().sum()).collect();
        Ok(LdaModel {
            k: repr.k,
            alpha: repr.alpha,
            beta: repr.beta,
            topic_word: repr.topic_word,
            topic_totals,
            excluded,
            vocab: vocab.clone(),
            fold_in_iters: repr.fold_in_iters,
            fold_in_seed: repr.fold_in_seed,
        })
    }
}

fn argmax_dist(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate().skip(1) {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
struct LdaRepr {
    kind: String,
    version: u32,
    k: usize,
    alpha: f64,
    beta: f64,
    vocab_hash: String,
    config_hash: String,
    excluded: Vec<usize>,
    topic_word: Vec<Vec<u64>>,
    fold_in_iters: usize,
    fold_in_seed: u64,
}
