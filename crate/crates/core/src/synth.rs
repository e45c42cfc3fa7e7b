//! Synthetic topic-pattern corpus: three planted topics, each with its own
//! character pool plus a shared pool, and a distinct deterministic
//! summarization pattern per topic. Used by the acceptance pipeline and
//! the `synth` subcommand.
//!
//! Patterns over the source characters:
//!   topic 0: headline = first 4 characters
//!   topic 1: headline = last 4 characters
//!   topic 2: headline = characters at positions 0, 2, 4, 6
//!
//! Topic pools are disjoint so LDA can recover the partition; the shared
//! pool is small enough that its characters land in most documents and get
//! excluded by the stopword proxy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Document;
use crate::error::{Error, Result};

pub const SYNTH_TOPICS: usize = 3;

const SHARED_POOL: &str = "0123456789";
const TOPIC_POOLS: [&str; SYNTH_TOPICS] = ["abcdefghijkl", "mnopqrstuvwx", "ABCDEFGHIJKL"];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub train: usize,
    pub test: usize,
    pub len_min: usize,
    pub len_max: usize,
    /// Probability that a source position draws from the shared pool.
    pub shared_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train: 3000,
            test: 300,
            len_min: 10,
            len_max: 16,
            shared_frac: 0.5,
            seed: 11,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.len_min < 8 {
            return Err(Error::Config(
                "synth len_min must be >= 8 so every pattern is defined".into(),
            ));
        }
        if self.len_max < self.len_min {
            return Err(Error::Config("synth len_max must be >= len_min".into()));
        }
        if !(0.0..=0.9).contains(&self.shared_frac) {
            return Err(Error::Config("synth shared_frac must be in [0, 0.9]".into()));
        }
        if self.train == 0 || self.test == 0 {
            return Err(Error::Config("synth corpus sizes must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn headline_pattern(topic: usize, chars: &[char]) -> Vec<char> {
    match topic {
        0 => chars.iter().take(4).copied().collect(),
        1 => chars.iter().skip(chars.len().saturating_sub(4)).copied().collect(),
        _ => [0usize, 2, 4, 6].iter().map(|&i| chars[i]).collect(),
    }
}

fn make_doc(rng: &mut ChaCha8Rng, cfg: &SynthConfig, topic: usize, score: Option<u8>) -> Document {
    let shared: Vec<char> = SHARED_POOL.chars().collect();
    let pool: Vec<char> = TOPIC_POOLS[topic].chars().collect();
    let len = rng.gen_range(cfg.len_min..=cfg.len_max);
    // require a minimum of topical evidence per document
    let chars: Vec<char> = loop {
        let mut topic_positions = 0;
        let candidate: Vec<char> = (0..len)
            .map(|_| {
                if rng.gen::<f64>() < cfg.shared_frac {
                    shared[rng.gen_range(0..shared.len())]
                } else {
                    topic_positions += 1;
                    pool[rng.gen_range(0..pool.len())]
                }
            })
            .collect();
        if topic_positions >= 3 {
            break candidate;
        }
    };
    let headline: String = headline_pattern(topic, &chars).into_iter().collect();
    let text: String = chars.into_iter().collect();
    Document {
        text: crate::corpus::tokenize_chars(&text),
        headline: crate::corpus::tokenize_chars(&headline),
        score,
        topic: None,
    }
}

/// Generates (train, test) corpora. Topics cycle so both splits are
/// balanced; test documents carry score 5 so the score filter keeps them.
pub fn generate(cfg: &SynthConfig) -> Result<(Vec<Document>, Vec<Document>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = (0..cfg.train)
        .map(|i| make_doc(&mut rng, cfg, i % SYNTH_TOPICS, None))
        .collect();
    let test = (0..cfg.test)
        .map(|i| make_doc(&mut rng, cfg, i % SYNTH_TOPICS, Some(5)))
        .collect();
    Ok((train, test))
}

/// The planted topic of a synthetic document, recovered from its character
/// pools; test-only ground truth.
pub fn planted_topic(doc: &Document) -> Option<usize> {
    for tok in &doc.text {
        let c = tok.chars().next()?;
        for (t, pool) in TOPIC_POOLS.iter().enumerate() {
            if pool.contains(c) {
                return Some(t);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape_and_patterns_hold() {
        let cfg = SynthConfig {
            train: 30,
            test: 9,
            ..SynthConfig::default()
        };
        let (train, test) = generate(&cfg).unwrap();
        assert_eq!(train.len(), 30);
        assert_eq!(test.len(), 9);
        for doc in train.iter().chain(&test) {
            let chars: Vec<char> = doc.text.iter().map(|t| t.chars().next().unwrap()).collect();
            let topic = planted_topic(doc).expect("topical evidence present");
            let expect: Vec<String> = headline_pattern(topic, &chars)
                .into_iter()
                .map(|c| c.to_string())
                .collect();
            assert_eq!(doc.headline, expect);
            assert!(chars.len() >= cfg.len_min && chars.len() <= cfg.len_max);
        }
        for doc in &test {
            assert_eq!(doc.score, Some(5));
        }
        for doc in &train {
            assert_eq!(doc.score, None);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            train: 20,
            test: 5,
            ..SynthConfig::default()
        };
        let (a_train, a_test) = generate(&cfg).unwrap();
        let (b_train, b_test) = generate(&cfg).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = SynthConfig::default();
        cfg.len_min = 4;
        assert!(generate(&cfg).is_err());
        let mut cfg = SynthConfig::default();
        cfg.shared_frac = 0.99;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn pools_are_disjoint() {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        for pool in TOPIC_POOLS.iter().chain([&SHARED_POOL]) {
            for c in pool.chars() {
                assert!(seen.insert(c), "character {c} appears in two pools");
            }
        }
    }
}
