//! ROUGE-1, ROUGE-2, and ROUGE-L F-scores over token sequences, with
//! corpus-level macro averaging and a per-topic breakdown.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// F-scores as percentages, plus an optional per-topic breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RougeReport {
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    pub n: usize,
    pub per_topic: BTreeMap<usize, TopicRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicRow {
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    pub n: usize,
}

fn f_score(overlap: f64, cand_total: f64, ref_total: f64) -> f64 {
    if cand_total == 0.0 || ref_total == 0.0 {
        return 0.0;
    }
    let p = overlap / cand_total;
    let r = overlap / ref_total;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// ROUGE-N F-score: clipped n-gram overlap between candidate and reference.
pub fn rouge_n_f<T: Eq + std::hash::Hash>(candidate: &[T], reference: &[T], n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidArgument("rouge-n needs n >= 1".into()));
    }
    if reference.is_empty() {
        return Err(Error::EmptyInput("rouge reference".into()));
    }
    if candidate.len() < n || reference.len() < n {
        return Ok(0.0);
    }
    let mut ref_counts: HashMap<&[T], usize> = HashMap::new();
    for g in reference.windows(n) {
        *ref_counts.entry(g).or_insert(0) += 1;
    }
    let mut cand_counts: HashMap<&[T], usize> = HashMap::new();
    let mut overlap = 0usize;
    for g in candidate.windows(n) {
        let seen = cand_counts.entry(g).or_insert(0);
        if *seen < ref_counts.get(g).copied().unwrap_or(0) {
            overlap += 1;
        }
        *seen += 1;
    }
    let cand_total = candidate.len() + 1 - n;
    let ref_total = reference.len() + 1 - n;
    Ok(f_score(overlap as f64, cand_total as f64, ref_total as f64))
}

/// Length of the longest common subsequence, bottom-up DP.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-score from the LCS length (β = 1).
pub fn rouge_l_f<T: Eq>(candidate: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("rouge reference".into()));
    }
    let l = lcs_len(candidate, reference) as f64;
    Ok(f_score(l, candidate.len() as f64, reference.len() as f64))
}

/// One scored example: candidate tokens, reference tokens, optional topic.
pub type ScoredPair = (Vec<String>, Vec<String>, Option<usize>);

/// Macro-averaged corpus report: the mean per-example F, x100, overall and
/// per topic.
pub fn evaluate(pairs: &[ScoredPair]) -> Result<RougeReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("evaluate over empty pair list".into()));
    }
    struct Acc {
        r1: f64,
        r2: f64,
        rl: f64,
        n: usize,
    }
    impl Acc {
        fn new() -> Acc {
            Acc {
                r1: 0.0,
                r2: 0.0,
                rl: 0.0,
                n: 0,
            }
        }
        fn add(&mut self, r1: f64, r2: f64, rl: f64) {
            self.r1 += r1;
            self.r2 += r2;
            self.rl += rl;
            self.n += 1;
        }
    }
    let mut overall = Acc::new();
    let mut topics: BTreeMap<usize, Acc> = BTreeMap::new();
    for (cand, reference, topic) in pairs {
        let r1 = rouge_n_f(cand, reference, 1)?;
        let r2 = rouge_n_f(cand, reference, 2)?;
        let rl = rouge_l_f(cand, reference)?;
        overall.add(r1, r2, rl);
        if let Some(t) = topic {
            topics.entry(*t).or_insert_with(Acc::new).add(r1, r2, rl);
        }
    }
    let pct = |sum: f64, n: usize| 100.0 * sum / n as f64;
    Ok(RougeReport {
        rouge1_f: pct(overall.r1, overall.n),
        rouge2_f: pct(overall.r2, overall.n),
        rouge_l_f: pct(overall.rl, overall.n),
        n: overall.n,
        per_topic: topics
            .into_iter()
            .map(|(t, a)| {
                (
                    t,
                    TopicRow {
                        rouge1_f: pct(a.r1, a.n),
                        rouge2_f: pct(a.r2, a.n),
                        rouge_l_f: pct(a.rl, a.n),
                        n: a.n,
                    },
                )
            })
            .collect(),
    })
}

impl RougeReport {
    /// Aligned plain-text table, one overall row plus one row per topic.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>8} {:>8} {:>8} {:>8}\n",
            "", "Rouge-1", "Rouge-2", "Rouge-L", "N"
        ));
        out.push_str(&format!(
            "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>8}\n",
            "overall", self.rouge1_f, self.rouge2_f, self.rouge_l_f, self.n
        ));
        for (topic, row) in &self.per_topic {
            out.push_str(&format!(
                "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>8}\n",
                format!("topic {topic}"),
                row.rouge1_f,
                row.rouge2_f,
                row.rouge_l_f,
                row.n
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn seq() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            proptest::sample::select(vec!["a".to_string(), "b".to_string(), "c".to_string()]),
            1..10,
        )
    }

    proptest! {
        #[test]
        fn f_scores_are_symmetric(a in seq(), b in seq()) {
            for n in 1..=2 {
                let ab = rouge_n_f(&a, &b, n).unwrap();
                let ba = rouge_n_f(&b, &a, n).unwrap();
                prop_assert!((ab - ba).abs() < 1e-12);
            }
            let ab = rouge_l_f(&a, &b).unwrap();
            let ba = rouge_l_f(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn scores_stay_in_unit_interval(a in seq(), b in seq()) {
            for n in 1..=3 {
                let f = rouge_n_f(&a, &b, n).unwrap();
                prop_assert!((0.0..=1.0).contains(&f));
            }
            let f = rouge_l_f(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn appending_reference_token_never_reduces_unigram_overlap(
            a in seq(), b in seq()
        ) {
            // recall numerator is nondecreasing when the candidate gains a
            // token drawn from the reference
            let count_overlap = |cand: &[String], refr: &[String]| {
                let mut rc = std::collections::HashMap::new();
                for t in refr { *rc.entry(t.clone()).or_insert(0usize) += 1; }
                let mut cc = std::collections::HashMap::new();
                let mut o = 0;
                for t in cand {
                    let seen = cc.entry(t.clone()).or_insert(0usize);
                    if *seen < rc.get(t).copied().unwrap_or(0) { o += 1; }
                    *seen += 1;
                }
                o
            };
            let before = count_overlap(&a, &b);
            let mut extended = a.clone();
            extended.push(b[0].clone());
            let after = count_overlap(&extended, &b);
            prop_assert!(after >= before);
        }
    }
}
