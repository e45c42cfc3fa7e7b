//! Corpus ingestion: character-level tokenization, vocabulary building,
//! id encoding, score filtering, and JSONL loading.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// One text/headline pair, tokenized to characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub text: Vec<String>,
    pub headline: Vec<String>,
    pub score: Option<u8>,
    pub topic: Option<usize>,
}

/// Train/dev/test split of a corpus.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

/// Splits text into user-visible characters (grapheme clusters).
/// Whitespace runs collapse to a single space token; order is preserved.
pub fn tokenize_chars(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut in_space = false;
    for g in text.graphemes(true) {
        if g.chars().all(char::is_whitespace) {
            if !in_space {
                tokens.push(" ".to_string());
                in_space = true;
            }
        } else {
            tokens.push(g.to_string());
            in_space = false;
        }
    }
    tokens
}

/// Validates raw bytes as UTF-8, reporting the byte offset on failure.
pub fn text_from_bytes(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| Error::InvalidUtf8 {
        offset: e.valid_up_to(),
    })
}

/// Token/id bijection with fixed reserved entries PAD=0, BOS=1, EOS=2, UNK=3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Assigns ids to every token with corpus frequency >= `min_count`,
    /// in descending frequency order, ties broken by token sort order.
    pub fn build(docs: &[Document], min_count: usize) -> Result<Vocabulary> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let min_count = min_count.max(1);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for tok in doc.text.iter().chain(doc.headline.iter()) {
                if RESERVED_TOKENS.contains(&tok.as_str()) {
                    continue;
                }
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Ok(Vocabulary::from_tokens(id_to_token))
    }

    fn from_tokens(id_to_token: Vec<String>) -> Vocabulary {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    /// In-vocab tokens map to their ids, everything else to UNK.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.token_to_id.get(t.as_str()).copied().unwrap_or(UNK_ID))
            .collect()
    }

    /// Inverse of encode; reserved ids render as their literal forms.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .enumerate()
            .map(|(position, &id)| {
                self.id_to_token
                    .get(id)
                    .cloned()
                    .ok_or(Error::IdOutOfRange {
                        id,
                        vocab_size: self.len(),
                        position,
                    })
            })
            .collect()
    }

    /// Renders an id sequence back to a string (decode + join).
    pub fn render(&self, ids: &[usize]) -> Result<String> {
        Ok(self.decode(ids)?.concat())
    }

    /// SHA-256 over the canonical token listing; artifact files embed this
    /// so stale vocabularies are rejected at load time.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for tok in &self.id_to_token {
            hasher.update(tok.as_bytes());
            hasher.update(b"\n");
        }
        hex(&hasher.finalize())
    }

    /// Plain-text format: one token per line, line number = id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for tok in &self.id_to_token {
            if tok.contains('\n') || tok.contains('\r') {
                return Err(Error::InvalidArgument(format!(
                    "token {tok:?} cannot be stored in a line-oriented vocabulary file"
                )));
            }
            out.extend_from_slice(tok.as_bytes());
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocabulary> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = text_from_bytes(&bytes)?;
        let tokens: Vec<String> = text
            .split('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .take_while(|l| !l.is_empty())
            .map(|l| l.to_string())
            .collect();
        if tokens.len() < RESERVED_TOKENS.len() {
            return Err(Error::Checkpoint {
                path: path.display().to_string(),
                msg: "vocabulary file shorter than the reserved prefix".into(),
            });
        }
        for (i, expected) in RESERVED_TOKENS.iter().enumerate() {
            if tokens[i] != *expected {
                return Err(Error::Checkpoint {
                    path: path.display().to_string(),
                    msg: format!("reserved token {i} is {:?}, expected {expected:?}", tokens[i]),
                });
            }
        }
        Ok(Vocabulary::from_tokens(tokens))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}

/// Keeps exactly the documents with a score present and >= `min_score`.
/// Unscored documents are treated as unannotated training data and dropped.
pub fn filter_by_score(docs: &[Document], min_score: u8) -> Vec<Document> {
    docs.iter()
        .filter(|d| d.score.is_some_and(|s| s >= min_score))
        .cloned()
        .collect()
}

#[derive(Deserialize)]
struct RawDoc {
    text: Option<String>,
    headline: Option<String>,
    score: Option<i64>,
    topic: Option<i64>,
}

fn doc_from_json(line_no: usize, line: &str) -> Result<Document> {
    let raw: RawDoc = serde_json::from_str(line).map_err(|e| Error::CorpusLine {
        line: line_no,
        msg: e.to_string(),
    })?;
    let text = raw.text.ok_or_else(|| Error::MissingField {
        line: line_no,
        field: "text".into(),
    })?;
    let headline = raw.headline.ok_or_else(|| Error::MissingField {
        line: line_no,
        field: "headline".into(),
    })?;
    let score = match raw.score {
        None => None,
        Some(s) if (1..=5).contains(&s) => Some(s as u8),
        Some(s) => return Err(Error::ScoreOutOfRange { line: line_no, value: s }),
    };
    let topic = match raw.topic {
        None => None,
        Some(t) if t >= 0 => Some(t as usize),
        Some(t) => {
            return Err(Error::CorpusLine {
                line: line_no,
                msg: format!("topic {t} is negative"),
            })
        }
    };
    let text = tokenize_chars(&text);
    let headline = tokenize_chars(&headline);
    if text.is_empty() {
        return Err(Error::CorpusLine {
            line: line_no,
            msg: "text is empty".into(),
        });
    }
    if headline.is_empty() {
        return Err(Error::CorpusLine {
            line: line_no,
            msg: "headline is empty".into(),
        });
    }
    Ok(Document {
        text,
        headline,
        score,
        topic,
    })
}

/// Loads a JSONL corpus: one object per line with fields `text` (required),
/// `headline` (required), `score` (1-5, optional), `topic` (optional).
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = text_from_bytes(&bytes)?;
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        docs.push(doc_from_json(i + 1, line)?);
    }
    Ok(docs)
}

/// Serializes documents back to the JSONL corpus format.
pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for doc in docs {
        out.push_str(&doc_to_json(doc));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn doc_to_json(doc: &Document) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("text".into(), doc.text.concat().into());
    obj.insert("headline".into(), doc.headline.concat().into());
    if let Some(s) = doc.score {
        obj.insert("score".into(), s.into());
    }
    if let Some(t) = doc.topic {
        obj.insert("topic".into(), t.into());
    }
    serde_json::Value::Object(obj).to_string()
}
