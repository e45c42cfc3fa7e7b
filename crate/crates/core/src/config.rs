//! Run configuration: a flat `key = value` text file, overridable by
//! command-line flags. Unknown keys and out-of-range values are rejected.

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::sha256_hex;
use crate::error::{Error, Result};

macro_rules! run_config {
    ($( $key:ident : $ty:ty = $default:expr, [$($range:tt)*] ;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $(pub $key: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($key: $default,)* }
            }
        }

        impl RunConfig {
            /// Applies one `key = value` assignment.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = value.parse::<$ty>().map_err(|_| {
                            Error::Config(format!(
                                "bad value {value:?} for key `{key}`"
                            ))
                        })?;
                        Ok(())
                    })*
                    _ => Err(Error::Config(format!("unknown config key `{key}`"))),
                }
            }

            /// Canonical listing, one `key = value` per line in declaration
            /// order; hashed for provenance.
            pub fn canonical(&self) -> String {
                let mut out = String::new();
                $(let _ = writeln!(out, "{} = {}", stringify!($key), self.$key);)*
                out
            }

            pub fn validate(&self) -> Result<()> {
                $(run_config!(@check self, $key, $($range)*);)*
                Ok(())
            }
        }
    };

    (@check $self:ident, $key:ident, ) => {};
    (@check $self:ident, $key:ident, min $lo:expr) => {
        if $self.$key < $lo {
            return Err(Error::Config(format!(
                "config `{}` = {} is below the minimum {}",
                stringify!($key), $self.$key, $lo
            )));
        }
    };
    (@check $self:ident, $key:ident, range $lo:expr, $hi:expr) => {
        if $self.$key < $lo || $self.$key > $hi {
            return Err(Error::Config(format!(
                "config `{}` = {} is outside [{}, {}]",
                stringify!($key), $self.$key, $lo, $hi
            )));
        }
    };
}

run_config! {
    // LDA
    topics: usize = 5, [min 1];
    alpha: f64 = 0.0, [range 0.0, 1e6];            // 0 = auto: 50/K
    beta: f64 = 0.01, [range 1e-9, 1e6];
    lda_iters: usize = 200, [min 1];
    lda_seed: u64 = 0, [];
    fold_in_iters: usize = 25, [min 1];
    fold_in_seed: u64 = 0, [];

    // model
    emb_size: usize = 32, [min 1];
    enc_hidden: usize = 64, [min 1];
    dec_hidden: usize = 128, [min 1];
    attn_size: usize = 0, [];                      // 0 = use dec_hidden
    attention: bool = true, [];
    bias: bool = true, [];
    fork_embeddings: bool = false, [];
    init_seed: u64 = 7, [];

    // training
    lr: f64 = 0.1, [range 0.0, 100.0];
    clip: f64 = 5.0, [range 1e-9, 1e9];
    batch: usize = 16, [min 1];
    baseline_steps: usize = 20000, [];
    topic_steps: usize = 2000, [];
    train_seed: u64 = 42, [];

    // data
    min_count: usize = 1, [min 1];
    min_score: usize = 3, [range 1, 5];

    // decoding
    max_len: usize = 32, [min 1];
    beam: usize = 1, [min 1];

    // synth corpus
    synth_train: usize = 3000, [min 1];
    synth_test: usize = 300, [min 1];
    synth_seed: u64 = 11, [];
    synth_len_min: usize = 10, [min 8];
    synth_len_max: usize = 16, [min 8];
    synth_shared_frac: f64 = 0.5, [range 0.0, 0.9];
}

impl RunConfig {
    /// Loads `key = value` lines; `#` starts a comment, blank lines are
    /// skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    /// Attention size with the "0 means decoder hidden size" default applied.
    pub fn effective_attn_size(&self) -> usize {
        if self.attn_size == 0 {
            self.dec_hidden
        } else {
            self.attn_size
        }
    }

    /// Dirichlet document-topic prior; 0 selects the 50/K default.
    pub fn effective_alpha(&self) -> f64 {
        if self.alpha == 0.0 {
            50.0 / self.topics as f64
        } else {
            self.alpha
        }
    }

    pub fn nhg_config(&self, vocab_size: usize) -> crate::nhg::NhgConfig {
        crate::nhg::NhgConfig {
            vocab_size,
            emb_size: self.emb_size,
            enc_hidden: self.enc_hidden,
            dec_hidden: self.dec_hidden,
            attn_size: self.effective_attn_size(),
            attention: self.attention,
            bias: self.bias,
        }
    }

    pub fn decode_config(&self) -> crate::nhg::DecodeConfig {
        crate::nhg::DecodeConfig {
            max_len: self.max_len,
            beam_width: self.beam,
            length_norm: false,
        }
    }

    pub fn synth_config(&self) -> crate::synth::SynthConfig {
        crate::synth::SynthConfig {
            train: self.synth_train,
            test: self.synth_test,
            len_min: self.synth_len_min,
            len_max: self.synth_len_max,
            shared_frac: self.synth_shared_frac,
            seed: self.synth_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_hash_is_stable() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.hash(), RunConfig::default().hash());
        assert_eq!(cfg.topics, 5);
        assert_eq!(cfg.baseline_steps / cfg.topic_steps, 10);
        assert_eq!(cfg.effective_alpha(), 10.0); // 50/K at K=5
        assert_eq!(cfg.effective_attn_size(), cfg.dec_hidden);
    }

    #[test]
    fn set_and_reject() {
        let mut cfg = RunConfig::default();
        cfg.set("topics", "3").unwrap();
        assert_eq!(cfg.topics, 3);
        cfg.set("lr", "0.25").unwrap();
        assert!(cfg.set("frobnicate", "1").is_err());
        assert!(cfg.set("topics", "many").is_err());
    }

    #[test]
    fn range_validation() {
        let mut cfg = RunConfig::default();
        cfg.min_score = 9;
        assert!(cfg.validate().is_err());
        cfg.min_score = 3;
        cfg.batch = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn file_roundtrip_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\ntopics = 3\nlr = 0.5  # inline\n\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.topics, 3);
        assert_eq!(cfg.lr, 0.5);

        std::fs::write(&path, "unknown = 1\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
        std::fs::write(&path, "topics\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn hash_tracks_values() {
        let mut cfg = RunConfig::default();
        let h0 = cfg.hash();
        cfg.topics = 4;
        assert_ne!(h0, cfg.hash());
    }
}
