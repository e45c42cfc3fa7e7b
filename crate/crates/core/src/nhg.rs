//! The baseline neural headline generator: shared character embeddings, a
//! bidirectional GRU encoder, an attention GRU decoder, teacher-forced
//! negative log-likelihood training, and greedy/beam decoding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttendCache, AttentionLayer};
use crate::checkpoint::{self, TensorEntry};
use crate::corpus::{BOS_ID, EOS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::gru::{encode_bidirectional, encoder_backward, EncoderOutputs, GruCell, GruStepCache};
use crate::nn::{self, ParamModel, Parameter, Sgd};

pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NhgConfig {
    pub vocab_size: usize,
    /// Embedding size E.
    pub emb_size: usize,
    /// Encoder hidden size H per direction.
    pub enc_hidden: usize,
    /// Decoder hidden size.
    pub dec_hidden: usize,
    /// Attention size A.
    pub attn_size: usize,
    /// When false the decoder consumes the static mean-pooled feature at
    /// every step instead of a per-step attention vector.
    pub attention: bool,
    /// When false the GRU cells run the bias-free formulation exactly.
    pub bias: bool,
}

impl NhgConfig {
    pub fn new(vocab_size: usize, emb_size: usize, enc_hidden: usize, dec_hidden: usize) -> Self {
        NhgConfig {
            vocab_size,
            emb_size,
            enc_hidden,
            dec_hidden,
            attn_size: dec_hidden,
            attention: true,
            bias: true,
        }
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("emb_size", self.emb_size),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("attn_size", self.attn_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.vocab_size <= crate::corpus::UNK_ID {
            return Err(Error::Config(
                "vocab_size must cover the reserved ids".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub max_len: usize,
    pub beam_width: usize,
    pub length_norm: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_len: 32,
            beam_width: 1,
            length_norm: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NhgModel {
    cfg: NhgConfig,
    embedding: Parameter,
    enc_fwd: GruCell,
    enc_bwd: GruCell,
    dec: GruCell,
    attention: AttentionLayer,
    init_proj: Parameter,
    init_bias: Parameter,
    out_proj: Parameter,
    out_bias: Parameter,
    /// Set while a replica shares a frozen embedding table.
    pub freeze_embedding: bool,
}

/// Per-step activations retained for the backward pass.
struct StepTrace {
    y_prev: usize,
    target: usize,
    attn: Option<AttendCache>,
    gru: GruStepCache,
    new_state: Vec<f64>,
    probs: Vec<f64>,
}

/// Everything forward_pair computed, consumed by backward_pair.
pub struct PairTrace {
    enc: EncoderOutputs,
    s0: Vec<f64>,
    steps: Vec<StepTrace>,
    pub loss: f64,
}

impl NhgModel {
    pub fn new(cfg: NhgConfig, seed: u64) -> Result<NhgModel> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let two_h = 2 * cfg.enc_hidden;
        let mut embedding = Parameter::uniform(
            "embedding",
            cfg.vocab_size,
            cfg.emb_size,
            INIT_SCALE,
            &mut rng,
        );
        embedding.row_mut(PAD_ID).iter_mut().for_each(|v| *v = 0.0);
        let enc_fwd = GruCell::new(
            "encoder.fwd",
            cfg.emb_size,
            cfg.enc_hidden,
            cfg.bias,
            INIT_SCALE,
            &mut rng,
        );
        let enc_bwd = GruCell::new(
            "encoder.bwd",
            cfg.emb_size,
            cfg.enc_hidden,
            cfg.bias,
            INIT_SCALE,
            &mut rng,
        );
        let dec = GruCell::new(
            "decoder",
            two_h + cfg.emb_size,
            cfg.dec_hidden,
            cfg.bias,
            INIT_SCALE,
            &mut rng,
        );
        let attention = AttentionLayer::new(
            "attention",
            cfg.attn_size,
            cfg.dec_hidden,
            two_h,
            cfg.emb_size,
            INIT_SCALE,
            &mut rng,
        );
        let init_proj = Parameter::uniform("init.P", cfg.dec_hidden, two_h, INIT_SCALE, &mut rng);
        let init_bias = Parameter::zeros("init.b", cfg.dec_hidden, 1);
        let out_proj = Parameter::uniform(
            "output.W",
            cfg.vocab_size,
            cfg.dec_hidden,
            INIT_SCALE,
            &mut rng,
        );
        let out_bias = Parameter::zeros("output.b", cfg.vocab_size, 1);
        Ok(NhgModel {
            cfg,
            embedding,
            enc_fwd,
            enc_bwd,
            dec,
            attention,
            init_proj,
            init_bias,
            out_proj,
            out_bias,
            freeze_embedding: false,
        })
    }

    /// All-zero weights; used by degenerate-case tests.
    pub fn zeros(cfg: NhgConfig) -> Result<NhgModel> {
        let mut model = NhgModel::new(cfg, 0)?;
        for p in model.all_params_mut() {
            p.value_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(model)
    }

    pub fn config(&self) -> &NhgConfig {
        &self.cfg
    }

    fn check_ids(&self, ids: &[usize], what: &str) -> Result<()> {
        for (position, &id) in ids.iter().enumerate() {
            if id >= self.cfg.vocab_size {
                return Err(Error::IdOutOfRange {
                    id,
                    vocab_size: self.cfg.vocab_size,
                    position,
                });
            }
        }
        if ids.is_empty() {
            return Err(Error::EmptyInput(what.into()));
        }
        Ok(())
    }

    /// Embedding lookup. The PAD row is pinned to zeros: lookups return a
    /// zero vector and the backward pass never writes to it.
    fn embed(&self, id: usize) -> Vec<f64> {
        if id == PAD_ID {
            vec![0.0; self.cfg.emb_size]
        } else {
            self.embedding.row(id).to_vec()
        }
    }

    /// Embeds the input ids and runs the bidirectional encoder.
    pub fn encode(&self, x_ids: &[usize]) -> Result<EncoderOutputs> {
        self.check_ids(x_ids, "encoder input")?;
        let xs: Vec<Vec<f64>> = x_ids.iter().map(|&id| self.embed(id)).collect();
        encode_bidirectional(&self.enc_fwd, &self.enc_bwd, &xs)
    }

    /// Initial decoder state: tanh(P v + b).
    pub fn decoder_init(&self, enc: &EncoderOutputs) -> Vec<f64> {
        let mut pre = self.init_proj.matvec(&enc.v);
        nn::add_assign(&mut pre, self.init_bias.value());
        nn::tanh_vec(&pre)
    }

    /// One decoding step: attends over the encoder outputs from the current
    /// state and the previous token, advances the decoder GRU, and projects
    /// to vocabulary logits. Returns (logits, new_state).
    pub fn decode_step(
        &self,
        state: &[f64],
        y_prev: usize,
        enc: &EncoderOutputs,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (logits, new_state, _, _) = self.decode_step_full(state, y_prev, enc)?;
        Ok((logits, new_state))
    }

    /// decode_step plus the attention weights and caches used in training.
    fn decode_step_full(
        &self,
        state: &[f64],
        y_prev: usize,
        enc: &EncoderOutputs,
    ) -> Result<(Vec<f64>, Vec<f64>, Option<AttendCache>, GruStepCache)> {
        if y_prev >= self.cfg.vocab_size {
            return Err(Error::IdOutOfRange {
                id: y_prev,
                vocab_size: self.cfg.vocab_size,
                position: 0,
            });
        }
        if state.len() != self.cfg.dec_hidden {
            return Err(Error::ShapeMismatch {
                context: "decode_step state".into(),
                expected: format!("{}", self.cfg.dec_hidden),
                got: format!("{}", state.len()),
            });
        }
        let emb_prev = self.embed(y_prev);
        let (v_t, attn_cache) = if self.cfg.attention {
            let (v_t, cache) = self.attention.attend_cached(&enc.h, state, &emb_prev)?;
            (v_t, Some(cache))
        } else {
            (enc.v.clone(), None)
        };
        let input = nn::concat(&v_t, &emb_prev);
        let (new_state, gru_cache) = self.dec.step_cached(&input, state)?;
        let mut logits = self.out_proj.matvec(&new_state);
        nn::add_assign(&mut logits, self.out_bias.value());
        Ok((logits, new_state, attn_cache, gru_cache))
    }

    /// Attention weights actually applied at a step; uniform when the
    /// static mean-pooled feature is in use.
    pub fn step_weights(cache: &Option<AttendCache>, src_len: usize) -> Vec<f64> {
        match cache {
            Some(c) => c.weights.clone(),
            None => vec![1.0 / src_len as f64; src_len],
        }
    }

    /// Teacher-forced forward pass over one (x, y) pair. `y_ids` must end
    /// with EOS. Returns the summed NLL and the trace for backward.
    pub fn forward_pair(&self, x_ids: &[usize], y_ids: &[usize]) -> Result<(f64, PairTrace)> {
        self.check_ids(y_ids, "target sequence")?;
        if *y_ids.last().unwrap() != EOS_ID {
            return Err(Error::InvalidArgument(
                "target sequence must end with EOS".into(),
            ));
        }
        let enc = self.encode(x_ids)?;
        let s0 = self.decoder_init(&enc);
        let mut state = s0.clone();
        let mut steps = Vec::with_capacity(y_ids.len());
        let mut loss = 0.0;
        let mut y_prev = BOS_ID;
        for &target in y_ids {
            let (logits, new_state, attn, gru) = self.decode_step_full(&state, y_prev, &enc)?;
            let probs = nn::softmax(&logits)?;
            loss += nn::cross_entropy(&probs, target)?;
            steps.push(StepTrace {
                y_prev,
                target,
                attn,
                gru,
                new_state: new_state.clone(),
                probs,
            });
            state = new_state;
            y_prev = target;
        }
        Ok((
            loss,
            PairTrace {
                enc,
                s0,
                steps,
                loss,
            },
        ))
    }

    /// Accumulates gradients of `scale * loss` for a traced pair.
    pub fn backward_pair(&mut self, x_ids: &[usize], trace: &PairTrace, scale: f64) {
        let two_h = 2 * self.cfg.enc_hidden;
        let n_pos = trace.enc.h.len();
        let mut dstate = vec![0.0; self.cfg.dec_hidden];
        let mut dv = vec![0.0; two_h];
        let mut dh = vec![vec![0.0; two_h]; n_pos];

        for step in trace.steps.iter().rev() {
            // d softmax-cross-entropy: probs - onehot(target)
            let mut dlogits = step.probs.clone();
            dlogits[step.target] -= 1.0;
            dlogits.iter_mut().for_each(|g| *g *= scale);

            self.out_proj.accumulate_outer(&dlogits, &step.new_state);
            self.out_bias.accumulate(&dlogits);
            let mut dnew = self.out_proj.matvec_transpose(&dlogits);
            nn::add_assign(&mut dnew, &dstate);

            let (dinput, dprev) = self.dec.backward_step(&step.gru, &dnew);
            let (dv_t, demb_slice) = dinput.split_at(two_h);
            let mut demb = demb_slice.to_vec();
            dstate = dprev;

            match &step.attn {
                Some(cache) => {
                    let (dh_step, ddec, demb2) =
                        self.attention.backward(cache, &trace.enc.h, dv_t);
                    for (acc, g) in dh.iter_mut().zip(&dh_step) {
                        nn::add_assign(acc, g);
                    }
                    nn::add_assign(&mut dstate, &ddec);
                    nn::add_assign(&mut demb, &demb2);
                }
                None => nn::add_assign(&mut dv, dv_t),
            }
            if step.y_prev != PAD_ID {
                self.embedding.accumulate_row(step.y_prev, &demb);
            }
        }

        // decoder init: s0 = tanh(P v + b)
        let dpre: Vec<f64> = dstate
            .iter()
            .zip(&trace.s0)
            .map(|(d, s)| d * (1.0 - s * s))
            .collect();
        self.init_proj.accumulate_outer(&dpre, &trace.enc.v);
        self.init_bias.accumulate(&dpre);
        nn::add_assign(&mut dv, &self.init_proj.matvec_transpose(&dpre));

        let dxs = encoder_backward(&mut self.enc_fwd, &mut self.enc_bwd, &trace.enc, &dh, &dv);
        for (&id, dx) in x_ids.iter().zip(&dxs) {
            if id != PAD_ID {
                self.embedding.accumulate_row(id, dx);
            }
        }
    }

    /// Total negative log-likelihood -Σ_t log p(y_t | x, y_<t) with teacher
    /// forcing; the first step conditions on BOS.
    pub fn sequence_nll(&self, x_ids: &[usize], y_ids: &[usize]) -> Result<f64> {
        Ok(self.forward_pair(x_ids, y_ids)?.0)
    }

    /// One optimizer step on the mean NLL of a batch. Returns the pre-step
    /// mean loss.
    pub fn train_step(&mut self, batch: &[(Vec<usize>, Vec<usize>)], opt: &Sgd) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("training batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (i, (x, y)) in batch.iter().enumerate() {
            let (loss, trace) = self.forward_pair(x, y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("train_step pair {i} (|x|={}, |y|={})", x.len(), y.len()),
                });
            }
            total += loss;
            self.backward_pair(x, &trace, scale);
        }
        if self.freeze_embedding {
            self.embedding.zero_grad();
        }
        opt.step(&mut self.params_mut());
        Ok(total * scale)
    }

    /// Greedy decoding: repeatedly takes the argmax next token (ties go to
    /// the lowest id), stopping at EOS or `max_len`. EOS is not returned.
    pub fn generate_greedy(&self, x_ids: &[usize], cfg: &DecodeConfig) -> Result<Vec<usize>> {
        Ok(self.generate_greedy_traced(x_ids, cfg)?.0)
    }

    /// Greedy decoding that also reports per-step attention weights.
    pub fn generate_greedy_traced(
        &self,
        x_ids: &[usize],
        cfg: &DecodeConfig,
    ) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        let enc = self.encode(x_ids)?;
        let mut state = self.decoder_init(&enc);
        let mut y_prev = BOS_ID;
        let mut out = Vec::new();
        let mut weights = Vec::new();
        for _ in 0..cfg.max_len {
            let (logits, new_state, attn, _) = self.decode_step_full(&state, y_prev, &enc)?;
            weights.push(Self::step_weights(&attn, enc.h.len()));
            let tok = argmax_lowest(&logits);
            if tok == EOS_ID {
                break;
            }
            out.push(tok);
            y_prev = tok;
            state = new_state;
        }
        Ok((out, weights))
    }

    /// Beam search over cumulative log-probability. Finished hypotheses are
    /// retired when they take EOS; the highest-scoring finished hypothesis
    /// wins, falling back to the best unfinished one at max_len. Ties break
    /// on score first, then lexicographically smaller id sequence.
    pub fn generate_beam(&self, x_ids: &[usize], cfg: &DecodeConfig) -> Result<Vec<usize>> {
        if cfg.beam_width < 1 {
            return Err(Error::InvalidArgument("beam_width must be >= 1".into()));
        }
        struct Hyp {
            ids: Vec<usize>,
            score: f64,
            /// Count of log-prob terms in `score` (emitted tokens + EOS).
            terms: usize,
            state: Vec<f64>,
        }
        let key = |score: f64, terms: usize, length_norm: bool| {
            if length_norm {
                score / terms.max(1) as f64
            } else {
                score
            }
        };
        let enc = self.encode(x_ids)?;
        let mut live = vec![Hyp {
            ids: Vec::new(),
            score: 0.0,
            terms: 0,
            state: self.decoder_init(&enc),
        }];
        let mut finished: Vec<(f64, usize, Vec<usize>)> = Vec::new();
        // unfinished hypotheses that ran out of length budget
        let mut exhausted: Vec<(f64, usize, Vec<usize>)> = Vec::new();
        while !live.is_empty() {
            let mut pool: Vec<Hyp> = Vec::with_capacity(live.len() * self.cfg.vocab_size);
            for hyp in &live {
                let y_prev = hyp.ids.last().copied().unwrap_or(BOS_ID);
                let (logits, new_state) = self.decode_step(&hyp.state, y_prev, &enc)?;
                let logp = nn::log_softmax(&logits)?;
                for (tok, lp) in logp.iter().enumerate() {
                    let mut ids = hyp.ids.clone();
                    ids.push(tok);
                    pool.push(Hyp {
                        ids,
                        score: hyp.score + lp,
                        terms: hyp.terms + 1,
                        state: new_state.clone(),
                    });
                }
            }
            pool.sort_by(|a, b| {
                key(b.score, b.terms, cfg.length_norm)
                    .partial_cmp(&key(a.score, a.terms, cfg.length_norm))
                    .expect("finite beam scores")
                    .then_with(|| a.ids.cmp(&b.ids))
            });
            pool.truncate(cfg.beam_width);
            live = Vec::new();
            for hyp in pool {
                if *hyp.ids.last().unwrap() == EOS_ID {
                    let mut ids = hyp.ids;
                    ids.pop();
                    finished.push((hyp.score, hyp.terms, ids));
                } else if hyp.ids.len() < cfg.max_len {
                    live.push(hyp);
                } else {
                    exhausted.push((hyp.score, hyp.terms, hyp.ids));
                }
            }
        }
        let best_of = |items: &mut Vec<(f64, usize, Vec<usize>)>| -> Option<Vec<usize>> {
            items.sort_by(|a, b| {
                key(b.0, b.1, cfg.length_norm)
                    .partial_cmp(&key(a.0, a.1, cfg.length_norm))
                    .expect("finite beam scores")
                    .then_with(|| a.2.cmp(&b.2))
            });
            items.first().map(|(_, _, ids)| ids.clone())
        };
        if let Some(ids) = best_of(&mut finished) {
            return Ok(ids);
        }
        best_of(&mut exhausted)
            .ok_or_else(|| Error::EmptyInput("beam search produced no hypothesis".into()))
    }

    /// Every trainable parameter, shapes and values, for serialization.
    pub fn all_params(&self) -> Vec<&Parameter> {
        let mut ps = vec![&self.embedding];
        ps.extend(self.enc_fwd.params_all());
        ps.extend(self.enc_bwd.params_all());
        ps.extend(self.dec.params_all());
        ps.extend(self.attention.params());
        ps.extend([
            &self.init_proj,
            &self.init_bias,
            &self.out_proj,
            &self.out_bias,
        ]);
        ps
    }

    fn all_params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = vec![&mut self.embedding];
        ps.extend(self.enc_fwd.params_all_mut());
        ps.extend(self.enc_bwd.params_all_mut());
        ps.extend(self.dec.params_all_mut());
        ps.extend(self.attention.params_mut());
        ps.extend([
            &mut self.init_proj,
            &mut self.init_bias,
            &mut self.out_proj,
            &mut self.out_bias,
        ]);
        ps
    }

    pub fn zero_grads(&mut self) {
        for p in self.all_params_mut() {
            p.zero_grad();
        }
    }

    /// Serializes config + all tensors; the byte stream is also the
    /// provenance-hash input.
    pub fn to_bytes(&self, vocab_hash: &str, config_hash: &str) -> Result<Vec<u8>> {
        let header = serde_json::json!({
            "kind": "nhg-checkpoint",
            "config": self.cfg,
            "vocab_hash": vocab_hash,
            "config_hash": config_hash,
        });
        let tensors: Result<Vec<TensorEntry>> = self
            .all_params()
            .iter()
            .map(|p| TensorEntry::from_parameter(p))
            .collect();
        Ok(checkpoint::to_bytes(&header, &tensors?))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, vocab_hash: &str, config_hash: &str) -> Result<()> {
        let bytes = self.to_bytes(vocab_hash, config_hash)?;
        std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<(NhgModel, serde_json::Value)> {
        let (header, tensors) = checkpoint::from_bytes(bytes, path)?;
        if header.get("kind").and_then(|k| k.as_str()) != Some("nhg-checkpoint") {
            return Err(Error::Checkpoint {
                path: path.into(),
                msg: "not an nhg checkpoint".into(),
            });
        }
        let cfg: NhgConfig = serde_json::from_value(
            header
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Checkpoint {
                    path: path.into(),
                    msg: "header missing config".into(),
                })?,
        )
        .map_err(|e| Error::Checkpoint {
            path: path.into(),
            msg: format!("bad config: {e}"),
        })?;
        let mut model = NhgModel::new(cfg, 0)?;
        model.load_tensors(&tensors, path)?;
        Ok((model, header))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<(NhgModel, serde_json::Value)> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        NhgModel::from_bytes(&bytes, &path.display().to_string())
    }

    pub(crate) fn load_tensors(&mut self, tensors: &[TensorEntry], path: &str) -> Result<()> {
        use std::collections::HashMap;
        let mut by_name: HashMap<&str, &TensorEntry> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for p in self.all_params_mut() {
            let t = by_name.remove(p.name()).ok_or_else(|| Error::Checkpoint {
                path: path.into(),
                msg: format!("missing tensor {}", p.name()),
            })?;
            if t.rows != p.rows() || t.cols != p.cols() {
                return Err(Error::Checkpoint {
                    path: path.into(),
                    msg: format!(
                        "tensor {} has shape {}x{}, expected {}x{}",
                        t.name,
                        t.rows,
                        t.cols,
                        p.rows(),
                        p.cols()
                    ),
                });
            }
            p.value_mut().copy_from_slice(&t.data);
            p.zero_grad();
        }
        if let Some(name) = by_name.keys().next() {
            return Err(Error::Checkpoint {
                path: path.into(),
                msg: format!("unexpected tensor {name}"),
            });
        }
        Ok(())
    }

    /// Tensors for a topic replica file; the embedding is omitted when it
    /// is shared (stored once at the topic-model level).
    pub(crate) fn replica_tensors(&self, include_embedding: bool) -> Result<Vec<TensorEntry>> {
        let params = self.all_params();
        let mut out = Vec::with_capacity(params.len());
        for p in params {
            if !include_embedding && p.name() == "embedding" {
                continue;
            }
            out.push(TensorEntry::from_parameter(p)?);
        }
        Ok(out)
    }

    pub(crate) fn load_replica_tensors(
        &mut self,
        tensors: &[TensorEntry],
        embedding: Option<&TensorEntry>,
        path: &str,
    ) -> Result<()> {
        let mut all: Vec<TensorEntry> = tensors.to_vec();
        if let Some(e) = embedding {
            all.push(e.clone());
        }
        self.load_tensors(&all, path)
    }

    pub(crate) fn embedding_entry(&self) -> Result<TensorEntry> {
        TensorEntry::from_parameter(&self.embedding)
    }
}

impl ParamModel for NhgModel {
    /// The trainable set honors the bias/attention flags; disabled pieces
    /// stay at their initial values.
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let attention_on = self.cfg.attention;
        let mut ps = vec![&mut self.embedding];
        ps.extend(self.enc_fwd.params_mut());
        ps.extend(self.enc_bwd.params_mut());
        ps.extend(self.dec.params_mut());
        if attention_on {
            ps.extend(self.attention.params_mut());
        }
        ps.extend([
            &mut self.init_proj,
            &mut self.init_bias,
            &mut self.out_proj,
            &mut self.out_bias,
        ]);
        ps
    }
}

/// Argmax with ties broken to the lowest index.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Runs `steps` optimizer steps over seeded-shuffled batches cycling
/// through `pairs`. Returns the per-step mean losses. The batch schedule is
/// a pure function of (pairs order, steps, batch_size, seed).
pub fn train_loop(
    model: &mut NhgModel,
    pairs: &[(Vec<usize>, Vec<usize>)],
    opt: &Sgd,
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::seq::SliceRandom;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if batch_size < 1 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut losses = Vec::with_capacity(steps);
    let log_every = (steps / 10).max(1);
    for step in 0..steps {
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(pairs[order[cursor]].clone());
            cursor += 1;
        }
        let loss = model.train_step(&batch, opt)?;
        if (step + 1) % log_every == 0 || step + 1 == steps {
            log::info!("step {}/{steps}: mean loss {loss:.6}", step + 1);
        }
        losses.push(loss);
    }
    Ok(losses)
}
