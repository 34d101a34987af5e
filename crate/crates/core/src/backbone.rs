//! Encoder-decoder backbone producing sentence and prompt representations.
//!
//! The encoder reads the trigger-marked sentence. The decoder is run twice
//! over the encoder states, each time as a single bidirectional pass: once on
//! the sentence itself (context states) and once on the prompt template
//! (prompt states). No text is ever generated.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution};
use serde::{Deserialize, Serialize};

use crate::corpus::{TRIGGER_CLOSE, TRIGGER_OPEN};
use crate::error::{Error, Result};
use crate::graph::{ParamId, ParamStore, Tape, Var};

pub const UNK: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_encoder_len: usize,
    pub max_decoder_len: usize,
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_encoder_len: 500,
            max_decoder_len: 80,
            dropout: 0.1,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if self.max_encoder_len == 0 || self.max_decoder_len == 0 || self.d_ff == 0 {
            return Err(Error::Config("lengths and d_ff must be positive".into()));
        }
        Ok(())
    }

    fn decoder_positions(&self) -> usize {
        self.max_encoder_len.max(self.max_decoder_len)
    }
}

/// Whole-token vocabulary. Index 0 is always `<unk>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut sorted: std::collections::BTreeSet<&str> = words.into_iter().collect();
        for special in [UNK, TRIGGER_OPEN, TRIGGER_CLOSE] {
            sorted.remove(special);
        }
        let mut tokens = vec![UNK.to_string(), TRIGGER_OPEN.into(), TRIGGER_CLOSE.into()];
        tokens.extend(sorted.into_iter().map(str::to_string));
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Dropout switch threaded through a forward pass.
pub enum Mode<'r> {
    Eval,
    Train {
        rng: &'r mut ChaCha8Rng,
        dropout: f64,
    },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Mode::Train { rng, dropout } if *dropout > 0.0 => {
                let keep = 1.0 - *dropout;
                let dist = Bernoulli::new(keep).expect("keep probability in (0, 1]");
                let (r, c) = tape.shape(x);
                let mask =
                    Array2::from_shape_simple_fn((r, c), || f64::from(dist.sample(*rng)) / keep);
                tape.mul_const(x, mask)
            }
            _ => x,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let std = gain / (fan_in as f64).sqrt();
        Self {
            w: store.add_normal(format!("{name}.w"), fan_in, fan_out, std, rng),
            b: Some(store.add_zeros(format!("{name}.b"), 1, fan_out)),
        }
    }

    /// A key-projection bias only shifts every attention logit of a query by
    /// the same amount, so keys go without one.
    fn new_unbiased(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: store.add_normal(format!("{name}.w"), fan_in, fan_out, std, rng),
            b: None,
        }
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add_ones(format!("{name}.gain"), 1, d),
            bias: store.add_zeros(format!("{name}.bias"), 1, d),
        }
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    n_heads: usize,
}

impl Attention {
    fn new(store: &mut ParamStore, name: &str, cfg: &BackboneConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        let out_gain = 1.0 / (2.0 * cfg.n_layers as f64).sqrt();
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, 1.0, rng),
            k: Linear::new_unbiased(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, 1.0, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, out_gain, rng),
            n_heads: cfg.n_heads,
        }
    }

    fn forward(&self, tape: &mut Tape, query: Var, memory: Var) -> Var {
        let q = self.q.forward(tape, query);
        let k = self.k.forward(tape, memory);
        let v = self.v.forward(tape, memory);
        let d = tape.shape(q).1;
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.n_heads)
            .map(|h| {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, lo, hi);
                let kh = tape.slice_cols(k, lo, hi);
                let vh = tape.slice_cols(v, lo, hi);
                let scores = tape.matmul_t(qh, kh);
                let scores = tape.scale(scores, scale);
                let attn = tape.softmax_rows(scores);
                tape.matmul(attn, vh)
            })
            .collect();
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        self.o.forward(tape, merged)
    }
}

#[derive(Clone, Debug)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(store: &mut ParamStore, name: &str, cfg: &BackboneConfig, rng: &mut impl Rng) -> Self {
        let out_gain = 1.0 / (2.0 * cfg.n_layers as f64).sqrt();
        Self {
            up: Linear::new(
                store,
                &format!("{name}.up"),
                cfg.d_model,
                cfg.d_ff,
                1.0,
                rng,
            ),
            down: Linear::new(
                store,
                &format!("{name}.down"),
                cfg.d_ff,
                cfg.d_model,
                out_gain,
                rng,
            ),
        }
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.up.forward(tape, x);
        let h = tape.gelu(h);
        self.down.forward(tape, h)
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    norm_attn: Norm,
    attn: Attention,
    norm_ff: Norm,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    norm_self: Norm,
    self_attn: Attention,
    norm_cross: Norm,
    cross_attn: Attention,
    norm_ff: Norm,
    ff: FeedForward,
}

/// Token×dimension encoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStates(pub Array2<f64>);

/// Token×dimension decoder output (sentence context or prompt).
#[derive(Clone, Debug, PartialEq)]
pub struct ContextStates(pub Array2<f64>);

/// Parameter handles of one pre-norm transformer encoder-decoder.
#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    tok_emb: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    enc_layers: Vec<EncoderLayer>,
    enc_norm: Norm,
    dec_layers: Vec<DecoderLayer>,
    dec_norm: Norm,
}

impl Backbone {
    /// Registers a fresh backbone under `prefix`. Passing `tok_emb` reuses an
    /// existing token embedding table instead of allocating one.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: &BackboneConfig,
        vocab_size: usize,
        tok_emb: Option<ParamId>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let tok_emb = match tok_emb {
            Some(id) => id,
            None => store.add_normal(format!("{prefix}.tok_emb"), vocab_size, d, 0.3, rng),
        };
        let enc_pos = store.add_normal(
            format!("{prefix}.enc_pos"),
            config.max_encoder_len,
            d,
            0.1,
            rng,
        );
        let dec_pos = store.add_normal(
            format!("{prefix}.dec_pos"),
            config.decoder_positions(),
            d,
            0.1,
            rng,
        );
        let enc_layers = (0..config.n_layers)
            .map(|i| {
                let n = format!("{prefix}.enc{i}");
                EncoderLayer {
                    norm_attn: Norm::new(store, &format!("{n}.ln_attn"), d),
                    attn: Attention::new(store, &format!("{n}.attn"), config, rng),
                    norm_ff: Norm::new(store, &format!("{n}.ln_ff"), d),
                    ff: FeedForward::new(store, &format!("{n}.ff"), config, rng),
                }
            })
            .collect();
        let enc_norm = Norm::new(store, &format!("{prefix}.enc_ln"), d);
        let dec_layers = (0..config.n_layers)
            .map(|i| {
                let n = format!("{prefix}.dec{i}");
                DecoderLayer {
                    norm_self: Norm::new(store, &format!("{n}.ln_self"), d),
                    self_attn: Attention::new(store, &format!("{n}.self"), config, rng),
                    norm_cross: Norm::new(store, &format!("{n}.ln_cross"), d),
                    cross_attn: Attention::new(store, &format!("{n}.cross"), config, rng),
                    norm_ff: Norm::new(store, &format!("{n}.ln_ff"), d),
                    ff: FeedForward::new(store, &format!("{n}.ff"), config, rng),
                }
            })
            .collect();
        let dec_norm = Norm::new(store, &format!("{prefix}.dec_ln"), d);
        Ok(Self {
            config: config.clone(),
            tok_emb,
            enc_pos,
            dec_pos,
            enc_layers,
            enc_norm,
            dec_layers,
            dec_norm,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn token_embedding(&self) -> ParamId {
        self.tok_emb
    }

    fn embed(&self, tape: &mut Tape, ids: &[usize], pos: ParamId, mode: &mut Mode) -> Var {
        let positions: Vec<usize> = (0..ids.len()).collect();
        let table = tape.param(self.tok_emb);
        let tok = tape.gather_rows(table, ids);
        let pos_table = tape.param(pos);
        let pos = tape.gather_rows(pos_table, &positions);
        let x = tape.add(tok, pos);
        mode.dropout(tape, x)
    }

    pub fn encode(&self, tape: &mut Tape, ids: &[usize], mode: &mut Mode) -> Result<Var> {
        check_len(ids.len(), self.config.max_encoder_len)?;
        let mut x = self.embed(tape, ids, self.enc_pos, mode);
        for layer in &self.enc_layers {
            let h = layer.norm_attn.forward(tape, x);
            let a = layer.attn.forward(tape, h, h);
            let a = mode.dropout(tape, a);
            x = tape.add(x, a);
            let h = layer.norm_ff.forward(tape, x);
            let f = layer.ff.forward(tape, h);
            let f = mode.dropout(tape, f);
            x = tape.add(x, f);
        }
        Ok(self.enc_norm.forward(tape, x))
    }

    fn decode(&self, tape: &mut Tape, ids: &[usize], enc: Var, mode: &mut Mode) -> Var {
        let mut x = self.embed(tape, ids, self.dec_pos, mode);
        for layer in &self.dec_layers {
            let h = layer.norm_self.forward(tape, x);
            let a = layer.self_attn.forward(tape, h, h);
            let a = mode.dropout(tape, a);
            x = tape.add(x, a);
            let h = layer.norm_cross.forward(tape, x);
            let c = layer.cross_attn.forward(tape, h, enc);
            let c = mode.dropout(tape, c);
            x = tape.add(x, c);
            let h = layer.norm_ff.forward(tape, x);
            let f = layer.ff.forward(tape, h);
            let f = mode.dropout(tape, f);
            x = tape.add(x, f);
        }
        self.dec_norm.forward(tape, x)
    }

    /// Sentence context states: the decoder run over the same tokens the
    /// encoder saw.
    pub fn decode_context(
        &self,
        tape: &mut Tape,
        ids: &[usize],
        enc: Var,
        mode: &mut Mode,
    ) -> Result<Var> {
        let (rows, cols) = tape.shape(enc);
        if rows != ids.len() || cols != self.config.d_model {
            return Err(Error::Shape(format!(
                "decode_context over {} tokens got encoder states {rows}×{cols}",
                ids.len()
            )));
        }
        Ok(self.decode(tape, ids, enc, mode))
    }

    pub fn decode_prompt(
        &self,
        tape: &mut Tape,
        ids: &[usize],
        enc: Var,
        mode: &mut Mode,
    ) -> Result<Var> {
        check_len(ids.len(), self.config.max_decoder_len)?;
        if tape.shape(enc).1 != self.config.d_model {
            return Err(Error::Shape("encoder states width != d_model".into()));
        }
        Ok(self.decode(tape, ids, enc, mode))
    }

    /// Eval-mode encoder output.
    pub fn encode_states(&self, params: &ParamStore, ids: &[usize]) -> Result<EncoderStates> {
        let mut tape = Tape::new(params);
        let enc = self.encode(&mut tape, ids, &mut Mode::Eval)?;
        Ok(EncoderStates(tape.value(enc).to_owned()))
    }

    pub fn context_states(
        &self,
        params: &ParamStore,
        ids: &[usize],
        enc: &EncoderStates,
    ) -> Result<ContextStates> {
        let mut tape = Tape::new(params);
        let e = tape.constant(enc.0.clone());
        let h = self.decode_context(&mut tape, ids, e, &mut Mode::Eval)?;
        Ok(ContextStates(tape.value(h).to_owned()))
    }

    pub fn prompt_states(
        &self,
        params: &ParamStore,
        ids: &[usize],
        enc: &EncoderStates,
    ) -> Result<ContextStates> {
        let mut tape = Tape::new(params);
        let e = tape.constant(enc.0.clone());
        let h = self.decode_prompt(&mut tape, ids, e, &mut Mode::Eval)?;
        Ok(ContextStates(tape.value(h).to_owned()))
    }
}

fn check_len(len: usize, max: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::InvalidArgument("empty token sequence".into()));
    }
    if len > max {
        return Err(Error::TooLong { len, max });
    }
    Ok(())
}
