//! The multi-format extraction model: format-specific and shared extractors,
//! gates, the bottleneck, and the loss/prediction paths over them.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, Mode, Vocab};
use crate::corpus::{
    insert_trigger_markers, window_around_trigger, EventInstance, MarkedSentence, Span,
};
use crate::error::{Error, Result};
use crate::extractor::{
    assign_gold_to_slots, decode_span, pool_role_var, span_loss_var, SpanDistribution, SpanHead,
    DEFAULT_MAX_SPAN_LEN,
};
use crate::graph::{ParamStore, Tape, Var};
use crate::prompts::TemplateRegistry;
use crate::ssp::{fuse_var, GateParams};
use crate::vib::{kl_var, posterior_var, sample_var, standard_normal, VibConfig, VibParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub max_span_len: usize,
    pub ssp_enabled: bool,
    pub tie_embeddings: bool,
    pub vib: VibConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            max_span_len: DEFAULT_MAX_SPAN_LEN,
            ssp_enabled: true,
            tie_embeddings: false,
            vib: VibConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.max_span_len == 0 {
            return Err(Error::Config(
                "model.max_span_len must be at least 1".into(),
            ));
        }
        if self.backbone.max_encoder_len < 3 {
            return Err(Error::Config(
                "model.max_encoder_len must leave room for the trigger markers".into(),
            ));
        }
        if !(self.vib.beta >= 0.0 && self.vib.beta.is_finite()) {
            return Err(Error::Config(format!(
                "vib.beta = {} must be >= 0",
                self.vib.beta
            )));
        }
        Ok(())
    }
}

/// One prompt-based extractor: a backbone and its span head.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub backbone: Backbone,
    pub head: SpanHead,
}

impl Extractor {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: &BackboneConfig,
        vocab_size: usize,
        tok_emb: Option<crate::graph::ParamId>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let backbone = Backbone::new(store, prefix, config, vocab_size, tok_emb, rng)?;
        let head = SpanHead::new(store, &format!("{prefix}.head"), config.d_model, rng);
        Ok(Self { backbone, head })
    }
}

/// An instance turned into model inputs: trigger-marked, windowed, encoded,
/// with the template slots and per-slot gold targets in marked coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInstance {
    pub id: String,
    pub format_id: u8,
    pub marked: MarkedSentence,
    /// Index of the first kept token in the original sentence.
    pub offset: usize,
    pub token_ids: Vec<usize>,
    pub prompt_ids: Vec<usize>,
    pub slots: Vec<(String, Range<usize>)>,
    pub targets: Vec<Option<Span>>,
}

impl PreparedInstance {
    /// Maps a span over the marked window back to original token indices.
    pub fn to_original(&self, span: Span) -> Span {
        let s = self.marked.to_original(span);
        Span::new(s.start + self.offset, s.end + self.offset)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictPath {
    /// Fused format-specific + shared path; plain extractor when SSP is off.
    Fused,
    /// The shared extractor alone (zero-shot).
    SharedOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TermSelection {
    pub ssp: bool,
    pub vib: bool,
}

impl TermSelection {
    pub const SSP: Self = Self {
        ssp: true,
        vib: false,
    };
    pub const VIB: Self = Self {
        ssp: false,
        vib: true,
    };
    pub const ALL: Self = Self {
        ssp: true,
        vib: true,
    };
}

/// Loss components summed over a set of instances.
///
/// `ssp` is the span loss over the fused states (or over the plain
/// extractor's own states when SSP is off and there is no bottleneck),
/// `shared` the span loss of the shared head on `z`, `kl` the token-averaged
/// KL summed over instances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ssp: f64,
    pub shared: f64,
    pub kl: f64,
}

impl LossTerms {
    pub fn total(&self, beta: f64) -> f64 {
        self.ssp + self.shared + beta * self.kl
    }

    pub fn add(&mut self, other: &LossTerms) {
        self.ssp += other.ssp;
        self.shared += other.shared;
        self.kl += other.kl;
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TermVars {
    pub ssp: Option<Var>,
    pub shared: Option<Var>,
    pub kl: Option<Var>,
}

/// Decoded filler (or null) of one template slot, in original coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub id: String,
    pub role: String,
    pub slot: usize,
    pub span: Option<Span>,
    pub score: f64,
}

/// Structural summary used to check ablation configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamSummary {
    pub backbones: usize,
    pub heads: usize,
    pub gates: usize,
    pub has_vib: bool,
    pub scalars: usize,
}

#[derive(Clone, Debug)]
pub struct MultiFormatModel {
    config: ModelConfig,
    vocab: Vocab,
    params: ParamStore,
    specific: Vec<Extractor>,
    shared: Extractor,
    gates: Vec<GateParams>,
    vib: Option<VibParams>,
}

impl MultiFormatModel {
    /// Builds a freshly initialised model. Parameter names and initial values
    /// depend only on `(config, vocab, seed)`.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let bc = &config.backbone;
        let d = bc.d_model;
        let v = vocab.len();
        let mut tied = None;
        let mut specific = Vec::new();
        if config.ssp_enabled {
            for k in 1..=2 {
                let e =
                    Extractor::new(&mut params, &format!("specific{k}"), bc, v, tied, &mut rng)?;
                if config.tie_embeddings {
                    tied = Some(e.backbone.token_embedding());
                }
                specific.push(e);
            }
        }
        let shared_name = if config.ssp_enabled { "shared" } else { "base" };
        let shared = Extractor::new(&mut params, shared_name, bc, v, tied, &mut rng)?;
        let gates = if config.ssp_enabled {
            (1..=2)
                .map(|k| GateParams::new(&mut params, &format!("gate{k}"), d, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        let vib = if config.vib.enabled {
            Some(VibParams::new(&mut params, d, &config.vib, &mut rng)?)
        } else {
            None
        };
        Ok(Self {
            config,
            vocab,
            params,
            specific,
            shared,
            gates,
            vib,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn specific(&self, format_id: u8) -> Option<&Extractor> {
        self.format_index(format_id)
            .ok()
            .and_then(|k| self.specific.get(k))
    }

    pub fn shared(&self) -> &Extractor {
        &self.shared
    }

    pub fn gate(&self, format_id: u8) -> Option<&GateParams> {
        self.format_index(format_id)
            .ok()
            .and_then(|k| self.gates.get(k))
    }

    pub fn vib_params(&self) -> Option<&VibParams> {
        self.vib.as_ref()
    }

    pub fn summary(&self) -> ParamSummary {
        let n_extractors = self.specific.len() + 1;
        ParamSummary {
            backbones: n_extractors,
            heads: n_extractors,
            gates: self.gates.len(),
            has_vib: self.vib.is_some(),
            scalars: self.params.num_scalars(),
        }
    }

    fn format_index(&self, format_id: u8) -> Result<usize> {
        match format_id {
            1 | 2 => Ok(usize::from(format_id) - 1),
            other => Err(Error::InvalidArgument(format!(
                "format_id {other} has no format-specific extractor"
            ))),
        }
    }

    pub fn prepare(
        &self,
        inst: &EventInstance,
        templates: &TemplateRegistry,
    ) -> Result<PreparedInstance> {
        let template = templates.get(&inst.event_type)?;
        template.validate(&inst.roles)?;
        let max_tokens = self.config.backbone.max_encoder_len - 2;
        let (window, offset) = window_around_trigger(inst, max_tokens);
        let marked = insert_trigger_markers(&window);
        let mut targets = vec![None; template.slots.len()];
        for role in template.roles() {
            let idx = template.slots_for_role(role);
            let gold = marked.gold_args.get(role).map(Vec::as_slice).unwrap_or(&[]);
            for (slot, span) in assign_gold_to_slots(&idx, gold).slots {
                targets[slot] = span;
            }
        }
        Ok(PreparedInstance {
            id: inst.id.clone(),
            format_id: inst.format_id,
            token_ids: self.vocab.encode(&marked.tokens),
            prompt_ids: self.vocab.encode(&template.token_texts()),
            slots: template
                .slots
                .iter()
                .map(|s| (s.role.clone(), s.positions.clone()))
                .collect(),
            targets,
            marked,
            offset,
        })
    }

    fn slot_logits(
        &self,
        tape: &mut Tape,
        head: &SpanHead,
        prompt: Var,
        h: Var,
        p: &PreparedInstance,
    ) -> Result<Vec<(Var, Var)>> {
        p.slots
            .iter()
            .map(|(_, positions)| {
                let r = pool_role_var(tape, prompt, positions)?;
                Ok(head.logits(tape, r, h))
            })
            .collect()
    }

    /// `z` (or `μ` when `noise` is `None`), projected back to d_model if
    /// configured, plus `(μ, logσ²)`.
    fn latent(
        &self,
        tape: &mut Tape,
        h: Var,
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var, Var)> {
        let vib = self
            .vib
            .as_ref()
            .ok_or_else(|| Error::Config("vib is disabled for this model".into()))?;
        let w_mu = tape.param(vib.w_mu);
        let w_sigma = tape.param(vib.w_sigma);
        let (mu, log_var) = posterior_var(tape, h, w_mu, w_sigma);
        let z = match noise {
            Some(rng) => {
                let (rows, cols) = tape.shape(mu);
                sample_var(tape, mu, log_var, standard_normal(rows, cols, rng))
            }
            None => mu,
        };
        let z = match vib.projection {
            Some(pid) => {
                let proj = tape.param(pid);
                tape.matmul(z, proj)
            }
            None => z,
        };
        Ok((z, mu, log_var))
    }

    /// Records the selected loss terms of one instance on `tape`.
    pub fn instance_terms(
        &self,
        tape: &mut Tape,
        p: &PreparedInstance,
        select: TermSelection,
        mode: &mut Mode,
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<TermVars> {
        let mut out = TermVars::default();
        let ids = &p.token_ids;
        let want_vib = select.vib && self.vib.is_some();
        if self.config.ssp_enabled {
            let k = self.format_index(p.format_id)?;
            if !select.ssp && !want_vib {
                return Ok(out);
            }
            let shared_bb = &self.shared.backbone;
            let enc_h = shared_bb.encode(tape, ids, mode)?;
            let h_shared = shared_bb.decode_context(tape, ids, enc_h, mode)?;
            if select.ssp {
                let spec = &self.specific[k];
                let enc_s = spec.backbone.encode(tape, ids, mode)?;
                let h_spec = spec.backbone.decode_context(tape, ids, enc_s, mode)?;
                let prompt = spec
                    .backbone
                    .decode_prompt(tape, &p.prompt_ids, enc_s, mode)?;
                let gate = self.gates[k];
                let w = tape.param(gate.w);
                let b = tape.param(gate.b);
                let fused = fuse_var(tape, h_spec, h_shared, w, b)?;
                let logits = self.slot_logits(tape, &spec.head, prompt, fused, p)?;
                out.ssp = Some(span_loss_var(tape, &logits, &p.targets)?);
            }
            if want_vib {
                let prompt = shared_bb.decode_prompt(tape, &p.prompt_ids, enc_h, mode)?;
                self.vib_terms(tape, p, prompt, h_shared, noise, &mut out)?;
            }
        } else {
            let bb = &self.shared.backbone;
            let enc = bb.encode(tape, ids, mode)?;
            let h = bb.decode_context(tape, ids, enc, mode)?;
            let prompt = bb.decode_prompt(tape, &p.prompt_ids, enc, mode)?;
            if self.vib.is_some() {
                if select.vib {
                    self.vib_terms(tape, p, prompt, h, noise, &mut out)?;
                }
            } else if select.ssp {
                let logits = self.slot_logits(tape, &self.shared.head, prompt, h, p)?;
                out.ssp = Some(span_loss_var(tape, &logits, &p.targets)?);
            }
        }
        Ok(out)
    }

    fn vib_terms(
        &self,
        tape: &mut Tape,
        p: &PreparedInstance,
        prompt: Var,
        h_shared: Var,
        noise: Option<&mut ChaCha8Rng>,
        out: &mut TermVars,
    ) -> Result<()> {
        let (z, mu, log_var) = self.latent(tape, h_shared, noise)?;
        let logits = self.slot_logits(tape, &self.shared.head, prompt, z, p)?;
        out.shared = Some(span_loss_var(tape, &logits, &p.targets)?);
        out.kl = Some(kl_var(tape, mu, log_var));
        Ok(())
    }

    /// Records the full objective over `batch`. Returns the scalar to
    /// differentiate together with the recorded terms.
    pub fn objective(
        &self,
        tape: &mut Tape,
        batch: &[PreparedInstance],
        mode: &mut Mode,
        noise: &mut ChaCha8Rng,
    ) -> Result<(Var, Vec<TermVars>)> {
        let beta = self.config.vib.beta;
        let mut parts = Vec::new();
        let mut all = Vec::with_capacity(batch.len());
        for p in batch {
            let t = self.instance_terms(tape, p, TermSelection::ALL, mode, Some(&mut *noise))?;
            parts.extend(t.ssp);
            parts.extend(t.shared);
            if let Some(kl) = t.kl {
                parts.push(tape.scale(kl, beta));
            }
            all.push(t);
        }
        Ok((tape.sum_scalars(&parts), all))
    }

    /// Loss terms without dropout. Passing `noise` samples `z`; otherwise the
    /// posterior mean is used.
    pub fn eval_terms(
        &self,
        batch: &[PreparedInstance],
        select: TermSelection,
        mut noise: Option<&mut ChaCha8Rng>,
    ) -> Result<LossTerms> {
        let mut total = LossTerms::default();
        for p in batch {
            let mut tape = Tape::new(&self.params);
            let t =
                self.instance_terms(&mut tape, p, select, &mut Mode::Eval, noise.as_deref_mut())?;
            total.add(&read_terms(&tape, &t));
        }
        Ok(total)
    }

    /// Eval-mode per-slot distributions.
    pub fn distributions(
        &self,
        p: &PreparedInstance,
        path: PredictPath,
    ) -> Result<Vec<SpanDistribution>> {
        let mut tape = Tape::new(&self.params);
        let mode = &mut Mode::Eval;
        let ids = &p.token_ids;
        let logits = if path == PredictPath::Fused && self.config.ssp_enabled {
            let k = self.format_index(p.format_id)?;
            let spec = &self.specific[k];
            let enc_s = spec.backbone.encode(&mut tape, ids, mode)?;
            let h_spec = spec.backbone.decode_context(&mut tape, ids, enc_s, mode)?;
            let prompt = spec
                .backbone
                .decode_prompt(&mut tape, &p.prompt_ids, enc_s, mode)?;
            let bb = &self.shared.backbone;
            let enc_h = bb.encode(&mut tape, ids, mode)?;
            let h_shared = bb.decode_context(&mut tape, ids, enc_h, mode)?;
            let w = tape.param(self.gates[k].w);
            let b = tape.param(self.gates[k].b);
            let fused = fuse_var(&mut tape, h_spec, h_shared, w, b)?;
            self.slot_logits(&mut tape, &spec.head, prompt, fused, p)?
        } else {
            let bb = &self.shared.backbone;
            let enc = bb.encode(&mut tape, ids, mode)?;
            let h = bb.decode_context(&mut tape, ids, enc, mode)?;
            let prompt = bb.decode_prompt(&mut tape, &p.prompt_ids, enc, mode)?;
            let h = if self.vib.is_some() {
                if self.config.vib.eval_use_mean {
                    self.latent(&mut tape, h, None)?.0
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    self.latent(&mut tape, h, Some(&mut rng))?.0
                }
            } else {
                h
            };
            self.slot_logits(&mut tape, &self.shared.head, prompt, h, p)?
        };
        Ok(logits
            .iter()
            .map(|&(ls, le)| {
                let s: Vec<f64> = tape.value(ls).iter().copied().collect();
                let e: Vec<f64> = tape.value(le).iter().copied().collect();
                SpanDistribution::from_logits(&s, &e, true)
            })
            .collect())
    }

    pub fn predict(&self, p: &PreparedInstance, path: PredictPath) -> Result<Vec<SlotPrediction>> {
        let dists = self.distributions(p, path)?;
        Ok(dists
            .iter()
            .zip(&p.slots)
            .enumerate()
            .map(|(slot, (d, (role, _)))| {
                let (span, score) = decode_span(d, self.config.max_span_len);
                SlotPrediction {
                    id: p.id.clone(),
                    role: role.clone(),
                    slot,
                    span: span.map(|s| p.to_original(s)),
                    score,
                }
            })
            .collect())
    }
}

pub fn read_terms(tape: &Tape, t: &TermVars) -> LossTerms {
    let get = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
    LossTerms {
        ssp: get(t.ssp),
        shared: get(t.shared),
        kl: get(t.kl),
    }
}

/// Copies every parameter whose name exists in `source` into `target`.
pub fn copy_params(target: &mut ParamStore, source: &ParamStore) -> Result<()> {
    for (_, name, value) in source.iter() {
        let dst = target
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let slot = target.get_mut(dst);
        if slot.dim() != value.dim() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                value.dim(),
                slot.dim()
            )));
        }
        slot.assign(value);
    }
    Ok(())
}
