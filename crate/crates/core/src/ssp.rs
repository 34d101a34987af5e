//! Shared-specific prompt architecture: per-format sigmoid gates that mix a
//! format-specific and the format-shared sentence representation.

use ndarray::Array2;
use rand::Rng;

use crate::backbone::ContextStates;
use crate::corpus::EventInstance;
use crate::error::{Error, Result};
use crate::extractor::SpanDistribution;
use crate::graph::{ParamId, ParamStore, Tape, Var};
use crate::model::{MultiFormatModel, PredictPath, TermSelection};
use crate::prompts::TemplateRegistry;

/// Gate of one format: `W_g` is `2d × d`, `b_g` is `1 × d`.
#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl GateParams {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> Self {
        let std = 0.1 / (2.0 * d as f64).sqrt();
        Self {
            w: store.add_normal(format!("{prefix}.w"), 2 * d, d, std, rng),
            b: store.add_zeros(format!("{prefix}.b"), 1, d),
        }
    }

    pub fn num_scalars(d: usize) -> usize {
        2 * d * d + d
    }
}

/// `g ⊙ H_spec + (1 − g) ⊙ H_shared` with
/// `g = σ([H_spec ∥ H_shared] · W_g + b_g)` per token and dimension.
pub fn fuse_var(tape: &mut Tape, specific: Var, shared: Var, w: Var, b: Var) -> Result<Var> {
    let (rs, cs) = tape.shape(specific);
    if tape.shape(shared) != (rs, cs) {
        return Err(Error::Shape(format!(
            "specific {:?} vs shared {:?}",
            (rs, cs),
            tape.shape(shared)
        )));
    }
    if tape.shape(w) != (2 * cs, cs) || tape.shape(b) != (1, cs) {
        return Err(Error::Shape(format!(
            "gate weights {:?}/{:?} for width {cs}",
            tape.shape(w),
            tape.shape(b)
        )));
    }
    let cat = tape.concat_cols(&[specific, shared]);
    let pre = tape.matmul(cat, w);
    let pre = tape.add_row(pre, b);
    let g = tape.sigmoid(pre);
    let neg = tape.scale(g, -1.0);
    let one_minus_g = tape.add_scalar(neg, 1.0);
    let a = tape.mul(g, specific);
    let c = tape.mul(one_minus_g, shared);
    Ok(tape.add(a, c))
}

pub fn fuse(
    specific: &ContextStates,
    shared: &ContextStates,
    w_g: &Array2<f64>,
    b_g: &Array2<f64>,
) -> Result<ContextStates> {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let s = tape.constant(specific.0.clone());
    let h = tape.constant(shared.0.clone());
    let w = tape.constant(w_g.clone());
    let b = tape.constant(b_g.clone());
    let out = fuse_var(&mut tape, s, h, w, b)?;
    Ok(ContextStates(tape.value(out).to_owned()))
}

/// Eval-mode slot distributions over the fused representation of the
/// instance's own format.
pub fn ssp_forward(
    inst: &EventInstance,
    model: &MultiFormatModel,
    templates: &TemplateRegistry,
) -> Result<Vec<SpanDistribution>> {
    let prepared = model.prepare(inst, templates)?;
    model.distributions(&prepared, PredictPath::Fused)
}

/// `L_SSP = L_1 + L_2`: span loss over the fused representations of each
/// batch, evaluated without dropout.
pub fn ssp_loss(
    batch_1: &[EventInstance],
    batch_2: &[EventInstance],
    model: &MultiFormatModel,
    templates: &TemplateRegistry,
) -> Result<f64> {
    let mut total = 0.0;
    for batch in [batch_1, batch_2] {
        let prepared = batch
            .iter()
            .map(|inst| model.prepare(inst, templates))
            .collect::<Result<Vec<_>>>()?;
        total += model.eval_terms(&prepared, TermSelection::SSP, None)?.ssp;
    }
    Ok(total)
}
