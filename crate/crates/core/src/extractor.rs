//! Prompt-slot span extraction: role pooling, bilinear start/end scoring over
//! the sentence plus a learned null position, joint span decoding, gold-slot
//! assignment and the start/end cross-entropy loss.

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::graph::{ParamId, ParamStore, Tape, Var};

pub const DEFAULT_MAX_SPAN_LEN: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct RoleRepresentation {
    pub vector: Array1<f64>,
    pub slot: usize,
    pub role: String,
}

/// Start and end distributions over sentence positions, optionally followed by
/// one null position.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanDistribution {
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
    pub has_null: bool,
}

impl SpanDistribution {
    pub fn from_logits(start: &[f64], end: &[f64], has_null: bool) -> Self {
        let mut p_start = start.to_vec();
        let mut p_end = end.to_vec();
        crate::graph::softmax_in_place(&mut p_start);
        crate::graph::softmax_in_place(&mut p_end);
        Self {
            p_start,
            p_end,
            has_null,
        }
    }

    /// Number of real sentence positions.
    pub fn n_positions(&self) -> usize {
        self.p_start.len() - usize::from(self.has_null)
    }

    pub fn null_index(&self) -> Option<usize> {
        self.has_null.then(|| self.p_start.len() - 1)
    }
}

/// Gold span (or null) per slot index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SlotAssignment {
    pub slots: BTreeMap<usize, Option<Span>>,
    /// Gold spans left over once every slot of the role was filled.
    pub dropped: usize,
}

/// Learned bilinear start/end scorers plus the null-position embedding.
#[derive(Clone, Copy, Debug)]
pub struct SpanHead {
    pub w_start: ParamId,
    pub w_end: ParamId,
    pub null: ParamId,
}

impl SpanHead {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> Self {
        let std = 1.0 / d as f64;
        Self {
            w_start: store.add_normal(format!("{prefix}.w_start"), d, d, std, rng),
            w_end: store.add_normal(format!("{prefix}.w_end"), d, d, std, rng),
            null: store.add_normal(format!("{prefix}.null"), 1, d, 1.0, rng),
        }
    }

    pub fn num_scalars(d: usize) -> usize {
        2 * d * d + d
    }

    /// Start/end logits of one role over `h` with the null row appended.
    pub fn logits(&self, tape: &mut Tape, role: Var, h: Var) -> (Var, Var) {
        let null = tape.param(self.null);
        let ws = tape.param(self.w_start);
        let we = tape.param(self.w_end);
        bilinear_logits(tape, role, h, ws, we, Some(null))
    }
}

/// `r · w · [H; null]ᵀ` for the start and end matrices.
pub fn bilinear_logits(
    tape: &mut Tape,
    role: Var,
    h: Var,
    w_start: Var,
    w_end: Var,
    null: Option<Var>,
) -> (Var, Var) {
    let h = match null {
        Some(n) => tape.concat_rows(&[h, n]),
        None => h,
    };
    let rs = tape.matmul(role, w_start);
    let re = tape.matmul(role, w_end);
    (tape.matmul_t(rs, h), tape.matmul_t(re, h))
}

/// Mean of the prompt rows a slot covers.
pub fn pool_role_var(tape: &mut Tape, prompt: Var, positions: &Range<usize>) -> Result<Var> {
    let rows = tape.shape(prompt).0;
    if positions.is_empty() {
        return Err(Error::InvalidArgument("empty slot range".into()));
    }
    if positions.end > rows {
        return Err(Error::Shape(format!(
            "slot {}..{} outside {rows} prompt rows",
            positions.start, positions.end
        )));
    }
    let rows = tape.slice_rows(prompt, positions.start, positions.end);
    Ok(tape.mean_rows(rows))
}

pub fn pool_role(
    prompt: &Array2<f64>,
    slot: usize,
    role: &str,
    positions: &Range<usize>,
) -> Result<RoleRepresentation> {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let p = tape.constant(prompt.clone());
    let r = pool_role_var(&mut tape, p, positions)?;
    Ok(RoleRepresentation {
        vector: tape.value(r).row(0).to_owned(),
        slot,
        role: role.to_string(),
    })
}

/// Softmax start/end distributions of one role over `h`. With `null` given,
/// the null vector is appended as an extra final position.
pub fn score_span(
    role: &RoleRepresentation,
    h: &Array2<f64>,
    w_start: &Array2<f64>,
    w_end: &Array2<f64>,
    null: Option<&Array1<f64>>,
) -> Result<SpanDistribution> {
    let d = role.vector.len();
    let square = |w: &Array2<f64>| w.dim() == (d, d);
    if h.ncols() != d || !square(w_start) || !square(w_end) || null.is_some_and(|n| n.len() != d) {
        return Err(Error::Shape(format!(
            "role width {d}, H {:?}, w_start {:?}, w_end {:?}",
            h.dim(),
            w_start.dim(),
            w_end.dim()
        )));
    }
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let r = tape.constant(role.vector.clone().insert_axis(ndarray::Axis(0)));
    let hv = tape.constant(h.clone());
    let ws = tape.constant(w_start.clone());
    let we = tape.constant(w_end.clone());
    let nv = null.map(|n| tape.constant(n.clone().insert_axis(ndarray::Axis(0))));
    let (ls, le) = bilinear_logits(&mut tape, r, hv, ws, we, nv);
    Ok(SpanDistribution::from_logits(
        tape.value(ls).as_slice().expect("row"),
        tape.value(le).as_slice().expect("row"),
        null.is_some(),
    ))
}

/// Highest-scoring `(start, end)` with `end - start < max_span_len`, or
/// `None` when the null pair wins. Score is `p_start[s] · p_end[e]`; ties go
/// to the smaller start, then the smaller end, and null only wins outright.
pub fn decode_span(d: &SpanDistribution, max_span_len: usize) -> (Option<Span>, f64) {
    assert!(max_span_len >= 1, "max_span_len must be at least 1");
    let n = d.n_positions();
    let mut best: Option<Span> = None;
    let mut best_score = f64::NEG_INFINITY;
    for s in 0..n {
        let ps = d.p_start[s];
        for e in s..n.min(s + max_span_len) {
            let score = ps * d.p_end[e];
            if score > best_score {
                best_score = score;
                best = Some(Span::new(s, e));
            }
        }
    }
    if let Some(null) = d.null_index() {
        let score = d.p_start[null] * d.p_end[null];
        if score > best_score {
            return (None, score);
        }
    }
    (best, best_score)
}

/// Pairs a role's gold spans, sorted by start, with its slots in template
/// order. Extra slots get `None`; extra gold spans are dropped.
pub fn assign_gold_to_slots(slots: &[usize], gold: &[Span]) -> SlotAssignment {
    let mut sorted = gold.to_vec();
    sorted.sort();
    let mut out = SlotAssignment::default();
    for (i, &slot) in slots.iter().enumerate() {
        out.slots.insert(slot, sorted.get(i).copied());
    }
    out.dropped = sorted.len().saturating_sub(slots.len());
    if out.dropped > 0 {
        log::warn!(
            "{} gold span(s) exceed the {} slot(s) of their role and are ignored",
            out.dropped,
            slots.len()
        );
    }
    out
}

/// Sum over slots of start and end cross-entropy; a `None` target points at
/// the null position.
pub fn span_loss_var(
    tape: &mut Tape,
    logits: &[(Var, Var)],
    targets: &[Option<Span>],
) -> Result<Var> {
    if logits.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} slot distributions for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut terms = Vec::with_capacity(2 * logits.len());
    for (&(ls, le), target) in logits.iter().zip(targets) {
        let n = tape.shape(ls).1;
        let (ts, te) = match target {
            Some(span) => (span.start, span.end),
            None => (n - 1, n - 1),
        };
        if ts >= n || te >= n {
            return Err(Error::Shape(format!(
                "target {ts}..{te} outside {n} positions"
            )));
        }
        terms.push(tape.cross_entropy(ls, ts));
        terms.push(tape.cross_entropy(le, te));
    }
    Ok(tape.sum_scalars(&terms))
}

/// Loss over already-normalised distributions.
pub fn span_loss(dists: &[SpanDistribution], assignment: &SlotAssignment) -> Result<f64> {
    if dists.len() != assignment.slots.len() {
        return Err(Error::Shape(format!(
            "{} distributions for {} assigned slots",
            dists.len(),
            assignment.slots.len()
        )));
    }
    let mut total = 0.0;
    for (d, target) in dists.iter().zip(assignment.slots.values()) {
        let (ts, te) = match target {
            Some(span) => (span.start, span.end),
            None => {
                let null = d.null_index().ok_or_else(|| {
                    Error::InvalidArgument("null target without a null position".into())
                })?;
                (null, null)
            }
        };
        total -= d.p_start[ts].ln() + d.p_end[te].ln();
    }
    Ok(total.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn role(v: Array1<f64>) -> RoleRepresentation {
        RoleRepresentation {
            vector: v,
            slot: 0,
            role: "R".into(),
        }
    }

    #[test]
    fn pooling_is_arithmetic_mean() {
        let p = array![[1.0, 0.0], [0.0, 1.0], [3.0, 3.0]];
        assert_eq!(
            pool_role(&p, 0, "R", &(2..3)).unwrap().vector,
            array![3.0, 3.0]
        );
        assert_eq!(
            pool_role(&p, 0, "R", &(0..2)).unwrap().vector,
            array![0.5, 0.5]
        );
        let same = array![[2.0, -1.0], [2.0, -1.0]];
        assert_eq!(
            pool_role(&same, 0, "R", &(0..2)).unwrap().vector,
            array![2.0, -1.0]
        );
        assert!(pool_role(&p, 0, "R", &(1..1)).is_err());
        assert!(pool_role(&p, 0, "R", &(2..4)).is_err());
    }

    #[test]
    fn uniform_logits_give_uniform_distribution() {
        let h = Array2::zeros((4, 2));
        let d = score_span(
            &role(array![1.0, 2.0]),
            &h,
            &Array2::eye(2),
            &Array2::eye(2),
            None,
        )
        .unwrap();
        for p in d.p_start.iter().chain(&d.p_end) {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_three_positions() {
        // softmax([1, 0, 1]) = [e, 1, e] / (2e + 1)
        let e = std::f64::consts::E;
        let expected = [
            e / (2.0 * e + 1.0),
            1.0 / (2.0 * e + 1.0),
            e / (2.0 * e + 1.0),
        ];
        let h = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let d = score_span(
            &role(array![1.0, 0.0]),
            &h,
            &Array2::eye(2),
            &Array2::eye(2),
            None,
        )
        .unwrap();
        for (p, q) in d.p_start.iter().zip(expected) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((d.p_start[0] - 0.4223).abs() < 1e-4);
        assert!((d.p_start[1] - 0.1554).abs() < 1e-4);
    }

    #[test]
    fn score_span_rejects_dimension_mismatch() {
        let h = Array2::zeros((3, 3));
        assert!(score_span(
            &role(array![1.0, 0.0]),
            &h,
            &Array2::eye(2),
            &Array2::eye(2),
            None
        )
        .is_err());
    }

    fn one_hot(n: usize, at: usize) -> Vec<f64> {
        (0..n).map(|i| if i == at { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn one_hot_decoding() {
        let d = SpanDistribution {
            p_start: one_hot(7, 2),
            p_end: one_hot(7, 4),
            has_null: true,
        };
        assert_eq!(decode_span(&d, 8).0, Some(Span::new(2, 4)));
        let d = SpanDistribution {
            p_start: one_hot(7, 6),
            p_end: one_hot(7, 6),
            has_null: true,
        };
        assert_eq!(decode_span(&d, 8).0, None);
    }

    #[test]
    fn assignment_sorts_then_zips() {
        let a = assign_gold_to_slots(&[2, 3], &[Span::new(7, 8), Span::new(2, 3)]);
        assert_eq!(a.slots[&2], Some(Span::new(2, 3)));
        assert_eq!(a.slots[&3], Some(Span::new(7, 8)));
        let a = assign_gold_to_slots(&[0, 1], &[Span::new(4, 4)]);
        assert_eq!(a.slots[&0], Some(Span::new(4, 4)));
        assert_eq!(a.slots[&1], None);
        let a = assign_gold_to_slots(&[5], &[Span::new(9, 9), Span::new(1, 2)]);
        assert_eq!(a.slots[&5], Some(Span::new(1, 2)));
        assert_eq!(a.dropped, 1);
    }

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let d = SpanDistribution {
            p_start: one_hot(4, 1),
            p_end: one_hot(4, 2),
            has_null: true,
        };
        let a = assign_gold_to_slots(&[0], &[Span::new(1, 2)]);
        assert_eq!(span_loss(&[d], &a).unwrap(), 0.0);
    }

    #[test]
    fn uniform_loss_is_two_log_n_plus_one() {
        let n = 5;
        let u = vec![1.0 / (n + 1) as f64; n + 1];
        let d = SpanDistribution {
            p_start: u.clone(),
            p_end: u,
            has_null: true,
        };
        for gold in [vec![Span::new(0, 3)], vec![]] {
            let a = assign_gold_to_slots(&[0], &gold);
            let l = span_loss(std::slice::from_ref(&d), &a).unwrap();
            assert!((l - 2.0 * ((n + 1) as f64).ln()).abs() < 1e-12);
        }
    }

    /// Cross-entropy recomputed from raw logits with log-sum-exp, independent
    /// of both the tape and `SpanDistribution`.
    fn ce_oracle(logits: &[f64], target: usize) -> f64 {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        lse - logits[target]
    }

    #[test]
    fn graph_loss_matches_oracle_on_random_fixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let mut logits = Vec::new();
        let mut raw = Vec::new();
        let targets = [Some(Span::new(1, 3)), None, Some(Span::new(0, 0))];
        for _ in 0..3 {
            let s: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let e: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let vs = tape.constant(Array2::from_shape_vec((1, 6), s.clone()).unwrap());
            let ve = tape.constant(Array2::from_shape_vec((1, 6), e.clone()).unwrap());
            logits.push((vs, ve));
            raw.push((s, e));
        }
        let loss = span_loss_var(&mut tape, &logits, &targets).unwrap();
        let mut expected = 0.0;
        for ((s, e), t) in raw.iter().zip(&targets) {
            let (ts, te) = t.map(|x| (x.start, x.end)).unwrap_or((5, 5));
            expected += ce_oracle(s, ts) + ce_oracle(e, te);
        }
        assert!((tape.scalar(loss) - expected).abs() < 1e-6);

        // Same value through normalised distributions.
        let dists: Vec<_> = raw
            .iter()
            .map(|(s, e)| SpanDistribution::from_logits(s, e, true))
            .collect();
        let assignment = SlotAssignment {
            slots: targets.iter().enumerate().map(|(i, t)| (i, *t)).collect(),
            dropped: 0,
        };
        assert!((span_loss(&dists, &assignment).unwrap() - expected).abs() < 1e-6);
    }

    /// Every valid candidate scored independently, then the first maximum in
    /// (start, end) order, null last.
    fn brute_force_decode(d: &SpanDistribution, max_len: usize) -> Option<Span> {
        let n = d.n_positions();
        let mut cands: Vec<(Option<Span>, f64)> = Vec::new();
        for s in 0..n {
            for e in 0..n {
                if s <= e && e - s < max_len {
                    cands.push((Some(Span::new(s, e)), d.p_start[s] * d.p_end[e]));
                }
            }
        }
        if let Some(z) = d.null_index() {
            cands.push((None, d.p_start[z] * d.p_end[z]));
        }
        let best = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        cands.into_iter().find(|c| c.1 == best).unwrap().0
    }

    #[test]
    fn decode_matches_enumeration_on_five_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let s: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let e: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let d = SpanDistribution::from_logits(&s, &e, true);
            for max_len in 1..=5 {
                assert_eq!(decode_span(&d, max_len).0, brute_force_decode(&d, max_len));
            }
        }
    }

    fn dist_strategy() -> impl Strategy<Value = SpanDistribution> {
        (1usize..10, any::<bool>()).prop_flat_map(|(n, has_null)| {
            let len = n + usize::from(has_null);
            (
                prop::collection::vec(-5.0f64..5.0, len),
                prop::collection::vec(-5.0f64..5.0, len),
            )
                .prop_map(move |(s, e)| SpanDistribution::from_logits(&s, &e, has_null))
        })
    }

    proptest! {
        #[test]
        fn distributions_normalise(d in dist_strategy()) {
            prop_assert!((d.p_start.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!((d.p_end.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(d.p_start.iter().chain(&d.p_end).all(|p| *p >= 0.0));
        }

        #[test]
        fn decoded_span_is_valid(d in dist_strategy(), max_len in 1usize..6) {
            if let (Some(span), _) = decode_span(&d, max_len) {
                prop_assert!(span.start <= span.end);
                prop_assert!(span.end - span.start < max_len);
                prop_assert!(span.end < d.n_positions());
            }
        }

        #[test]
        fn shifting_start_logits_changes_nothing(
            logits in prop::collection::vec(-5.0f64..5.0, 2..9),
            shift in -20.0f64..20.0,
        ) {
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            let a = SpanDistribution::from_logits(&logits, &logits, true);
            let b = SpanDistribution::from_logits(&shifted, &logits, true);
            for (p, q) in a.p_start.iter().zip(&b.p_start) {
                prop_assert!((p - q).abs() < 1e-9);
            }
            prop_assert_eq!(decode_span(&a, 4).0, decode_span(&b, 4).0);
        }
    }
}
