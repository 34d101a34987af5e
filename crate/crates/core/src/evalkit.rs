//! Micro-averaged argument identification (Arg-I), classification (Arg-C) and
//! head-word classification (Head-C) scores.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{EventInstance, Span};
use crate::error::{Error, Result};
use crate::model::SlotPrediction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedArgument {
    pub role: String,
    pub span: Span,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldArgument {
    pub role: String,
    pub span: Span,
}

/// Predictions and gold arguments of one event mention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub preds: Vec<PredictedArgument>,
    pub golds: Vec<GoldArgument>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_pred: usize,
    pub n_gold: usize,
    pub n_correct: usize,
}

impl Prf {
    pub fn from_counts(n_pred: usize, n_gold: usize, n_correct: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(n_correct, n_pred);
        let recall = ratio(n_correct, n_gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            n_pred,
            n_gold,
            n_correct,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub arg_i: Prf,
    pub arg_c: Prf,
    pub head_c: Prf,
}

impl MetricsReport {
    pub fn to_table(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>9} {:>9} {:>9} {:>7} {:>7} {:>9}",
            "metric", "precision", "recall", "f1", "pred", "gold", "correct"
        )?;
        for (name, m) in [
            ("arg_i", &self.arg_i),
            ("arg_c", &self.arg_c),
            ("head_c", &self.head_c),
        ] {
            writeln!(
                f,
                "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>9}",
                name, m.precision, m.recall, m.f1, m.n_pred, m.n_gold, m.n_correct
            )?;
        }
        Ok(())
    }
}

fn is_punct(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_punctuation())
}

/// Last token of the span after dropping trailing punctuation tokens; the
/// span end when every token is punctuation.
pub fn default_head(tokens: &[String], span: Span) -> usize {
    (span.start..=span.end)
        .rev()
        .find(|&i| tokens.get(i).is_some_and(|t| !is_punct(t)))
        .unwrap_or(span.end)
}

/// Greedy one-to-one matching in descending prediction score: each
/// prediction takes the first unused gold with the same key.
fn matched<K: Eq + Hash>(
    preds: &[PredictedArgument],
    golds: &[GoldArgument],
    pred_key: impl Fn(&PredictedArgument) -> K,
    gold_key: impl Fn(&GoldArgument) -> K,
) -> usize {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut pool: HashMap<K, usize> = HashMap::new();
    for g in golds {
        *pool.entry(gold_key(g)).or_default() += 1;
    }
    let mut n = 0;
    for i in order {
        if let Some(left) = pool.get_mut(&pred_key(&preds[i])) {
            if *left > 0 {
                *left -= 1;
                n += 1;
            }
        }
    }
    n
}

fn score<K: Eq + Hash>(
    instances: &[EvalInstance],
    pred_key: impl Fn(&EvalInstance, &PredictedArgument) -> K,
    gold_key: impl Fn(&EvalInstance, &GoldArgument) -> K,
) -> Prf {
    let (mut np, mut ng, mut nc) = (0, 0, 0);
    for inst in instances {
        np += inst.preds.len();
        ng += inst.golds.len();
        nc += matched(
            &inst.preds,
            &inst.golds,
            |p| pred_key(inst, p),
            |g| gold_key(inst, g),
        );
    }
    Prf::from_counts(np, ng, nc)
}

/// A prediction is correct when its offsets equal an unused gold span.
pub fn arg_i_f1(instances: &[EvalInstance]) -> Prf {
    score(instances, |_, p| p.span, |_, g| g.span)
}

/// Offsets and role must both match.
pub fn arg_c_f1(instances: &[EvalInstance]) -> Prf {
    score(
        instances,
        |_, p| (p.role.clone(), p.span),
        |_, g| (g.role.clone(), g.span),
    )
}

/// Role and head token must match.
pub fn head_c_f1(instances: &[EvalInstance], head_fn: &dyn Fn(&[String], Span) -> usize) -> Prf {
    score(
        instances,
        |i, p| (p.role.clone(), head_fn(&i.tokens, p.span)),
        |i, g| (g.role.clone(), head_fn(&i.tokens, g.span)),
    )
}

pub fn evaluate(instances: &[EvalInstance]) -> MetricsReport {
    evaluate_with_head(instances, &default_head)
}

pub fn evaluate_with_head(
    instances: &[EvalInstance],
    head_fn: &dyn Fn(&[String], Span) -> usize,
) -> MetricsReport {
    MetricsReport {
        arg_i: arg_i_f1(instances),
        arg_c: arg_c_f1(instances),
        head_c: head_c_f1(instances, head_fn),
    }
}

/// Joins slot predictions with gold instances by id. Null slots are not
/// predictions; predictions for unknown ids are an error.
pub fn join_predictions(
    golds: &[EventInstance],
    preds: &[SlotPrediction],
) -> Result<Vec<EvalInstance>> {
    let mut by_id: BTreeMap<&str, Vec<PredictedArgument>> = BTreeMap::new();
    for p in preds {
        let entry = by_id.entry(p.id.as_str()).or_default();
        if let Some(span) = p.span {
            entry.push(PredictedArgument {
                role: p.role.clone(),
                span,
                score: p.score,
            });
        }
    }
    let out: Vec<EvalInstance> = golds
        .iter()
        .map(|g| EvalInstance {
            id: g.id.clone(),
            tokens: g.tokens.clone(),
            preds: by_id.remove(g.id.as_str()).unwrap_or_default(),
            golds: g
                .arguments()
                .map(|(role, span)| GoldArgument {
                    role: role.to_string(),
                    span,
                })
                .collect(),
        })
        .collect();
    if let Some(id) = by_id.keys().next() {
        return Err(Error::InvalidArgument(format!(
            "prediction for unknown instance id {id:?}"
        )));
    }
    Ok(out)
}
