//! Joint two-dataset training, dev-based model selection, prediction,
//! zero-shot transfer and low-resource sweeps.

mod checkpoint;
mod config;

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Mode, Vocab};
use crate::corpus::{subsample, EventInstance, Span, TRIGGER_CLOSE, TRIGGER_OPEN};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, join_predictions, MetricsReport};
use crate::graph::Tape;
use crate::model::{
    read_terms, LossTerms, MultiFormatModel, PredictPath, PreparedInstance, SlotPrediction,
};
use crate::optim::Adam;
use crate::prompts::TemplateRegistry;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_VERSION};
pub use config::{DatasetSelection, KeySpec, TrainConfig, ValueKind, Variant, CONFIG_KEYS};

/// Training and dev splits of the two datasets. Either side may be empty.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainInputs<'a> {
    pub d1_train: &'a [EventInstance],
    pub d1_dev: &'a [EventInstance],
    pub d2_train: &'a [EventInstance],
    pub d2_dev: &'a [EventInstance],
}

/// One line of the per-epoch metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    /// Mean over steps of the optimised objective.
    pub loss: f64,
    /// Mean over steps of each component; `loss = ssp + shared + beta·kl`.
    pub ssp: f64,
    pub shared: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub dev_arg_c_d1: Option<f64>,
    pub dev_arg_c_d2: Option<f64>,
    pub dev_arg_c: Option<f64>,
    pub best: bool,
}

pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub model: MultiFormatModel,
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
}

/// Vocabulary over the training tokens, the trigger markers and every
/// template word.
pub fn build_vocab<'a>(
    train: impl IntoIterator<Item = &'a EventInstance>,
    templates: &TemplateRegistry,
) -> Vocab {
    let mut words: Vec<&str> = vec![TRIGGER_OPEN, TRIGGER_CLOSE];
    for inst in train {
        words.extend(inst.tokens.iter().map(String::as_str));
    }
    for t in templates.iter() {
        words.extend(t.token_texts());
    }
    Vocab::build(words)
}

fn prepare_all(
    model: &MultiFormatModel,
    data: &[EventInstance],
    templates: &TemplateRegistry,
) -> Result<Vec<PreparedInstance>> {
    data.iter().map(|i| model.prepare(i, templates)).collect()
}

fn with_format(data: &[EventInstance], format_id: u8) -> Vec<EventInstance> {
    data.iter()
        .cloned()
        .map(|mut i| {
            i.format_id = format_id;
            i
        })
        .collect()
}

/// Per-epoch visiting order of one dataset; the dataset cycles when a step
/// index runs past its end.
struct Schedule {
    order: Vec<usize>,
}

impl Schedule {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order }
    }

    fn batch(&self, step: usize, size: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.order.len();
        (0..if n == 0 { 0 } else { size }).map(move |j| self.order[(step * size + j) % n])
    }
}

pub fn train(
    inputs: TrainInputs<'_>,
    templates: &TemplateRegistry,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(inputs, templates, config, |_, _| true)
}

/// Trains for `config.epochs` epochs. After every epoch `observer` sees the
/// log line and the current model; returning `false` stops training.
pub fn train_with(
    inputs: TrainInputs<'_>,
    templates: &TemplateRegistry,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochLog, &MultiFormatModel) -> bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    let use_d1 = config.datasets.uses_d1();
    let use_d2 = config.datasets.uses_d2();
    let d1_train: &[EventInstance] = if use_d1 { inputs.d1_train } else { &[] };
    let d2_train: &[EventInstance] = if use_d2 { inputs.d2_train } else { &[] };
    let d1_dev: &[EventInstance] = if use_d1 { inputs.d1_dev } else { &[] };
    let d2_dev: &[EventInstance] = if use_d2 { inputs.d2_dev } else { &[] };
    if d1_train.is_empty() && d2_train.is_empty() {
        return Err(Error::InvalidArgument("no training instances".into()));
    }
    let vocab = build_vocab(d1_train.iter().chain(d2_train), templates);
    let mut model = MultiFormatModel::new(config.model.clone(), vocab, config.seed)?;
    let train1 = prepare_all(&model, &with_format(d1_train, 1), templates)?;
    let train2 = prepare_all(&model, &with_format(d2_train, 2), templates)?;
    let dev1 = with_format(d1_dev, 1);
    let dev2 = with_format(d2_dev, 2);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_DA7A);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let clip = (config.clip_norm > 0.0).then_some(config.clip_norm);
    let mut opt = Adam::new(model.params(), config.learning_rate, clip);
    let beta = config.model.vib.beta;
    let bs = config.batch_size;
    let steps = train1.len().max(train2.len()).div_ceil(bs);

    let mut logs = Vec::new();
    let mut best: Option<(f64, usize, crate::graph::ParamStore)> = None;
    for epoch in 1..=config.epochs {
        let s1 = Schedule::new(train1.len(), &mut rng);
        let s2 = Schedule::new(train2.len(), &mut rng);
        let mut sums = LossTerms::default();
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        for step in 0..steps {
            let batch: Vec<PreparedInstance> = s1
                .batch(step, bs)
                .map(|i| train1[i].clone())
                .chain(s2.batch(step, bs).map(|i| train2[i].clone()))
                .collect();
            let (loss, terms, mut grads) = {
                let mut tape = Tape::new(model.params());
                let mut mode = Mode::Train {
                    rng: &mut dropout_rng,
                    dropout: config.model.backbone.dropout,
                };
                let (loss, vars) = model.objective(&mut tape, &batch, &mut mode, &mut noise_rng)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        loss: value,
                    });
                }
                let mut terms = LossTerms::default();
                for v in &vars {
                    terms.add(&read_terms(&tape, v));
                }
                (value, terms, tape.backward(loss))
            };
            norm_sum += opt.step(model.params_mut(), &mut grads);
            if !model.params().all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
            loss_sum += loss;
            sums.add(&terms);
        }
        let n = steps.max(1) as f64;
        let dev_arg_c_d1 = dev_score(&model, &dev1, templates)?;
        let dev_arg_c_d2 = dev_score(&model, &dev2, templates)?;
        let devs: Vec<f64> = [dev_arg_c_d1, dev_arg_c_d2].into_iter().flatten().collect();
        let dev_arg_c = (!devs.is_empty()).then(|| devs.iter().sum::<f64>() / devs.len() as f64);
        // Without dev data the latest epoch is kept.
        let current = dev_arg_c.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            Some((b, _, _)) if dev_arg_c.is_some() => current > *b,
            _ => true,
        };
        if improved {
            best = Some((current, epoch, model.params().clone()));
        }
        let line = EpochLog {
            epoch,
            steps,
            loss: loss_sum / n,
            ssp: sums.ssp / n,
            shared: sums.shared / n,
            kl: sums.kl / n,
            grad_norm: norm_sum / n,
            dev_arg_c_d1,
            dev_arg_c_d2,
            dev_arg_c,
            best: improved,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (ssp {:.4} shared {:.4} kl {:.4}) dev arg_c {:?}",
            line.loss,
            line.ssp,
            line.shared,
            line.kl,
            dev_arg_c
        );
        debug_assert!((line.loss - (line.ssp + line.shared + beta * line.kl)).abs() < 1e-6);
        let go_on = observer(&line, &model);
        logs.push(line);
        if !go_on {
            break;
        }
    }
    let (epoch, dev) = match best {
        Some((score, epoch, params)) => {
            *model.params_mut() = params;
            (epoch, score.is_finite().then_some(score))
        }
        None => (0, None),
    };
    let checkpoint = Checkpoint::from_model(&model, config, epoch, dev);
    Ok(TrainOutcome {
        model,
        checkpoint,
        logs,
    })
}

fn dev_score(
    model: &MultiFormatModel,
    dev: &[EventInstance],
    templates: &TemplateRegistry,
) -> Result<Option<f64>> {
    if dev.is_empty() {
        return Ok(None);
    }
    Ok(Some(
        evaluate_model(model, dev, templates, PredictPath::Fused)?
            .arg_c
            .f1,
    ))
}

/// Mean dev Arg-C of a model over the non-empty dev sets, as used for model
/// selection.
pub fn mean_dev_arg_c(
    model: &MultiFormatModel,
    inputs: TrainInputs<'_>,
    templates: &TemplateRegistry,
) -> Result<Option<f64>> {
    let a = dev_score(model, &with_format(inputs.d1_dev, 1), templates)?;
    let b = dev_score(model, &with_format(inputs.d2_dev, 2), templates)?;
    let devs: Vec<f64> = [a, b].into_iter().flatten().collect();
    Ok((!devs.is_empty()).then(|| devs.iter().sum::<f64>() / devs.len() as f64))
}

pub fn predict(
    model: &MultiFormatModel,
    data: &[EventInstance],
    templates: &TemplateRegistry,
    path: PredictPath,
) -> Result<Vec<SlotPrediction>> {
    let mut out = Vec::new();
    for inst in data {
        let p = model.prepare(inst, templates)?;
        out.extend(model.predict(&p, path)?);
    }
    Ok(out)
}

/// Predictions from the shared extractor alone.
pub fn zero_shot_predict(
    model: &MultiFormatModel,
    data: &[EventInstance],
    templates: &TemplateRegistry,
) -> Result<Vec<SlotPrediction>> {
    predict(model, data, templates, PredictPath::SharedOnly)
}

pub fn evaluate_model(
    model: &MultiFormatModel,
    data: &[EventInstance],
    templates: &TemplateRegistry,
    path: PredictPath,
) -> Result<MetricsReport> {
    let preds = predict(model, data, templates, path)?;
    Ok(evaluate(&join_predictions(data, &preds)?))
}

/// Mean F1 values over repeated draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub arg_i: f64,
    pub arg_c: f64,
    pub head_c: f64,
}

/// Chance level for a set of predictions: every predicted span is replaced by
/// a span of the same width at a uniformly random start in its sentence, and
/// the scores are averaged over `draws` repetitions.
pub fn random_span_baseline(
    data: &[EventInstance],
    preds: &[SlotPrediction],
    draws: usize,
    seed: u64,
) -> Result<F1Summary> {
    let lengths: std::collections::HashMap<&str, usize> = data
        .iter()
        .map(|i| (i.id.as_str(), i.tokens.len()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = F1Summary::default();
    for _ in 0..draws {
        let mut shuffled = preds.to_vec();
        for p in &mut shuffled {
            if let Some(span) = p.span {
                let n = *lengths.get(p.id.as_str()).ok_or_else(|| {
                    Error::InvalidArgument(format!("prediction for unknown id {:?}", p.id))
                })?;
                let w = span.width().min(n);
                let start = rng.random_range(0..=n - w);
                p.span = Some(Span::new(start, start + w - 1));
            }
        }
        let r = evaluate(&join_predictions(data, &shuffled)?);
        sum.arg_i += r.arg_i.f1;
        sum.arg_c += r.arg_c.f1;
        sum.head_c += r.head_c.f1;
    }
    let d = draws.max(1) as f64;
    Ok(F1Summary {
        arg_i: sum.arg_i / d,
        arg_c: sum.arg_c / d,
        head_c: sum.head_c / d,
    })
}

/// Source and target splits for a sweep.
#[derive(Clone, Copy, Debug)]
pub struct SweepData<'a> {
    pub source_train: &'a [EventInstance],
    pub source_dev: &'a [EventInstance],
    pub target_train: &'a [EventInstance],
    pub target_dev: &'a [EventInstance],
    pub target_test: &'a [EventInstance],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub seed: u64,
    pub arg_i: f64,
    pub arg_c: f64,
    pub head_c: f64,
}

/// One training run per `(k, seed)`: the full source set as dataset 1 plus
/// `k` sampled target instances as dataset 2, scored on the target test set.
/// `k = 0` trains on the source alone and scores the target zero-shot.
pub fn low_resource_sweep(
    data: SweepData<'_>,
    templates: &TemplateRegistry,
    config: &TrainConfig,
    k_list: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if let Some(k) = k_list.iter().find(|&&k| k > data.target_train.len()) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} target training instances",
            data.target_train.len()
        )));
    }
    let test = with_format(data.target_test, 2);
    let mut rows = Vec::new();
    for &k in k_list {
        for &seed in seeds {
            let mut cfg = config.clone();
            cfg.seed = seed;
            let target = subsample(data.target_train, k, seed)?;
            let (datasets, path) = if k == 0 {
                (DatasetSelection::D1, PredictPath::SharedOnly)
            } else {
                (DatasetSelection::Both, PredictPath::Fused)
            };
            cfg.datasets = datasets;
            let outcome = train(
                TrainInputs {
                    d1_train: data.source_train,
                    d1_dev: data.source_dev,
                    d2_train: &target,
                    d2_dev: data.target_dev,
                },
                templates,
                &cfg,
            )?;
            let r = evaluate_model(&outcome.model, &test, templates, path)?;
            log::info!("sweep k={k} seed={seed}: arg_c {:.4}", r.arg_c.f1);
            rows.push(SweepRow {
                k,
                seed,
                arg_i: r.arg_i.f1,
                arg_c: r.arg_c.f1,
                head_c: r.head_c.f1,
            });
        }
    }
    Ok(rows)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: n + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
