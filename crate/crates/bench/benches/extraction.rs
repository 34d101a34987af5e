use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mfeae_core::backbone::Mode;
use mfeae_core::corpus::make_synthetic_splits;
use mfeae_core::evalkit::evaluate;
use mfeae_core::extractor::{decode_span, SpanDistribution};
use mfeae_core::graph::Tape;
use mfeae_core::model::{PredictPath, PreparedInstance};
use mfeae_core::trainkit::{build_vocab, predict};
use mfeae_core::{MultiFormatModel, TemplateRegistry, TrainConfig};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn decode(c: &mut Criterion) {
    let n = 60;
    let logits: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
    let d = SpanDistribution::from_logits(&logits, &logits, true);
    c.bench_function("decode_span/60", |b| {
        b.iter(|| decode_span(black_box(&d), 10))
    });
}

struct Setup {
    model: MultiFormatModel,
    batch: Vec<PreparedInstance>,
    templates: TemplateRegistry,
    data: Vec<mfeae_core::EventInstance>,
}

fn setup() -> Setup {
    let s = make_synthetic_splits(1, 8, 8, 0, 0, 0.5);
    let mut data = s.d1.train.clone();
    data.extend(s.d2.train.iter().cloned());
    let cfg = TrainConfig::default();
    let vocab = build_vocab(&data, &s.templates);
    let model = MultiFormatModel::new(cfg.model, vocab, 1).unwrap();
    let batch = data
        .iter()
        .map(|i| model.prepare(i, &s.templates).unwrap())
        .collect();
    Setup {
        model,
        batch,
        templates: s.templates,
        data,
    }
}

fn training_step(c: &mut Criterion) {
    let s = setup();
    let mut group = c.benchmark_group("objective");
    group.sample_size(20);
    group.bench_function("forward_backward/16", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(0),
            |mut noise| {
                let mut tape = Tape::new(s.model.params());
                let mut dropout = ChaCha8Rng::seed_from_u64(1);
                let mut mode = Mode::Train {
                    rng: &mut dropout,
                    dropout: 0.1,
                };
                let (loss, _) = s
                    .model
                    .objective(&mut tape, &s.batch, &mut mode, &mut noise)
                    .unwrap();
                tape.backward(loss)
            },
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

fn inference(c: &mut Criterion) {
    let s = setup();
    let mut group = c.benchmark_group("inference");
    group.sample_size(20);
    for (name, path) in [
        ("fused", PredictPath::Fused),
        ("shared", PredictPath::SharedOnly),
    ] {
        group.bench_function(format!("predict_{name}/16"), |b| {
            b.iter(|| predict(&s.model, black_box(&s.data), &s.templates, path).unwrap())
        });
    }
    let preds = predict(&s.model, &s.data, &s.templates, PredictPath::Fused).unwrap();
    let joined = mfeae_core::evalkit::join_predictions(&s.data, &preds).unwrap();
    group.bench_function("evaluate/16", |b| b.iter(|| evaluate(black_box(&joined))));
    group.finish();
}

criterion_group!(benches, decode, training_step, inference);
criterion_main!(benches);
