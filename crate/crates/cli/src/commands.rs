use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::ArgMatches;
use mfeae_core::corpus::{
    corpus_stats, load_dataset, make_heldout_corpus, make_synthetic_splits, save_dataset, Schema,
};
use mfeae_core::evalkit::{evaluate, join_predictions};
use mfeae_core::model::{PredictPath, SlotPrediction};
use mfeae_core::trainkit::{
    self, low_resource_sweep, random_span_baseline, read_jsonl, write_jsonl, SweepData,
    TrainInputs, Variant, CONFIG_KEYS,
};
use mfeae_core::{Checkpoint, EventInstance, MetricsReport, TemplateRegistry, TrainConfig};
use serde_json::json;

use crate::{CliError, CliResult};

fn arg<'a>(m: &'a ArgMatches, id: &str) -> Option<&'a String> {
    m.get_one::<String>(id)
}

fn required<'a>(m: &'a ArgMatches, id: &str) -> &'a String {
    arg(m, id).expect("required by the parser")
}

fn schema(m: &ArgMatches) -> CliResult<Schema> {
    Ok(required(m, "schema").parse()?)
}

fn load(m: &ArgMatches, path: &Path) -> CliResult<Vec<EventInstance>> {
    let format_id = m.try_get_one::<u8>("format-id").ok().flatten().copied();
    let mut data = load_dataset(path, schema(m)?, format_id.unwrap_or(1))?;
    if let Some(fid) = format_id {
        data.iter_mut().for_each(|i| i.format_id = fid);
    }
    Ok(data)
}

/// Train and optional dev split of a dataset given as a directory or a
/// single training file.
fn load_split(m: &ArgMatches, path: &str) -> CliResult<(Vec<EventInstance>, Vec<EventInstance>)> {
    let path = Path::new(path);
    if !path.is_dir() {
        return Ok((load(m, path)?, Vec::new()));
    }
    let train = load(m, &path.join("train.jsonl"))?;
    let dev_path = path.join("dev.jsonl");
    let dev = if dev_path.exists() {
        load(m, &dev_path)?
    } else {
        Vec::new()
    };
    Ok((train, dev))
}

fn templates(m: &ArgMatches) -> CliResult<TemplateRegistry> {
    Ok(TemplateRegistry::load(required(m, "templates"))?)
}

fn config(m: &ArgMatches) -> CliResult<TrainConfig> {
    let mut cfg = match arg(m, "config") {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = arg(m, "variant") {
        cfg.apply_variant(match v.as_str() {
            "full" => Variant::Full,
            "no-vib" => Variant::NoVib,
            "multiple" => Variant::Multiple,
            _ => Variant::Single,
        });
    }
    for k in CONFIG_KEYS {
        if let Some(value) = arg(m, k.key) {
            cfg.set(k.key, value)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(CliError::usage)
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    fs::write(path, text + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::usage)
}

fn predict_path(m: &ArgMatches) -> PredictPath {
    match required(m, "path").as_str() {
        "shared" => PredictPath::SharedOnly,
        _ => PredictPath::Fused,
    }
}

pub fn gen_synthetic(m: &ArgMatches) -> CliResult {
    let get = |id| *m.get_one::<usize>(id).expect("defaulted");
    let seed = *m.get_one::<u64>("seed").expect("defaulted");
    let overlap = *m.get_one::<f64>("overlap").expect("defaulted");
    if !(0.0..=1.0).contains(&overlap) {
        return Err(CliError::usage(anyhow!("--overlap must lie in [0, 1]")));
    }
    let out = PathBuf::from(required(m, "out-dir"));
    let s = make_synthetic_splits(
        seed,
        get("n1"),
        get("n2"),
        get("n-dev"),
        get("n-test"),
        overlap,
    );
    for (name, splits) in [("d1", &s.d1), ("d2", &s.d2)] {
        let dir = out.join(name);
        create_dir(&dir)?;
        for (split, data) in [
            ("train", &splits.train),
            ("dev", &splits.dev),
            ("test", &splits.test),
        ] {
            save_dataset(dir.join(format!("{split}.jsonl")), data)?;
            println!("{name}/{split}: {}", corpus_stats(data));
        }
    }
    let n3 = get("n3");
    if n3 > 0 {
        let dir = out.join("d3");
        create_dir(&dir)?;
        let data = make_heldout_corpus(seed.wrapping_add(1), n3);
        save_dataset(dir.join("test.jsonl"), &data)?;
        println!("d3/test: {}", corpus_stats(&data));
    }
    s.templates.save(out.join("templates.tsv"))?;
    println!("templates: {}", s.templates.len());
    println!("shared event types: {}", s.n_shared_types);
    Ok(())
}

pub fn train(m: &ArgMatches) -> CliResult {
    let cfg = config(m)?;
    for (flag, used) in [
        ("d1", cfg.datasets.uses_d1()),
        ("d2", cfg.datasets.uses_d2()),
    ] {
        if used && arg(m, flag).is_none() {
            return Err(CliError::usage(anyhow!(
                "--{flag} is required when train.datasets = {}",
                cfg.datasets
            )));
        }
    }
    let reg = templates(m)?;
    let (d1, d1_dev) = match arg(m, "d1") {
        Some(p) => load_split(m, p)?,
        None => Default::default(),
    };
    let (d2, d2_dev) = match arg(m, "d2") {
        Some(p) => load_split(m, p)?,
        None => Default::default(),
    };
    let out = PathBuf::from(required(m, "out"));
    create_dir(&out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())
        .with_context(|| format!("cannot write into {}", out.display()))
        .map_err(CliError::usage)?;
    let inputs = TrainInputs {
        d1_train: &d1,
        d1_dev: &d1_dev,
        d2_train: &d2,
        d2_dev: &d2_dev,
    };
    let outcome = trainkit::train(inputs, &reg, &cfg)?;
    outcome.checkpoint.save(out.join("checkpoint.json"))?;
    write_jsonl(out.join("metrics.jsonl"), &outcome.logs)?;
    let summary = outcome.model.summary();
    println!(
        "parameters: {} ({} backbones, vib {})",
        summary.scalars, summary.backbones, summary.has_vib
    );
    println!(
        "selected epoch {} of {}, dev Arg-C {}",
        outcome.checkpoint.epoch,
        outcome.logs.len(),
        outcome
            .checkpoint
            .dev_arg_c
            .map_or("n/a".to_string(), |v| format!("{v:.4}"))
    );
    Ok(())
}

fn model_predictions(
    m: &ArgMatches,
    data: &[EventInstance],
    path: PredictPath,
) -> CliResult<Vec<SlotPrediction>> {
    let model = Checkpoint::load(required(m, "checkpoint"))?.to_model()?;
    Ok(trainkit::predict(&model, data, &templates(m)?, path)?)
}

fn report(data: &[EventInstance], preds: &[SlotPrediction]) -> CliResult<MetricsReport> {
    Ok(evaluate(&join_predictions(data, preds)?))
}

pub fn eval(m: &ArgMatches) -> CliResult {
    let data = load(m, Path::new(required(m, "data")))?;
    let preds = match (arg(m, "pred"), arg(m, "checkpoint")) {
        (Some(p), _) => read_jsonl::<SlotPrediction>(p)?,
        (None, Some(_)) => model_predictions(m, &data, predict_path(m))?,
        (None, None) => {
            return Err(CliError::usage(anyhow!(
                "either --pred or --checkpoint is required"
            )))
        }
    };
    let r = report(&data, &preds)?;
    print!("{r}");
    if let Some(out) = arg(m, "out") {
        write_json(Path::new(out), &json!(r))?;
    }
    Ok(())
}

pub fn predict(m: &ArgMatches) -> CliResult {
    let data = load(m, Path::new(required(m, "data")))?;
    let preds = model_predictions(m, &data, predict_path(m))?;
    write_jsonl(required(m, "out"), &preds)?;
    println!(
        "{} slot predictions for {} instances",
        preds.len(),
        data.len()
    );
    Ok(())
}

pub fn zero_shot(m: &ArgMatches) -> CliResult {
    let data = load(m, Path::new(required(m, "data")))?;
    let preds = model_predictions(m, &data, PredictPath::SharedOnly)?;
    let r = report(&data, &preds)?;
    let draws = *m.get_one::<usize>("draws").expect("defaulted");
    let seed = *m.get_one::<u64>("seed").expect("defaulted");
    let baseline = random_span_baseline(&data, &preds, draws, seed)?;
    let out = PathBuf::from(required(m, "out"));
    create_dir(&out)?;
    write_jsonl(out.join("predictions.jsonl"), &preds)?;
    write_json(
        &out.join("report.json"),
        &json!({ "metrics": r, "random_span_baseline": baseline, "draws": draws }),
    )?;
    print!("{r}");
    println!(
        "random-span baseline over {draws} draws: Arg-I {:.4} Arg-C {:.4} Head-C {:.4}",
        baseline.arg_i, baseline.arg_c, baseline.head_c
    );
    Ok(())
}

pub fn sweep(m: &ArgMatches) -> CliResult {
    let cfg = config(m)?;
    let reg = templates(m)?;
    let (source, source_dev) = load_split(m, required(m, "source"))?;
    let target_dir = Path::new(required(m, "target"));
    let (target, target_dev) = load_split(m, required(m, "target"))?;
    let test = load(m, &target_dir.join("test.jsonl"))?;
    let k_list: Vec<usize> = m
        .get_many::<usize>("k-list")
        .expect("defaulted")
        .copied()
        .collect();
    let seeds: Vec<u64> = m
        .get_many::<u64>("seeds")
        .expect("defaulted")
        .copied()
        .collect();
    let data = SweepData {
        source_train: &source,
        source_dev: &source_dev,
        target_train: &target,
        target_dev: &target_dev,
        target_test: &test,
    };
    let rows = low_resource_sweep(data, &reg, &cfg, &k_list, &seeds)?;
    write_jsonl(required(m, "out"), &rows)?;
    println!("{:>6} {:>8} {:>8} {:>8}", "k", "Arg-I", "Arg-C", "Head-C");
    for &k in &k_list {
        let group: Vec<_> = rows.iter().filter(|r| r.k == k).collect();
        let n = group.len() as f64;
        let mean = |f: fn(&&trainkit::SweepRow) -> f64| group.iter().map(f).sum::<f64>() / n;
        println!(
            "{k:>6} {:>8.4} {:>8.4} {:>8.4}",
            mean(|r| r.arg_i),
            mean(|r| r.arg_c),
            mean(|r| r.head_c)
        );
    }
    Ok(())
}
