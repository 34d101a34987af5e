use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &[&str] = &[
    "--model.d_model",
    "16",
    "--model.n_heads",
    "2",
    "--model.n_layers",
    "1",
    "--model.d_ff",
    "32",
];

fn mfeae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfeae"))
        .args(args)
        .arg("-q")
        .env_remove("EAE_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\n{}\n{}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, extra: &[&str]) -> String {
    let mut args = vec![
        "gen-synthetic",
        "--out-dir",
        p(dir),
        "--n1",
        "24",
        "--n2",
        "24",
    ];
    args.extend(["--n-dev", "8", "--n-test", "8", "--n3", "12"]);
    args.extend(extra);
    ok(mfeae(&args))
}

fn hash_tree(dir: &Path) -> u64 {
    let mut files: Vec<_> = walk(dir);
    files.sort();
    let mut h = DefaultHasher::new();
    for f in files {
        f.strip_prefix(dir).unwrap().hash(&mut h);
        fs::read(&f).unwrap().hash(&mut h);
    }
    h.finish()
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let (d1, d2, t) = (data.join("d1"), data.join("d2"), data.join("templates.tsv"));
    let mut args = vec![
        "train",
        "--d1",
        p(&d1),
        "--d2",
        p(&d2),
        "--templates",
        p(&t),
        "--out",
        p(out),
    ];
    args.extend(TINY);
    args.extend(extra);
    mfeae(&args)
}

#[test]
fn gen_synthetic_writes_the_file_contract_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let report = generate(&a, &[]);
    for d in ["d1", "d2"] {
        for split in ["train", "dev", "test"] {
            assert!(a.join(d).join(format!("{split}.jsonl")).is_file());
            assert!(report.contains(&format!("{d}/{split}: docs=")));
        }
    }
    assert!(a.join("d3/test.jsonl").is_file());
    assert!(a.join("templates.tsv").is_file());
    generate(&b, &[]);
    assert_eq!(hash_tree(&a), hash_tree(&b));
}

#[test]
fn zero_overlap_shares_no_event_types() {
    let tmp = TempDir::new().unwrap();
    let out = generate(tmp.path(), &["--overlap", "0"]);
    assert!(out.contains("shared event types: 0\n"), "{out}");
}

#[test]
fn unwritable_output_exits_with_2() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = mfeae(&["gen-synthetic", "--out-dir", p(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(mfeae(&["train", "--no-such-flag"]).status.code(), Some(2));
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), &[]);
    fs::remove_file(tmp.path().join("templates.tsv")).unwrap();
    let o = train(
        tmp.path(),
        &tmp.path().join("run"),
        &["--train.epochs", "1"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_every_config_key() {
    let help = ok(mfeae(&["train", "--help"]));
    for k in mfeae_core::trainkit::CONFIG_KEYS {
        assert!(help.contains(&format!("--{}", k.key)), "missing {}", k.key);
    }
    assert!(help.contains("EAE_CONFIG"));
}

#[test]
fn training_writes_artifacts_and_lowers_the_loss() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), &[]);
    let run = tmp.path().join("run");
    ok(train(tmp.path(), &run, &["--train.epochs", "6"]));
    assert!(run.join("checkpoint.json").is_file());
    let snapshot = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.contains("epochs = 6"));
    let losses: Vec<f64> = fs::read_to_string(run.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["loss"]
                .as_f64()
                .unwrap()
        })
        .collect();
    assert_eq!(losses.len(), 6);
    let drops = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(drops >= 4, "{losses:?}");

    // The snapshot alone reproduces the run.
    let again = tmp.path().join("again");
    let cfg = run.join("config.toml");
    let (d1, d2, t) = (
        tmp.path().join("d1"),
        tmp.path().join("d2"),
        tmp.path().join("templates.tsv"),
    );
    ok(mfeae(&[
        "train",
        "--d1",
        p(&d1),
        "--d2",
        p(&d2),
        "--templates",
        p(&t),
        "--out",
        p(&again),
        "--config",
        p(&cfg),
    ]));
    assert_eq!(
        fs::read(run.join("metrics.jsonl")).unwrap(),
        fs::read(again.join("metrics.jsonl")).unwrap()
    );
}

#[test]
fn ablation_flags_leave_one_extractor() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), &[]);
    let run = tmp.path().join("run");
    let out = ok(train(
        tmp.path(),
        &run,
        &[
            "--train.epochs",
            "1",
            "--vib.enabled",
            "false",
            "--ssp.enabled",
            "false",
        ],
    ));
    assert!(out.contains("(1 backbones, vib false)"), "{out}");
    let ck: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("checkpoint.json")).unwrap()).unwrap();
    let names: Vec<&str> = ck["params"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["name"].as_str().unwrap())
        .collect();
    assert!(names.iter().all(|n| n.starts_with("base.")), "{names:?}");
}

#[test]
fn divergence_exits_with_3() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), &[]);
    let o = train(
        tmp.path(),
        &tmp.path().join("run"),
        &[
            "--train.epochs",
            "3",
            "--train.learning_rate",
            "1e300",
            "--train.clip_norm",
            "0",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn config_file_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), &[]);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[train]\nepochs = 2\nseed = 5\n").unwrap();
    let run = tmp.path().join("run");
    let (d1, d2, t) = (
        tmp.path().join("d1"),
        tmp.path().join("d2"),
        tmp.path().join("templates.tsv"),
    );
    let o = Command::new(env!("CARGO_BIN_EXE_mfeae"))
        .args([
            "train",
            "--d1",
            p(&d1),
            "--d2",
            p(&d2),
            "--templates",
            p(&t),
            "--out",
            p(&run),
            "-q",
        ])
        .args(TINY)
        .env("EAE_CONFIG", &cfg)
        .output()
        .unwrap();
    ok(o);
    let snapshot = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(
        snapshot.contains("epochs = 2") && snapshot.contains("seed = 5"),
        "{snapshot}"
    );
}

#[test]
fn eval_of_gold_predictions_is_perfect() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), &[]);
    let data = tmp.path().join("d1/test.jsonl");
    let preds: Vec<String> = fs::read_to_string(&data)
        .unwrap()
        .lines()
        .flat_map(|l| {
            let inst: mfeae_core::EventInstance = serde_json::from_str(l).unwrap();
            inst.arguments()
                .enumerate()
                .map(|(slot, (role, span))| {
                    serde_json::json!({
                        "id": inst.id, "role": role, "slot": slot, "span": span, "score": 1.0
                    })
                    .to_string()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let pred_path = tmp.path().join("gold.jsonl");
    fs::write(&pred_path, preds.join("\n") + "\n").unwrap();
    let report_path = tmp.path().join("report.json");
    ok(mfeae(&[
        "eval",
        "--data",
        p(&data),
        "--pred",
        p(&pred_path),
        "--out",
        p(&report_path),
    ]));
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report_path).unwrap()).unwrap();
    for m in ["arg_i", "arg_c", "head_c"] {
        assert_eq!(r[m]["f1"].as_f64(), Some(1.0), "{m}");
    }
}

#[test]
fn checkpoint_commands_produce_their_artifacts() {
    let tmp = TempDir::new().unwrap();
    generate(tmp.path(), &[]);
    let run = tmp.path().join("run");
    ok(train(tmp.path(), &run, &["--train.epochs", "1"]));
    let ck = run.join("checkpoint.json");
    let t = tmp.path().join("templates.tsv");

    let preds = tmp.path().join("preds.jsonl");
    let test = tmp.path().join("d2/test.jsonl");
    ok(mfeae(&[
        "predict",
        "--checkpoint",
        p(&ck),
        "--templates",
        p(&t),
        "--data",
        p(&test),
        "--out",
        p(&preds),
    ]));
    let lines = fs::read_to_string(&preds).unwrap();
    assert!(lines
        .lines()
        .all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    let table = ok(mfeae(&["eval", "--data", p(&test), "--pred", p(&preds)]));
    let direct = ok(mfeae(&[
        "eval",
        "--data",
        p(&test),
        "--checkpoint",
        p(&ck),
        "--templates",
        p(&t),
    ]));
    assert_eq!(table, direct);

    let zs = tmp.path().join("zs");
    let heldout = tmp.path().join("d3/test.jsonl");
    let out = ok(mfeae(&[
        "zero-shot",
        "--checkpoint",
        p(&ck),
        "--templates",
        p(&t),
        "--data",
        p(&heldout),
        "--out",
        p(&zs),
    ]));
    assert!(out.contains("random-span baseline over 100 draws"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(zs.join("report.json")).unwrap()).unwrap();
    assert!(report["metrics"]["arg_c"]["f1"].is_f64());
    assert!(report["random_span_baseline"]["arg_c"].is_f64());
    assert!(zs.join("predictions.jsonl").is_file());
}

#[test]
fn default_sweep_has_five_rows() {
    let tmp = TempDir::new().unwrap();
    ok(mfeae(&[
        "gen-synthetic",
        "--out-dir",
        p(tmp.path()),
        "--n1",
        "10",
        "--n2",
        "200",
        "--n-dev",
        "0",
        "--n-test",
        "5",
        "--n3",
        "0",
    ]));
    let out = tmp.path().join("sweep.jsonl");
    let (s, t, reg) = (
        tmp.path().join("d1"),
        tmp.path().join("d2"),
        tmp.path().join("templates.tsv"),
    );
    let mut args = vec![
        "sweep",
        "--source",
        p(&s),
        "--target",
        p(&t),
        "--templates",
        p(&reg),
        "--out",
        p(&out),
        "--train.epochs",
        "1",
        "--train.batch_size",
        "32",
    ];
    args.extend(TINY);
    let table = ok(mfeae(&args));
    let rows: Vec<serde_json::Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let ks: Vec<u64> = rows.iter().map(|r| r["k"].as_u64().unwrap()).collect();
    assert_eq!(ks, [0, 10, 50, 100, 200]);
    assert_eq!(table.lines().count(), 6);
}
