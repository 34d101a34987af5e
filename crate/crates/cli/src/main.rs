//! `mfeae`: synthetic data generation, training, evaluation and sweeps.

mod commands;

use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use mfeae_core::trainkit::CONFIG_KEYS;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "EAE_CONFIG";

/// A failure together with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CliResult<T = ()> = Result<T, CliError>;

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 3,
            error: error.into(),
        }
    }
}

impl From<mfeae_core::Error> for CliError {
    fn from(e: mfeae_core::Error) -> Self {
        use mfeae_core::Error as E;
        match e {
            E::Divergence { .. } | E::Shape(_) => Self::runtime(e),
            _ => Self::usage(e),
        }
    }
}

fn data_args() -> [Arg; 2] {
    [
        Arg::new("schema")
            .long("schema")
            .default_value("unified")
            .help("input layout: unified, sentence or document"),
        Arg::new("format-id")
            .long("format-id")
            .value_parser(value_parser!(u8))
            .help("overwrite the format id of every loaded record"),
    ]
}

fn config_args() -> Vec<Arg> {
    let mut args = vec![
        Arg::new("config")
            .long("config")
            .env(CONFIG_ENV)
            .help("TOML config file"),
        Arg::new("variant")
            .long("variant")
            .value_parser(["full", "no-vib", "multiple", "single"])
            .help("ablation preset applied after the config file, before key flags"),
    ];
    for k in CONFIG_KEYS {
        args.push(
            Arg::new(k.key)
                .long(k.key)
                .value_name("VALUE")
                .help(k.help)
                .help_heading("Config keys"),
        );
    }
    args
}

fn model_args() -> [Arg; 2] {
    [
        Arg::new("checkpoint")
            .long("checkpoint")
            .required(true)
            .help("checkpoint.json written by train"),
        Arg::new("templates")
            .long("templates")
            .required(true)
            .help("template registry TSV"),
    ]
}

fn path_arg() -> Arg {
    Arg::new("path")
        .long("path")
        .value_parser(["fused", "shared"])
        .default_value("fused")
        .help("fused format-specific path or the shared extractor alone")
}

pub fn cli() -> Command {
    Command::new("mfeae")
        .about("Multi-format event argument extraction")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("gen-synthetic")
                .about("Write two synthetic corpora, a held-out third format and templates")
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .default_value("13")
                        .value_parser(value_parser!(u64)),
                )
                .arg(
                    Arg::new("n1")
                        .long("n1")
                        .default_value("400")
                        .value_parser(value_parser!(usize))
                        .help("training instances of format 1"),
                )
                .arg(
                    Arg::new("n2")
                        .long("n2")
                        .default_value("400")
                        .value_parser(value_parser!(usize))
                        .help("training instances of format 2"),
                )
                .arg(
                    Arg::new("n-dev")
                        .long("n-dev")
                        .default_value("50")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("n-test")
                        .long("n-test")
                        .default_value("100")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("n3")
                        .long("n3")
                        .default_value("100")
                        .value_parser(value_parser!(usize))
                        .help("held-out format 3 instances; 0 skips"),
                )
                .arg(
                    Arg::new("overlap")
                        .long("overlap")
                        .default_value("0.5")
                        .value_parser(value_parser!(f64))
                        .help("fraction of event types shared by both formats"),
                )
                .arg(Arg::new("out-dir").long("out-dir").required(true)),
        )
        .subcommand(
            Command::new("train")
                .about("Train a model; writes checkpoint.json, metrics.jsonl and config.toml")
                .args_override_self(true)
                .arg(
                    Arg::new("d1")
                        .long("d1")
                        .help("format 1 directory (train.jsonl, optional dev.jsonl) or train file"),
                )
                .arg(
                    Arg::new("d2")
                        .long("d2")
                        .help("format 2 directory or train file"),
                )
                .arg(Arg::new("templates").long("templates").required(true))
                .arg(
                    Arg::new("out")
                        .long("out")
                        .required(true)
                        .help("output directory"),
                )
                .args(data_args().into_iter().take(1))
                .args(config_args()),
        )
        .subcommand(
            Command::new("eval")
                .about("Score predictions, or a checkpoint, against gold data")
                .arg(Arg::new("data").long("data").required(true))
                .arg(
                    Arg::new("pred")
                        .long("pred")
                        .conflicts_with("checkpoint")
                        .help("prediction JSONL"),
                )
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .requires("templates"),
                )
                .arg(Arg::new("templates").long("templates"))
                .arg(path_arg())
                .arg(Arg::new("out").long("out").help("write the report as JSON"))
                .args(data_args()),
        )
        .subcommand(
            Command::new("predict")
                .about("Write slot predictions as JSONL")
                .args(model_args())
                .arg(Arg::new("data").long("data").required(true))
                .arg(Arg::new("out").long("out").required(true))
                .arg(path_arg())
                .args(data_args()),
        )
        .subcommand(
            Command::new("zero-shot")
                .about("Predict with the shared extractor and compare with a random-span baseline")
                .args(model_args())
                .arg(Arg::new("data").long("data").required(true))
                .arg(
                    Arg::new("out")
                        .long("out")
                        .required(true)
                        .help("output directory"),
                )
                .arg(
                    Arg::new("draws")
                        .long("draws")
                        .default_value("100")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .default_value("13")
                        .value_parser(value_parser!(u64)),
                )
                .args(data_args()),
        )
        .subcommand(
            Command::new("sweep")
                .about("Low-resource sweep over target training sizes")
                .args_override_self(true)
                .arg(
                    Arg::new("source")
                        .long("source")
                        .required(true)
                        .help("source directory (train.jsonl, optional dev.jsonl)"),
                )
                .arg(
                    Arg::new("target")
                        .long("target")
                        .required(true)
                        .help("target directory (train.jsonl, test.jsonl, optional dev.jsonl)"),
                )
                .arg(Arg::new("templates").long("templates").required(true))
                .arg(
                    Arg::new("k-list")
                        .long("k-list")
                        .default_value("0,10,50,100,200")
                        .value_delimiter(',')
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("seeds")
                        .long("seeds")
                        .default_value("13")
                        .value_delimiter(',')
                        .value_parser(value_parser!(u64)),
                )
                .arg(
                    Arg::new("out")
                        .long("out")
                        .required(true)
                        .help("results JSONL"),
                )
                .args(data_args().into_iter().take(1))
                .args(config_args()),
        )
        .arg(
            Arg::new("quiet")
                .long("quiet")
                .short('q')
                .global(true)
                .action(ArgAction::SetTrue)
                .help("only log warnings"),
        )
}

fn run(m: &ArgMatches) -> CliResult {
    match m.subcommand() {
        Some(("gen-synthetic", sub)) => commands::gen_synthetic(sub),
        Some(("train", sub)) => commands::train(sub),
        Some(("eval", sub)) => commands::eval(sub),
        Some(("predict", sub)) => commands::predict(sub),
        Some(("zero-shot", sub)) => commands::zero_shot(sub),
        Some(("sweep", sub)) => commands::sweep(sub),
        _ => unreachable!("subcommand_required"),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if matches.get_flag("quiet") {
        "warn"
    } else {
        "info"
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
