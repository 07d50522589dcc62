//! `medner`: train, predict, evaluate, de-identify and convert from the
//! command line.

mod commands;
mod settings;

use std::fmt;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use medner::Error;

use settings::Settings;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_PARSE: u8 = 3;
pub const EXIT_VALIDATION: u8 = 4;
pub const EXIT_NUMERIC: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_PARSE,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn other(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_OTHER,
            message: message.into(),
        }
    }

    /// Maps a library error onto an exit class, prefixed with `context`
    /// (usually a file name).
    pub fn from_lib(context: impl fmt::Display, e: Error) -> Self {
        let code = match &e {
            Error::Parse { .. } => EXIT_PARSE,
            Error::Schema(_)
            | Error::Validation(_)
            | Error::Version { .. }
            | Error::Checksum(_)
            | Error::ShapeMismatch { .. }
            | Error::ModelFormat(_) => EXIT_VALIDATION,
            Error::InvalidArgument(_) => EXIT_USAGE,
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Io(_) => EXIT_OTHER,
        };
        CliError {
            code,
            message: format!("{context}: {e}"),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn opt(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("VALUE").help(help)
}

fn common_args(cmd: Command) -> Command {
    cmd.arg(opt("config", "Flat key=value config file; flags override its entries").value_name("FILE"))
        .arg(opt("out-dir", "Directory receiving every output file").value_name("DIR"))
}

fn corpus_args(cmd: Command) -> Command {
    cmd.arg(opt("format", "Corpus layout: conll4 or tsv2 [default: conll4]"))
        .arg(opt("scheme", "Tagging scheme of corpus files: IOB1 or IOB2 [default: IOB2]"))
}

const MODEL_KEYS: &[(&str, &str)] = &[
    ("char-dim", "Character embedding size [default: 128]"),
    ("kernel-width", "Char-CNN kernel width [default: 2]"),
    ("num-filters", "Char-CNN filters [default: 25]"),
    ("lstm-state", "LSTM state size per direction [default: 200]"),
    ("use-char-cnn", "true/false [default: true]"),
    ("train-word-delta", "Learn a per-word delta on top of the static vectors [default: false]"),
    ("max-seq-length", "Sentences are truncated to this many tokens [default: 512]"),
    ("min-count", "Minimum word frequency for the vocabulary [default: 1]"),
];

const TRAIN_KEYS: &[(&str, &str)] = &[
    ("learning-rate", "Adam learning rate [default: 0.001]"),
    ("batch-size", "Sentences per batch [default: 64]"),
    ("max-epochs", "Epoch limit [default: 30]"),
    ("dropout", "Dropout rate [default: 0.5]"),
    ("beta1", "Adam beta1 [default: 0.9]"),
    ("beta2", "Adam beta2 [default: 0.999]"),
    ("epsilon", "Adam epsilon [default: 1e-8]"),
    ("warmup-steps", "Linear warmup steps [default: 3000]"),
    ("patience", "Early-stopping patience in epochs [default: 5]"),
    ("grad-clip-norm", "Global gradient-norm clip [default: 5.0]"),
    ("seed", "Random seed [default: 42]"),
];

fn cli() -> Command {
    let mut train = corpus_args(common_args(
        Command::new("train").about("Train a tagger (or grid-search one) and write the model, metrics log and validation report"),
    ))
    .arg(opt("train", "Training corpus").value_name("FILE"))
    .arg(opt("val", "Validation corpus").value_name("FILE"))
    .arg(opt("schema", "Entity-type inventory, one type per line").value_name("FILE"))
    .arg(opt("embeddings", "Word vectors in text format").value_name("FILE"))
    .arg(opt("embed-dim", "Dimension of the word vectors"))
    .arg(opt("oov-policy", "zero, unk_row or lowercase_then_unk [default: lowercase_then_unk]"))
    .arg(opt("grid", "Hyperparameter grid: `key = v1, v2` per line").value_name("FILE"));
    for (k, h) in MODEL_KEYS.iter().chain(TRAIN_KEYS) {
        train = train.arg(opt(k, h));
    }

    let predict = common_args(Command::new("predict").about("Tag raw text or CoNLL input and emit chunk records"))
        .arg(Arg::new("input").required(true).action(ArgAction::Append).help("Input files"))
        .arg(opt("model", "Model file").value_name("FILE"))
        .arg(opt("input-format", "text, conll4 or tsv2 [default: text]"))
        .arg(opt("schema", "Expected entity-type inventory; must match the model").value_name("FILE"))
        .arg(opt("min-confidence", "Drop chunks below this confidence [default: 0]"))
        .arg(opt("confidence-rule", "min or geometric_mean [default: min]"));

    let evaluate = corpus_args(common_args(
        Command::new("evaluate").about("Score predictions against a gold corpus"),
    ))
    .arg(opt("gold", "Gold corpus").value_name("FILE"))
    .arg(opt("pred", "Predicted corpus in the same layout").value_name("FILE"))
    .arg(opt("model", "Model used to predict on the gold tokens instead of --pred").value_name("FILE"))
    .arg(opt("min-micro-f1", "Fail with exit code 1 when micro-F1 falls below this"))
    .arg(opt("token-level", "true: gate on token-level micro-F1 instead of entity-level [default: false]"));

    let deidentify = common_args(Command::new("deidentify").about("Mask or substitute protected spans in raw text"))
        .arg(Arg::new("input").required(true).action(ArgAction::Append).help("Raw text files"))
        .arg(opt("spans", "Gold spans as chunk records").value_name("FILE"))
        .arg(opt("model", "Model that supplies the spans instead of --spans").value_name("FILE"))
        .arg(opt("policy", "Policy file: `Type = mask` or `Type = substitute:<dict>` per line").value_name("FILE"))
        .arg(opt("seed", "Seed for substitutions [default: 42]"))
        .arg(opt("min-confidence", "Ignore model chunks below this confidence [default: 0]"));

    let convert = common_args(Command::new("convert").about("Convert between corpus formats and tagging schemes"))
        .arg(Arg::new("input").required(true).help("Input corpus"))
        .arg(opt("from", "conll4 or tsv2").value_parser(["conll4", "tsv2"]))
        .arg(opt("to", "conll4, tsv2 or chunk-records").value_parser(["conll4", "tsv2", "chunk-records"]))
        .arg(opt("from-scheme", "IOB1 or IOB2 [default: IOB2]"))
        .arg(opt("to-scheme", "IOB1 or IOB2 [default: IOB2]"))
        .arg(opt("output", "Output file name inside --out-dir"));

    Command::new("medner")
        .about("Biomedical named entity recognition and de-identification")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands([train, predict, evaluate, deidentify, convert])
}

fn settings_for(name: &str, sub: &ArgMatches) -> Result<Settings, CliError> {
    let mut settings = match sub.get_one::<String>("config") {
        Some(path) => Settings::parse_file(path.as_ref())?,
        None => Settings::default(),
    };
    settings.overlay(sub);
    let cmd = cli();
    let known: Vec<String> = cmd
        .find_subcommand(name)
        .map(|c| c.get_arguments().map(|a| settings::normalize_key(a.get_id().as_str())).collect())
        .unwrap_or_default();
    for (k, _) in settings.keys() {
        if !known.iter().any(|x| x == k) {
            log::warn!("ignoring setting `{k}`, which `{name}` does not use");
        }
    }
    Ok(settings)
}

fn run(matches: ArgMatches) -> Result<(), CliError> {
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let settings = settings_for(name, sub)?;
    let inputs: Vec<String> = sub
        .try_get_many::<String>("input")
        .ok()
        .flatten()
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    match name {
        "train" => commands::train(&settings),
        "predict" => commands::predict(&settings, &inputs),
        "evaluate" => commands::evaluate(&settings),
        "deidentify" => commands::deidentify(&settings, &inputs),
        "convert" => commands::convert(&settings, &inputs[0]),
        _ => unreachable!("unknown subcommand {name}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
