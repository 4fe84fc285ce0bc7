//! The `mcseg` command line: `train`, `segment`, `eval` and `inspect`.
//!
//! Commands write results to the given output stream and progress or
//! diagnostics to the error stream, and return a process exit status.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mcseg_core::container;
use mcseg_core::corpus::{
    read_segmented_corpus, split_by_punctuation, words_to_bmes, wrap_with_criterion, CharMap, CriterionId,
    Splitters, TaggedSentence, WordSentence,
};
use mcseg_core::model::SegModel;
use mcseg_core::scorer::{score_sentence, Score};
use mcseg_core::trainer::{self, merge_datasets};
use mcseg_core::vocab::Vocab;
use mcseg_core::Error;

use config::{parse_config, Settings, SEED_ENV};

pub const EXIT_OK: i32 = 0;
/// Usage errors, unreadable inputs, invalid configuration, unknown criteria
/// and corrupt model files.
pub const EXIT_USAGE: i32 = 2;
/// Aborted training and eval mismatches.
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mcseg", version, about = "Multi-criteria Chinese word segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Train a joint model on one or more segmented corpora.
    Train(TrainArgs),
    /// Segment raw text, one sentence per line.
    Segment(SegmentArgs),
    /// Score a predicted segmentation against gold.
    Eval(EvalArgs),
    /// Print a model summary and parameter census.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training corpus as `criterion=path`; repeat once per criterion.
    #[arg(long = "train", value_name = "NAME=PATH", required = true, value_parser = named_path)]
    pub train: Vec<(CriterionId, PathBuf)>,
    /// Dev corpus as `criterion=path`; repeatable.
    #[arg(long = "dev", value_name = "NAME=PATH", required = true, value_parser = named_path)]
    pub dev: Vec<(CriterionId, PathBuf)>,
    /// Where to write the best checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat `key=value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed (default: $MCSEG_SEED, else 1).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tab-separated `src<TAB>dst` character map, e.g. traditional to simplified.
    #[arg(long)]
    pub char_map: Option<PathBuf>,
    /// Replace both ASCII letter and digit runs with one `<X>` token.
    #[arg(long)]
    pub unified_placeholders: bool,
    #[arg(long)]
    pub d_char: Option<usize>,
    #[arg(long)]
    pub d_bigram: Option<usize>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub criterion: String,
    /// Read from this file instead of standard input.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
}

fn named_path(s: &str) -> Result<(CriterionId, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected NAME=PATH")?;
    let id = CriterionId::new(name).map_err(|e| e.to_string())?;
    if path.is_empty() {
        return Err("empty path".into());
    }
    Ok((id, PathBuf::from(path)))
}

/// A failed command: exit status plus message for the error stream.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_) => EXIT_FAILURE,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = write!(err, "{}", e.render());
            return EXIT_USAGE;
        }
        Err(e) => {
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, err),
        Command::Segment(a) => cmd_segment(&a, input, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Inspect(a) => cmd_inspect(&a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn read_corpus(path: &Path, c: &CriterionId) -> Result<Vec<WordSentence>, Failure> {
    let sentences =
        read_segmented_corpus(open(path)?, c).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if sentences.is_empty() {
        return Err(Failure::usage(format!("{}: corpus is empty", path.display())));
    }
    Ok(sentences)
}

/// Resolves settings: defaults, then `MCSEG_SEED`, then the config file,
/// then flags.
pub fn resolve_settings(a: &TrainArgs) -> Result<Settings, Failure> {
    let mut s = Settings::default();
    if let Ok(seed) = std::env::var(SEED_ENV) {
        s.set("seed", &seed).map_err(|e| Failure::usage(format!("{SEED_ENV}: {e}")))?;
    }
    if let Some(path) = &a.config {
        let text =
            std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        for (k, v) in parse_config(&text).map_err(Failure::usage)? {
            s.set(&k, &v).map_err(Failure::usage)?;
        }
    }
    let flags: [(&str, Option<String>); 11] = [
        ("seed", a.seed.map(|v| v.to_string())),
        ("d_char", a.d_char.map(|v| v.to_string())),
        ("d_bigram", a.d_bigram.map(|v| v.to_string())),
        ("d_hidden", a.d_hidden.map(|v| v.to_string())),
        ("dropout", a.dropout.map(|v| v.to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("patience", a.patience.map(|v| v.to_string())),
        ("clip_norm", a.clip_norm.map(|v| v.to_string())),
        ("min_count", a.min_count.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            s.set(k, &v).map_err(Failure::usage)?;
        }
    }
    if a.unified_placeholders {
        s.set("placeholders", "unified").map_err(Failure::usage)?;
    }
    s.validate().map_err(Failure::usage)?;
    Ok(s)
}

/// Char-map, normalize, split at punctuation, tag and wrap one corpus.
pub fn prepare_training(
    sentences: &[WordSentence],
    settings: &Settings,
    char_map: &CharMap,
) -> Result<Vec<TaggedSentence>, Error> {
    let splitters = Splitters::default();
    let mut out = Vec::new();
    for s in sentences {
        let normalized = char_map.apply(s).normalized(settings.placeholders);
        for piece in split_by_punctuation(&normalized, &splitters) {
            out.push(wrap_with_criterion(&words_to_bmes(&piece)?)?);
        }
    }
    Ok(out)
}

fn cmd_train(a: &TrainArgs, err: &mut dyn Write) -> Result<(), Failure> {
    let settings = resolve_settings(a)?;
    let char_map = match &a.char_map {
        Some(p) => CharMap::from_reader(open(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => CharMap::identity(),
    };
    let mut train_sets = BTreeMap::new();
    for (c, path) in &a.train {
        if train_sets.contains_key(c) {
            return Err(Failure::usage(format!("criterion `{c}` given twice with --train")));
        }
        let raw = read_corpus(path, c)?;
        train_sets.insert(c.clone(), prepare_training(&raw, &settings, &char_map)?);
    }
    let mut dev = BTreeMap::new();
    for (c, path) in &a.dev {
        if !train_sets.contains_key(c) {
            return Err(Failure::usage(format!("dev criterion `{c}` has no training corpus")));
        }
        dev.entry(c.clone()).or_insert_with(Vec::new).extend(read_corpus(path, c)?);
    }
    let data = merge_datasets(&train_sets)?;
    let vocab = Vocab::build(&data, settings.min_count)?;
    let criteria = train_sets.keys().cloned().collect();
    let mut model = SegModel::new(vocab, settings.hyper, criteria, settings.train.seed)?
        .with_normalize(settings.placeholders)
        .with_char_map(char_map);
    trainer::train(&mut model, &data, &dev, &settings.train, |epoch| {
        if let Ok(line) = serde_json::to_string(epoch) {
            let _ = writeln!(err, "{line}");
        }
    })?;
    container::save(&model, &a.out).map_err(|e| Failure::usage(format!("{}: {e}", a.out.display())))?;
    Ok(())
}

fn load_model(path: &Path) -> Result<SegModel, Failure> {
    container::load(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn cmd_segment(a: &SegmentArgs, stdin: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let criterion = CriterionId::new(&a.criterion).map_err(|e| Failure::usage(e.to_string()))?;
    model.check_criterion(&criterion)?;
    let mut file;
    let input: &mut dyn BufRead = match &a.input {
        Some(p) => {
            file = open(p)?;
            &mut file
        }
        None => stdin,
    };
    let io = |e: std::io::Error| Failure::usage(e.to_string());
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line).map_err(io)? == 0 {
            break;
        }
        let words = model.segment(line.trim_end_matches(['\n', '\r']), &criterion)?;
        writeln!(out, "{}", words.join(" ")).map_err(io)?;
        out.flush().map_err(io)?;
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let gold = read_lines(&a.gold)?;
    let pred = read_lines(&a.pred)?;
    let mut total = Score::default();
    for i in 0..gold.len().max(pred.len()) {
        let mismatch = |msg: String| Failure {
            code: EXIT_FAILURE,
            message: format!("line {}: {msg}", i + 1),
        };
        let (Some(g), Some(p)) = (gold.get(i), pred.get(i)) else {
            return Err(mismatch(format!(
                "gold has {} lines but prediction has {}",
                gold.len(),
                pred.len()
            )));
        };
        let g: Vec<&str> = g.split_whitespace().collect();
        let p: Vec<&str> = p.split_whitespace().collect();
        total = total.merge(score_sentence(&g, &p).map_err(|e| mismatch(e.to_string()))?);
    }
    writeln!(out, "{total}").map_err(|e| Failure::usage(e.to_string()))?;
    Ok(())
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let h = model.hyper();
    let v = model.vocab();
    let mut text = format!(
        "format {} {}\nd_char {}\nd_bigram {}\nd_hidden {}\ndropout {}\nplaceholders {}\n",
        container::MAGIC,
        container::VERSION,
        h.d_char,
        h.d_bigram,
        h.d_hidden,
        h.dropout,
        model.normalize_mode().name()
    );
    let names: Vec<&str> = model.criteria().iter().map(CriterionId::name).collect();
    text += &format!("criteria {}\n", names.join(" "));
    text += &format!("char_map_entries {}\n", model.char_map().pairs().len());
    text += &format!("unigrams {}\nbigrams {}\n", v.unigram_len(), v.bigram_len());
    for c in model.criteria() {
        let n = v.bigrams_touching(c.open_marker().as_str()) + v.bigrams_touching(c.close_marker().as_str());
        text += &format!("marker_bigrams {} {n}\n", c.name());
    }
    for (name, shape, count) in model.census() {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        text += &format!("param {name} [{}] {count}\n", dims.join(", "));
    }
    text += &format!("total_parameters {}\n", model.num_parameters());
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::usage(e.to_string()))
}
