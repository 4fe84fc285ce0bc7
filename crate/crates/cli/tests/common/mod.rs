#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use mcseg_cli::config::Settings;
use mcseg_cli::prepare_training;
use mcseg_core::corpus::{CharMap, CriterionId, TaggedSentence, WordSentence};
use mcseg_core::model::{Hyperparams, SegModel};
use mcseg_core::trainer::merge_datasets;
use mcseg_core::vocab::Vocab;

pub fn crit(name: &str) -> CriterionId {
    CriterionId::new(name).unwrap()
}

/// Runs the CLI in-process and returns `(exit code, stdout, stderr)`.
pub fn run_cli(args: &[&str], stdin: &str) -> (i32, String, String) {
    let mut input = stdin.as_bytes();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["mcseg"];
    argv.extend_from_slice(args);
    let code = mcseg_cli::run(argv, &mut input, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

pub fn write_corpus(path: &Path, sentences: &[WordSentence]) {
    let mut f = std::fs::File::create(path).unwrap();
    for s in sentences {
        writeln!(f, "{}", s.word_strings().join(" ")).unwrap();
    }
}

/// The training pipeline applied to each criterion's sentences, merged.
pub fn training_data(sets: &BTreeMap<CriterionId, Vec<WordSentence>>) -> Vec<TaggedSentence> {
    let settings = Settings::default();
    let tagged = sets
        .iter()
        .map(|(c, s)| (c.clone(), prepare_training(s, &settings, &CharMap::identity()).unwrap()))
        .collect();
    merge_datasets(&tagged).unwrap()
}

pub fn fresh_model(data: &[TaggedSentence], hyper: Hyperparams, seed: u64) -> SegModel {
    fresh_model_with(data, hyper, seed, 1)
}

pub fn fresh_model_with(data: &[TaggedSentence], hyper: Hyperparams, seed: u64, min_count: usize) -> SegModel {
    let mut criteria: Vec<CriterionId> = data.iter().map(|s| s.criterion.clone()).collect();
    criteria.dedup();
    SegModel::new(Vocab::build(data, min_count).unwrap(), hyper, criteria, seed).unwrap()
}
