//! Joint training over several criteria with Adam, gradient clipping and
//! early stopping on the macro-averaged dev F1.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{CriterionId, TaggedSentence, WordSentence};
use crate::error::{contract, Error, Result};
use crate::model::SegModel;
use crate::nn::{Adam, AdamConfig, Tape};
use crate::scorer::{score_corpus, Score};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-3,
            seed: 1,
            patience: 5,
            batch_size: 32,
            dropout: 0.2,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, batch_size and patience must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!("invalid clip norm {}", self.clip_norm)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionScore {
    pub criterion: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub gold: usize,
    pub pred: usize,
}

impl CriterionScore {
    fn new(c: &CriterionId, s: Score) -> Self {
        CriterionScore {
            criterion: c.name().to_owned(),
            precision: s.precision(),
            recall: s.recall(),
            f1: s.f1(),
            correct: s.correct,
            gold: s.gold,
            pred: s.pred,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub grad_norm: f64,
    pub dev: Vec<CriterionScore>,
    pub macro_f1: f64,
    pub improved: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_macro_f1: f64,
}

impl TrainReport {
    /// Same report with wall-clock timings zeroed.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        for e in &mut r.epochs {
            e.seconds = 0.0;
        }
        r
    }
}

/// Concatenates per-criterion training sets, checking each sentence is
/// wrapped with the markers of its key.
pub fn merge_datasets(sets: &BTreeMap<CriterionId, Vec<TaggedSentence>>) -> Result<Vec<TaggedSentence>> {
    let mut out = Vec::new();
    for (c, sentences) in sets {
        for (i, s) in sentences.iter().enumerate() {
            let open = s.tokens.first() == Some(&c.open_marker());
            let close = s.tokens.last() == Some(&c.close_marker());
            if s.criterion != *c || !open || !close {
                return contract(format!("sentence {} of <{c}> is not wrapped with its markers", i + 1));
            }
            out.push(s.clone());
        }
    }
    Ok(out)
}

/// Segments every dev sentence under `criterion` and scores it against the
/// gold words, both in surface form.
pub fn evaluate(model: &SegModel, dev: &[WordSentence], criterion: &CriterionId) -> Result<Score> {
    model.check_criterion(criterion)?;
    let pairs = dev
        .iter()
        .map(|s| Ok((s.word_strings(), model.segment(&s.text(), criterion)?)))
        .collect::<Result<Vec<_>>>()?;
    score_corpus(&pairs)
}

/// Trains `model` in place. On return the model holds the parameters of the
/// best dev epoch.
pub fn train(
    model: &mut SegModel,
    train: &[TaggedSentence],
    dev: &BTreeMap<CriterionId, Vec<WordSentence>>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochReport),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus("training set"));
    }
    if dev.is_empty() || dev.values().any(Vec::is_empty) {
        return Err(Error::EmptyCorpus("dev set"));
    }
    for c in dev.keys() {
        model.check_criterion(c)?;
    }
    for (i, s) in train.iter().enumerate() {
        model
            .check_criterion(&s.criterion)
            .map_err(|e| Error::Contract(format!("training sentence {}: {e}", i + 1)))?;
    }
    model.set_dropout(cfg.dropout)?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d809);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::NEG_INFINITY, 0, model.params().clone());
    let mut stale = 0;
    let mut epochs = Vec::new();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut total_loss = 0.0;
        let mut norm_sum = 0.0;
        let batches = order.chunks(cfg.batch_size);
        let n_batches = batches.len();
        for (b, batch) in batches.enumerate() {
            model.params_mut().zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut tape = Tape::new();
                let loss = model.sentence_loss(&mut tape, &train[i], Some(&mut dropout_rng))?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
                }
                total_loss += value;
                let scaled = tape.scale(loss, scale);
                tape.backward(scaled, model.params_mut())?;
            }
            norm_sum += model.params_mut().clip_grad_norm(cfg.clip_norm);
            adam.step(model.params_mut())?;
        }

        let dev_scores = dev
            .iter()
            .map(|(c, sentences)| Ok(CriterionScore::new(c, evaluate(model, sentences, c)?)))
            .collect::<Result<Vec<_>>>()?;
        let macro_f1 = dev_scores.iter().map(|s| s.f1).sum::<f64>() / dev_scores.len() as f64;
        let improved = macro_f1 > best.0;
        if improved {
            best = (macro_f1, epoch, model.params().clone());
            stale = 0;
        } else {
            stale += 1;
        }
        let report = EpochReport {
            epoch,
            mean_loss: total_loss / train.len() as f64,
            grad_norm: norm_sum / n_batches as f64,
            dev: dev_scores,
            macro_f1,
            improved,
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&report);
        epochs.push(report);
        if stale >= cfg.patience {
            break;
        }
    }

    model.params_mut().copy_values_from(&best.2);
    Ok(TrainReport {
        epochs,
        best_epoch: best.1,
        best_macro_f1: best.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{words_to_bmes, wrap_with_criterion};
    use crate::model::Hyperparams;
    use crate::vocab::Vocab;

    fn crit(s: &str) -> CriterionId {
        CriterionId::new(s).unwrap()
    }

    fn sentence(words: &[&str], c: &str) -> WordSentence {
        WordSentence::from_words(words, crit(c)).unwrap()
    }

    fn setup() -> (SegModel, Vec<TaggedSentence>, BTreeMap<CriterionId, Vec<WordSentence>>) {
        let a = vec![
            sentence(&["李", "乐", "到达", "公司", "。"], "a"),
            sentence(&["奔驰", "公司", "到达", "。"], "a"),
        ];
        let b = vec![
            sentence(&["李乐", "到达", "公司", "。"], "b"),
            sentence(&["奔驰公司", "到达", "。"], "b"),
        ];
        let mut sets = BTreeMap::new();
        for (k, v) in [("a", &a), ("b", &b)] {
            let tagged = v
                .iter()
                .map(|s| wrap_with_criterion(&words_to_bmes(s).unwrap()).unwrap())
                .collect();
            sets.insert(crit(k), tagged);
        }
        let data = merge_datasets(&sets).unwrap();
        let vocab = Vocab::build(&data, 1).unwrap();
        let h = Hyperparams {
            d_char: 8,
            d_bigram: 4,
            d_hidden: 8,
            dropout: 0.0,
        };
        let model = SegModel::new(vocab, h, vec![crit("a"), crit("b")], 3).unwrap();
        let dev = BTreeMap::from([(crit("a"), a), (crit("b"), b)]);
        (model, data, dev)
    }

    #[test]
    fn merge_checks_markers() {
        let s = sentence(&["李乐"], "a");
        let tagged = wrap_with_criterion(&words_to_bmes(&s).unwrap()).unwrap();
        let ok = BTreeMap::from([(crit("a"), vec![tagged.clone()])]);
        assert_eq!(merge_datasets(&ok).unwrap().len(), 1);
        let wrong = BTreeMap::from([(crit("b"), vec![tagged])]);
        assert!(merge_datasets(&wrong).is_err());
        let bare = BTreeMap::from([(crit("a"), vec![words_to_bmes(&s).unwrap()])]);
        assert!(merge_datasets(&bare).is_err());
    }

    #[test]
    fn training_learns_both_criteria() {
        let (mut m, data, dev) = setup();
        let cfg = TrainConfig {
            epochs: 150,
            lr: 0.01,
            batch_size: 2,
            dropout: 0.0,
            patience: 150,
            ..Default::default()
        };
        let report = train(&mut m, &data, &dev, &cfg, |_| {}).unwrap();
        assert_eq!(report.best_macro_f1, 1.0);
        assert_eq!(m.segment("李乐到达公司。", &crit("a")).unwrap(), vec!["李", "乐", "到达", "公司", "。"]);
        assert_eq!(m.segment("李乐到达公司。", &crit("b")).unwrap(), vec!["李乐", "到达", "公司", "。"]);
    }

    #[test]
    fn patience_stops_a_plateau() {
        let (mut m, data, dev) = setup();
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 20,
            lr: 0.0,
            patience: 2,
            ..Default::default()
        };
        let mut seen = 0;
        let report = train(&mut m, &data, &dev, &cfg, |_| seen += 1).unwrap();
        assert_eq!(report.best_epoch, 1);
        assert_eq!(report.epochs.len(), 3);
        assert_eq!(seen, 3);
        for (a, b) in m.params().iter().zip(before.params().iter()) {
            assert_eq!(a.tensor.values(), b.tensor.values());
        }
    }

    #[test]
    fn best_checkpoint_is_restored() {
        let (mut m, data, dev) = setup();
        let cfg = TrainConfig {
            epochs: 6,
            lr: 0.05,
            batch_size: 1,
            dropout: 0.0,
            ..Default::default()
        };
        let report = train(&mut m, &data, &dev, &cfg, |_| {}).unwrap();
        let best = &report.epochs[report.best_epoch - 1];
        for (c, sentences) in &dev {
            let s = evaluate(&m, sentences, c).unwrap();
            let logged = best.dev.iter().find(|d| d.criterion == c.name()).unwrap();
            assert_eq!(s.f1(), logged.f1);
        }
    }

    #[test]
    fn same_seed_same_run() {
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.01,
            batch_size: 2,
            ..Default::default()
        };
        let run = || {
            let (mut m, data, dev) = setup();
            let r = train(&mut m, &data, &dev, &cfg, |_| {}).unwrap();
            (m, r.without_timing())
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn invalid_inputs() {
        let (mut m, data, dev) = setup();
        let cfg = TrainConfig::default();
        assert!(matches!(train(&mut m, &[], &dev, &cfg, |_| {}), Err(Error::EmptyCorpus(_))));
        assert!(matches!(
            train(&mut m, &data, &BTreeMap::new(), &cfg, |_| {}),
            Err(Error::EmptyCorpus(_))
        ));
        let bad = TrainConfig {
            batch_size: 0,
            ..cfg
        };
        assert!(matches!(train(&mut m, &data, &dev, &bad, |_| {}), Err(Error::Config(_))));
        let unknown = BTreeMap::from([(crit("zz"), vec![sentence(&["李"], "zz")])]);
        assert!(matches!(
            train(&mut m, &data, &unknown, &cfg, |_| {}),
            Err(Error::UnknownCriterion { .. })
        ));
    }
}
