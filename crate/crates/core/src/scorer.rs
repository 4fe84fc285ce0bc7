//! Word-level precision, recall and F1 over span sets, micro-averaged
//! across sentences.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use crate::error::{contract, Error, Result};

/// Half-open character offsets of each word.
pub fn words_to_spans<S: AsRef<str>>(words: &[S]) -> Result<Vec<Range<usize>>> {
    let mut spans = Vec::with_capacity(words.len());
    let mut start = 0;
    for w in words {
        let len = w.as_ref().chars().count();
        if len == 0 {
            return contract("empty word in segmentation");
        }
        spans.push(start..start + len);
        start += len;
    }
    Ok(spans)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Score {
    pub correct: usize,
    pub gold: usize,
    pub pred: usize,
}

impl Score {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.pred)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    /// `2PR / (P + R)`, which reduces to `2 correct / (gold + pred)`.
    pub fn f1(&self) -> f64 {
        let (num, den) = self.f1_ratio();
        ratio(num, den)
    }

    /// F1 as an exact fraction `(numerator, denominator)`.
    pub fn f1_ratio(&self) -> (usize, usize) {
        if self.correct == 0 {
            (0, 1)
        } else {
            (2 * self.correct, self.gold + self.pred)
        }
    }

    pub fn merge(self, other: Score) -> Score {
        Score {
            correct: self.correct + other.correct,
            gold: self.gold + other.gold,
            pred: self.pred + other.pred,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P={:.6} R={:.6} F1={:.6} correct={} gold={} pred={}",
            self.precision(),
            self.recall(),
            self.f1(),
            self.correct,
            self.gold,
            self.pred
        )
    }
}

pub fn score_sentence<G: AsRef<str>, P: AsRef<str>>(gold: &[G], pred: &[P]) -> Result<Score> {
    let g: String = gold.iter().map(AsRef::as_ref).collect();
    let p: String = pred.iter().map(AsRef::as_ref).collect();
    if g != p {
        return contract(format!("gold text `{g}` differs from predicted text `{p}`"));
    }
    let gs = words_to_spans(gold)?;
    let ps: HashSet<Range<usize>> = words_to_spans(pred)?.into_iter().collect();
    let correct = gs.iter().filter(|s| ps.contains(s)).count();
    Ok(Score {
        correct,
        gold: gs.len(),
        pred: ps.len(),
    })
}

/// Micro-average: counts are summed before dividing.
pub fn score_corpus<G: AsRef<str>, P: AsRef<str>>(pairs: &[(Vec<G>, Vec<P>)]) -> Result<Score> {
    pairs
        .iter()
        .enumerate()
        .try_fold(Score::default(), |acc, (i, (g, p))| {
            score_sentence(g, p)
                .map(|s| acc.merge(s))
                .map_err(|e| Error::Contract(format!("sentence {}: {e}", i + 1)))
        })
}
