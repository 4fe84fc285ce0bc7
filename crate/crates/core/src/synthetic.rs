//! Toy two-standard corpora for tests and demos.
//!
//! Every character belongs to exactly one lexicon entry. Compound entries
//! consist of two parts; the `split` standard writes them as two words and
//! the `joined` standard as one, so the same text has two gold segmentations.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CriterionId, WordSentence};
use crate::error::Result;

/// First code point of the character pool (CJK Unified Ideographs).
const POOL_START: u32 = 0x4E00;
const POOL_SIZE: u32 = 0x5000;
pub const FULL_STOP: &str = "。";

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconConfig {
    pub singles: usize,
    pub words: usize,
    pub compounds: usize,
    /// Sampling weight of entry `r` is `1 / (r + 1)^zipf`; 0 is uniform.
    pub zipf: f64,
    pub min_units: usize,
    pub max_units: usize,
    pub compound_rate: f64,
    /// Entries added verbatim; their characters are excluded from the pool.
    pub fixed: Vec<Unit>,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        LexiconConfig {
            singles: 8,
            words: 24,
            compounds: 16,
            zipf: 0.0,
            min_units: 3,
            max_units: 6,
            compound_rate: 0.35,
            fixed: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Unit {
    Word(String),
    Compound(String, String),
}

impl Unit {
    pub fn text(&self) -> String {
        match self {
            Unit::Word(w) => w.clone(),
            Unit::Compound(a, b) => format!("{a}{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSentence {
    pub units: Vec<Unit>,
}

impl SyntheticSentence {
    pub fn text(&self) -> String {
        self.units.iter().map(Unit::text).collect()
    }

    pub fn has_compound(&self) -> bool {
        self.units.iter().any(|u| matches!(u, Unit::Compound(..)))
    }

    /// Words under the standard that splits compounds.
    pub fn split_words(&self) -> Vec<String> {
        self.units
            .iter()
            .flat_map(|u| match u {
                Unit::Word(w) => vec![w.clone()],
                Unit::Compound(a, b) => vec![a.clone(), b.clone()],
            })
            .collect()
    }

    /// Words under the standard that keeps compounds whole.
    pub fn joined_words(&self) -> Vec<String> {
        self.units.iter().map(Unit::text).collect()
    }

    pub fn split_sentence(&self, c: &CriterionId) -> Result<WordSentence> {
        WordSentence::from_words(&self.split_words(), c.clone())
    }

    pub fn joined_sentence(&self, c: &CriterionId) -> Result<WordSentence> {
        WordSentence::from_words(&self.joined_words(), c.clone())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticLanguage {
    entries: Vec<Unit>,
    weights: WeightedIndex<f64>,
    compounds: Vec<usize>,
    cfg: LexiconConfig,
}

impl SyntheticLanguage {
    pub fn new(cfg: LexiconConfig, seed: u64) -> Self {
        assert!(cfg.compounds > 0 && cfg.min_units >= 1 && cfg.min_units <= cfg.max_units);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let needed = (cfg.singles + 2 * cfg.words + 4 * cfg.compounds) as u32;
        assert!(needed < POOL_SIZE);
        let reserved: String = cfg.fixed.iter().map(Unit::text).collect();
        let mut pool: Vec<char> = (0..POOL_SIZE)
            .filter_map(|i| char::from_u32(POOL_START + i))
            .filter(|c| !reserved.contains(*c))
            .collect();
        pool.shuffle(&mut rng);
        let mut chars = pool.into_iter();
        let mut take = |n: usize| -> String { chars.by_ref().take(n).collect() };
        let mut entries = cfg.fixed.clone();
        for _ in 0..cfg.singles {
            entries.push(Unit::Word(take(1)));
        }
        for _ in 0..cfg.words {
            entries.push(Unit::Word(take(2)));
        }
        for _ in 0..cfg.compounds {
            let a = rng.random_range(1..=2);
            let b = rng.random_range(1..=2);
            entries.push(Unit::Compound(take(a), take(b)));
        }
        // Frequency rank is a random permutation of the entries.
        entries.shuffle(&mut rng);
        let weights = WeightedIndex::new((0..entries.len()).map(|r| 1.0 / ((r + 1) as f64).powf(cfg.zipf)))
            .expect("positive weights");
        let compounds = entries
            .iter()
            .enumerate()
            .filter(|(_, u)| matches!(u, Unit::Compound(..)))
            .map(|(i, _)| i)
            .collect();
        SyntheticLanguage {
            entries,
            weights,
            compounds,
            cfg,
        }
    }

    pub fn entries(&self) -> &[Unit] {
        &self.entries
    }

    /// Share of multi-character entries that the two standards segment
    /// differently.
    pub fn conflict_rate(&self) -> f64 {
        let multi = self.entries.iter().filter(|u| u.text().chars().count() > 1).count();
        self.compounds.len() as f64 / multi as f64
    }

    /// Draws a sentence ending in a full stop. With `force_compound` at least
    /// one compound is included.
    pub fn sentence<R: Rng + ?Sized>(&self, rng: &mut R, force_compound: bool) -> SyntheticSentence {
        let n = rng.random_range(self.cfg.min_units..=self.cfg.max_units);
        let mut units: Vec<Unit> = (0..n)
            .map(|_| {
                if rng.random_bool(self.cfg.compound_rate) {
                    self.entries[self.compounds[rng.random_range(0..self.compounds.len())]].clone()
                } else {
                    self.entries[self.weights.sample(rng)].clone()
                }
            })
            .collect();
        if force_compound && !units.iter().any(|u| matches!(u, Unit::Compound(..))) {
            let at = rng.random_range(0..units.len());
            units[at] = self.entries[self.compounds[rng.random_range(0..self.compounds.len())]].clone();
        }
        units.push(Unit::Word(FULL_STOP.to_owned()));
        SyntheticSentence { units }
    }

    pub fn sentences(&self, n: usize, seed: u64, force_compound: bool) -> Vec<SyntheticSentence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sentence(&mut rng, force_compound)).collect()
    }
}
