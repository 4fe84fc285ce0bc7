//! Unigram and forward-bigram vocabularies.

use std::collections::HashMap;

use crate::corpus::{is_criterion_marker, TaggedSentence, Token};
use crate::error::{contract, Error, Result};

/// Index of the unknown entry in both tables.
pub const UNK: usize = 0;
pub const UNK_TOKEN: &str = "<UNK>";
/// Right-hand pad for the bigram at the last position.
pub const BOUNDARY_TOKEN: &str = "</s>";

/// Frequency counts gathered before freezing into a [`Vocab`].
#[derive(Debug, Default, Clone)]
pub struct VocabBuilder {
    unigrams: HashMap<String, usize>,
    bigrams: HashMap<(String, String), usize>,
    markers: Vec<String>,
}

impl VocabBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_tokens(&mut self, tokens: &[Token]) {
        for (i, t) in tokens.iter().enumerate() {
            *self.unigrams.entry(t.as_str().to_owned()).or_default() += 1;
            if is_criterion_marker(t) && !self.markers.iter().any(|m| m == t.as_str()) {
                self.markers.push(t.as_str().to_owned());
            }
            let next = tokens.get(i + 1).map_or(BOUNDARY_TOKEN, Token::as_str);
            *self
                .bigrams
                .entry((t.as_str().to_owned(), next.to_owned()))
                .or_default() += 1;
        }
    }

    /// Freezes the counts. Tokens below `min_count` map to UNK, except
    /// criterion markers, which are always kept.
    pub fn freeze(self, min_count: usize) -> Result<Vocab> {
        if self.unigrams.is_empty() {
            return Err(Error::EmptyCorpus("cannot build a vocabulary from no tokens"));
        }
        let mut uni: Vec<(String, usize)> = self
            .unigrams
            .into_iter()
            .filter(|(t, c)| *c >= min_count || self.markers.contains(t))
            .collect();
        uni.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut bi: Vec<((String, String), usize)> = self
            .bigrams
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        bi.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let unigrams = std::iter::once(UNK_TOKEN.to_owned())
            .chain(uni.into_iter().map(|(t, _)| t))
            .collect();
        let bigrams = std::iter::once((UNK_TOKEN.to_owned(), UNK_TOKEN.to_owned()))
            .chain(bi.into_iter().map(|(k, _)| k))
            .collect();
        Vocab::from_lists(unigrams, bigrams)
    }
}

/// Frozen token and bigram index tables. Lookups never mutate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    unigram_list: Vec<String>,
    bigram_list: Vec<(String, String)>,
    unigram_index: HashMap<String, usize>,
    bigram_index: HashMap<String, HashMap<String, usize>>,
}

impl Vocab {
    /// Builds from already-wrapped, normalized sentences.
    pub fn build(sentences: &[TaggedSentence], min_count: usize) -> Result<Vocab> {
        let mut b = VocabBuilder::new();
        for s in sentences {
            b.add_tokens(&s.tokens);
        }
        b.freeze(min_count)
    }

    /// Rebuilds from token lists in index order; entry 0 must be UNK.
    pub fn from_lists(unigrams: Vec<String>, bigrams: Vec<(String, String)>) -> Result<Vocab> {
        if unigrams.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Format("unigram list must start with <UNK>".into()));
        }
        if bigrams.first().map(|(a, b)| (a.as_str(), b.as_str())) != Some((UNK_TOKEN, UNK_TOKEN)) {
            return Err(Error::Format("bigram list must start with <UNK> <UNK>".into()));
        }
        let mut unigram_index = HashMap::with_capacity(unigrams.len());
        for (i, t) in unigrams.iter().enumerate().skip(1) {
            if unigram_index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate unigram `{t}`")));
            }
        }
        let mut bigram_index: HashMap<String, HashMap<String, usize>> = HashMap::new();
        for (i, (a, b)) in bigrams.iter().enumerate().skip(1) {
            if bigram_index
                .entry(a.clone())
                .or_default()
                .insert(b.clone(), i)
                .is_some()
            {
                return Err(Error::Format(format!("duplicate bigram `{a} {b}`")));
            }
        }
        Ok(Vocab {
            unigram_list: unigrams,
            bigram_list: bigrams,
            unigram_index,
            bigram_index,
        })
    }

    pub fn unigram_len(&self) -> usize {
        self.unigram_list.len()
    }

    pub fn bigram_len(&self) -> usize {
        self.bigram_list.len()
    }

    pub fn unigrams(&self) -> &[String] {
        &self.unigram_list
    }

    pub fn bigrams(&self) -> &[(String, String)] {
        &self.bigram_list
    }

    pub fn lookup_unigram(&self, token: &Token) -> usize {
        self.unigram_index
            .get(token.as_str())
            .copied()
            .unwrap_or(UNK)
    }

    pub fn unigram_token(&self, index: usize) -> Option<&str> {
        self.unigram_list.get(index).map(String::as_str)
    }

    pub fn contains_unigram(&self, token: &Token) -> bool {
        self.unigram_index.contains_key(token.as_str())
    }

    pub fn lookup_bigram(&self, left: &str, right: &str) -> usize {
        self.bigram_index
            .get(left)
            .and_then(|m| m.get(right))
            .copied()
            .unwrap_or(UNK)
    }

    /// Bigram index of `(tokens[pos], tokens[pos + 1])`, padding past the end
    /// with `</s>`. Positions are 0-based.
    pub fn bigram_at(&self, tokens: &[Token], pos: usize) -> Result<usize> {
        if pos >= tokens.len() {
            return contract(format!(
                "bigram position {pos} out of range for {} tokens",
                tokens.len()
            ));
        }
        let right = tokens.get(pos + 1).map_or(BOUNDARY_TOKEN, Token::as_str);
        Ok(self.lookup_bigram(tokens[pos].as_str(), right))
    }

    /// Number of bigram entries with `token` on either side.
    pub fn bigrams_touching(&self, token: &str) -> usize {
        self.bigram_list
            .iter()
            .skip(1)
            .filter(|(a, b)| a == token || b == token)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{words_to_bmes, wrap_with_criterion, CriterionId, WordSentence};

    fn wrapped(words: &[&str], c: &str) -> TaggedSentence {
        let s = WordSentence::from_words(words, CriterionId::new(c).unwrap()).unwrap();
        wrap_with_criterion(&words_to_bmes(&s).unwrap()).unwrap()
    }

    fn table_two() -> Vec<TaggedSentence> {
        vec![
            wrapped(&["李", "乐", "到达", "奔驰", "公司"], "pku"),
            wrapped(&["李乐", "到达", "奔驰公司"], "msr"),
        ]
    }

    fn tok(s: &str) -> Token {
        Token::new(s).unwrap()
    }

    #[test]
    fn markers_enter_the_unigram_table() {
        let v = Vocab::build(&table_two(), 1).unwrap();
        for m in ["<pku>", "</pku>", "<msr>", "</msr>"] {
            assert!(v.contains_unigram(&tok(m)), "{m}");
            assert_ne!(v.lookup_unigram(&tok(m)), UNK);
        }
        assert_eq!(v.unigram_token(UNK), Some(UNK_TOKEN));
    }

    #[test]
    fn markers_survive_min_count() {
        let v = Vocab::build(&table_two(), 5).unwrap();
        assert_ne!(v.lookup_unigram(&tok("<pku>")), UNK);
        assert_eq!(v.lookup_unigram(&tok("李")), UNK);
    }

    #[test]
    fn min_count_threshold() {
        let mut corpus = table_two();
        corpus.push(wrapped(&["李", "到达"], "pku"));
        // 李 occurs three times, 乐 twice.
        let v = Vocab::build(&corpus, 3).unwrap();
        assert_eq!(v.lookup_unigram(&tok("乐")), UNK);
        assert_ne!(v.lookup_unigram(&tok("李")), UNK);
    }

    #[test]
    fn deterministic_indexing() {
        let a = Vocab::build(&table_two(), 1).unwrap();
        let b = Vocab::build(&table_two(), 1).unwrap();
        assert_eq!(a, b);
        // Frequency first: 李, 乐, 到 ... each appear twice, markers once.
        assert!(a.lookup_unigram(&tok("<msr>")) > a.lookup_unigram(&tok("到")));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(Vocab::build(&[], 1), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn unknown_token_is_unk() {
        let v = Vocab::build(&table_two(), 1).unwrap();
        assert_eq!(v.lookup_unigram(&tok("龙")), UNK);
    }

    #[test]
    fn bigram_lookup() {
        let corpus = table_two();
        let v = Vocab::build(&corpus, 1).unwrap();
        let toks = &corpus[0].tokens;
        // 到 is at position 3 of the wrapped PKU sentence.
        assert_eq!(toks[3].as_str(), "到");
        let idx = v.bigram_at(toks, 3).unwrap();
        assert_ne!(idx, UNK);
        assert_eq!(v.bigrams()[idx], ("到".to_owned(), "达".to_owned()));

        let last = toks.len() - 1;
        let end = v.bigram_at(toks, last).unwrap();
        assert_eq!(v.bigrams()[end], ("</pku>".to_owned(), BOUNDARY_TOKEN.to_owned()));

        let unseen = vec![tok("达"), tok("李")];
        assert_eq!(v.bigram_at(&unseen, 0).unwrap(), UNK);
        assert!(matches!(v.bigram_at(&unseen, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn lookups_round_trip_and_stay_in_range() {
        let v = Vocab::build(&table_two(), 1).unwrap();
        let before = v.clone();
        for _ in 0..1000 {
            for (i, t) in v.unigrams().iter().enumerate().skip(1) {
                assert_eq!(v.lookup_unigram(&tok(t)), i);
            }
            for (i, (a, b)) in v.bigrams().iter().enumerate().skip(1) {
                let j = v.lookup_bigram(a, b);
                assert_eq!(j, i);
                assert!(j < v.bigram_len());
            }
        }
        assert_eq!(v, before);
    }

    #[test]
    fn a_million_lookups_change_nothing() {
        let v = Vocab::build(&table_two(), 1).unwrap();
        let before = v.clone();
        let probes = [tok("李"), tok("龙"), tok("<pku>")];
        let expected: Vec<usize> = probes.iter().map(|t| v.lookup_unigram(t)).collect();
        for i in 0..1_000_000 {
            let k = i % probes.len();
            assert_eq!(v.lookup_unigram(&probes[k]), expected[k]);
        }
        assert_eq!(v.lookup_unigram(&tok("龙")), UNK);
        assert_eq!(v, before);
    }

    #[test]
    fn from_lists_validates() {
        assert!(Vocab::from_lists(vec!["a".into()], vec![(UNK_TOKEN.into(), UNK_TOKEN.into())]).is_err());
        assert!(Vocab::from_lists(
            vec![UNK_TOKEN.into(), "a".into(), "a".into()],
            vec![(UNK_TOKEN.into(), UNK_TOKEN.into())]
        )
        .is_err());
    }
}
