//! Corpus handling: reading whitespace-segmented text, placeholder
//! normalization, punctuation splitting, BMES conversion and criterion markers.
//!
//! Everything here is a pure function over immutable data.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::ops::Range;

use crate::error::{contract, Error, Result};

/// Placeholder for a run of ASCII letters.
pub const ENG_TOKEN: &str = "<ENG>";
/// Placeholder for a run of ASCII digits.
pub const NUM_TOKEN: &str = "<NUM>";
/// Shared placeholder used by [`NormalizeMode::Unified`].
pub const UNIFIED_TOKEN: &str = "<X>";

/// An indivisible input symbol: one Unicode scalar, or a special such as
/// `<NUM>` or `<pku>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::MalformedInput("empty token".into()));
        }
        Ok(Token(text))
    }

    pub fn from_char(c: char) -> Self {
        Token(c.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True for the placeholder and criterion-marker specials.
    pub fn is_special(&self) -> bool {
        self.0.chars().nth(1).is_some() && self.0.starts_with('<') && self.0.ends_with('>')
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Splits a string into one token per Unicode scalar.
pub fn chars_to_tokens(s: &str) -> Vec<Token> {
    s.chars().map(Token::from_char).collect()
}

/// Data tags. The CRF's Start/End states live only inside [`crate::crf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    B,
    M,
    E,
    S,
}

impl Tag {
    pub const ALL: [Tag; 4] = [Tag::B, Tag::M, Tag::E, Tag::S];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Tag::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            Tag::B => 'B',
            Tag::M => 'M',
            Tag::E => 'E',
            Tag::S => 'S',
        }
    }
}

/// Name of a segmentation criterion, e.g. `pku`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CriterionId(String);

impl CriterionId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if is_valid_criterion_name(&name) {
            Ok(CriterionId(name))
        } else {
            Err(Error::Config(format!(
                "criterion name `{name}` must match [a-z0-9_]{{1,16}}"
            )))
        }
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    pub fn open_marker(&self) -> Token {
        Token(format!("<{}>", self.0))
    }

    pub fn close_marker(&self) -> Token {
        Token(format!("</{}>", self.0))
    }
}

impl fmt::Display for CriterionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn is_valid_criterion_name(name: &str) -> bool {
    (1..=16).contains(&name.len())
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// True if `token` has the shape of an opening or closing criterion marker.
pub fn is_criterion_marker(token: &Token) -> bool {
    let s = token.as_str();
    let Some(inner) = s.strip_prefix('<').and_then(|s| s.strip_suffix('>')) else {
        return false;
    };
    let inner = inner.strip_prefix('/').unwrap_or(inner);
    is_valid_criterion_name(inner)
}

/// A gold segmentation: a list of words, each a non-empty token run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSentence {
    pub words: Vec<Vec<Token>>,
    pub criterion: CriterionId,
}

impl WordSentence {
    /// Builds a sentence from word strings, one token per character.
    pub fn from_words<S: AsRef<str>>(words: &[S], criterion: CriterionId) -> Result<Self> {
        let words = words
            .iter()
            .map(|w| {
                let toks = chars_to_tokens(w.as_ref());
                if toks.is_empty() {
                    Err(Error::MalformedInput("empty word".into()))
                } else {
                    Ok(toks)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WordSentence { words, criterion })
    }

    pub fn word_strings(&self) -> Vec<String> {
        self.words.iter().map(|w| join_tokens(w)).collect()
    }

    /// The unsegmented surface text.
    pub fn text(&self) -> String {
        self.words.iter().flatten().map(Token::as_str).collect()
    }

    pub fn token_count(&self) -> usize {
        self.words.iter().map(Vec::len).sum()
    }

    /// Applies [`normalize_tokens_with`] word by word, so placeholder runs
    /// never cross word boundaries.
    pub fn normalized(&self, mode: NormalizeMode) -> WordSentence {
        WordSentence {
            words: self
                .words
                .iter()
                .map(|w| normalize_tokens_with(w, mode))
                .collect(),
            criterion: self.criterion.clone(),
        }
    }
}

pub(crate) fn join_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(Token::as_str).collect()
}

/// Tokens with a parallel BMES tag sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<Token>,
    pub tags: Vec<Tag>,
    pub criterion: CriterionId,
}

impl TaggedSentence {
    /// Checked constructor: equal lengths and a well-formed tag sequence.
    pub fn new(tokens: Vec<Token>, tags: Vec<Tag>, criterion: CriterionId) -> Result<Self> {
        if tokens.len() != tags.len() {
            return contract(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            ));
        }
        if !is_well_formed(&tags) {
            return Err(Error::MalformedInput(format!(
                "ill-formed tag sequence {}",
                tags.iter().map(|t| t.as_char()).collect::<String>()
            )));
        }
        Ok(TaggedSentence {
            tokens,
            tags,
            criterion,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// B/M must be followed by M or E; E/S by B, S or the end.
pub fn is_well_formed(tags: &[Tag]) -> bool {
    let mut inside = false;
    for &t in tags {
        match (inside, t) {
            (false, Tag::B) => inside = true,
            (false, Tag::S) => {}
            (true, Tag::M) => {}
            (true, Tag::E) => inside = false,
            _ => return false,
        }
    }
    !inside
}

/// Reads a whitespace-segmented corpus, one sentence per line.
///
/// Blank lines are skipped; a leading byte-order mark is ignored.
pub fn read_segmented_corpus<R: BufRead>(
    mut source: R,
    criterion: &CriterionId,
) -> Result<Vec<WordSentence>> {
    let mut out = Vec::new();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if source.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|_| Error::Decode { line: line_no })?;
        let line = if line_no == 1 {
            line.trim_start_matches('\u{feff}')
        } else {
            line
        };
        let words: Vec<Vec<Token>> = line.split_whitespace().map(chars_to_tokens).collect();
        if !words.is_empty() {
            out.push(WordSentence {
                words,
                criterion: criterion.clone(),
            });
        }
    }
    Ok(out)
}

/// One-to-one character substitution, e.g. Traditional to Simplified.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CharMap {
    map: HashMap<char, char>,
}

impl CharMap {
    pub fn identity() -> Self {
        CharMap::default()
    }

    /// Parses `src<TAB>dst` lines. Blank lines are ignored.
    pub fn from_reader<R: BufRead>(source: R) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, line) in source.lines().enumerate() {
            let line = line.map_err(|e| match e.kind() {
                std::io::ErrorKind::InvalidData => Error::Decode { line: i + 1 },
                _ => Error::Io(e),
            })?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(src), Some(dst), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::MalformedInput(format!(
                    "character map line {}: expected `src<TAB>dst`",
                    i + 1
                )));
            };
            let (Some(s), Some(d)) = (single_char(src), single_char(dst)) else {
                return Err(Error::MalformedInput(format!(
                    "character map line {}: both sides must be one character",
                    i + 1
                )));
            };
            map.insert(s, d);
        }
        Ok(CharMap { map })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (char, char)>) -> Self {
        CharMap {
            map: pairs.into_iter().collect(),
        }
    }

    pub fn map_char(&self, c: char) -> char {
        self.map.get(&c).copied().unwrap_or(c)
    }

    pub fn is_identity(&self) -> bool {
        self.map.is_empty()
    }

    /// Pairs sorted by source character.
    pub fn pairs(&self) -> Vec<(char, char)> {
        let mut v: Vec<_> = self.map.iter().map(|(&s, &d)| (s, d)).collect();
        v.sort_unstable();
        v
    }

    pub fn apply(&self, sentence: &WordSentence) -> WordSentence {
        if self.is_identity() {
            return sentence.clone();
        }
        WordSentence {
            words: sentence
                .words
                .iter()
                .map(|w| w.iter().map(|t| self.map_token(t)).collect())
                .collect(),
            criterion: sentence.criterion.clone(),
        }
    }

    fn map_token(&self, t: &Token) -> Token {
        match single_char(t.as_str()) {
            Some(c) => Token::from_char(self.map_char(c)),
            None => t.clone(),
        }
    }
}

fn single_char(s: &str) -> Option<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

/// How ASCII letter and digit runs are collapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizeMode {
    /// Letters become `<ENG>`, digits `<NUM>`.
    #[default]
    Split,
    /// Any alphanumeric ASCII run becomes `<X>`.
    Unified,
}

impl NormalizeMode {
    pub fn name(self) -> &'static str {
        match self {
            NormalizeMode::Split => "split",
            NormalizeMode::Unified => "unified",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "split" => Some(NormalizeMode::Split),
            "unified" => Some(NormalizeMode::Unified),
            _ => None,
        }
    }

    fn class(self, t: &Token) -> Option<&'static str> {
        let c = single_char(t.as_str())?;
        match self {
            NormalizeMode::Split if c.is_ascii_alphabetic() => Some(ENG_TOKEN),
            NormalizeMode::Split if c.is_ascii_digit() => Some(NUM_TOKEN),
            NormalizeMode::Unified if c.is_ascii_alphanumeric() => Some(UNIFIED_TOKEN),
            _ => None,
        }
    }
}

/// Collapses ASCII letter runs to `<ENG>` and digit runs to `<NUM>`.
pub fn normalize_tokens(tokens: &[Token]) -> Vec<Token> {
    normalize_tokens_with(tokens, NormalizeMode::Split)
}

pub fn normalize_tokens_with(tokens: &[Token], mode: NormalizeMode) -> Vec<Token> {
    normalize_spans(tokens, mode)
        .into_iter()
        .map(|(t, _)| t)
        .collect()
}

/// Like [`normalize_tokens_with`], also returning the input range each
/// output token covers.
pub fn normalize_spans(tokens: &[Token], mode: NormalizeMode) -> Vec<(Token, Range<usize>)> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        match mode.class(&tokens[i]) {
            Some(placeholder) => {
                let start = i;
                while i < tokens.len() && mode.class(&tokens[i]) == Some(placeholder) {
                    i += 1;
                }
                out.push((Token(placeholder.to_string()), start..i));
            }
            None => {
                out.push((tokens[i].clone(), i..i + 1));
                i += 1;
            }
        }
    }
    out
}

/// Single-character tokens after which sentences are split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splitters(HashSet<Token>);

impl Splitters {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        Splitters(chars.into_iter().map(Token::from_char).collect())
    }

    pub fn contains(&self, t: &Token) -> bool {
        self.0.contains(t)
    }
}

impl Default for Splitters {
    fn default() -> Self {
        Splitters::new("。？！；，、,.?!;".chars())
    }
}

/// Splits after every word consisting of exactly one splitter token.
pub fn split_by_punctuation(sentence: &WordSentence, splitters: &Splitters) -> Vec<WordSentence> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for word in &sentence.words {
        current.push(word.clone());
        if word.len() == 1 && splitters.contains(&word[0]) {
            out.push(WordSentence {
                words: std::mem::take(&mut current),
                criterion: sentence.criterion.clone(),
            });
        }
    }
    if !current.is_empty() || out.is_empty() {
        out.push(WordSentence {
            words: current,
            criterion: sentence.criterion.clone(),
        });
    }
    out
}

pub fn words_to_bmes(sentence: &WordSentence) -> Result<TaggedSentence> {
    let mut tokens = Vec::with_capacity(sentence.token_count());
    let mut tags = Vec::with_capacity(tokens.capacity());
    for word in &sentence.words {
        match word.len() {
            0 => return Err(Error::MalformedInput("empty word".into())),
            1 => tags.push(Tag::S),
            k => {
                tags.push(Tag::B);
                tags.extend(std::iter::repeat_n(Tag::M, k - 2));
                tags.push(Tag::E);
            }
        }
        tokens.extend(word.iter().cloned());
    }
    Ok(TaggedSentence {
        tokens,
        tags,
        criterion: sentence.criterion.clone(),
    })
}

/// Word ranges over tag positions. Total over any tag sequence: boundaries go
/// before every B and S and after every E and S; an orphan M or E opens a
/// word when none is open.
pub fn bmes_spans(tags: &[Tag]) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            Tag::B => {
                if let Some(s) = open.replace(i) {
                    spans.push(s..i);
                }
            }
            Tag::S => {
                if let Some(s) = open.take() {
                    spans.push(s..i);
                }
                spans.push(i..i + 1);
            }
            Tag::M => {
                open.get_or_insert(i);
            }
            Tag::E => {
                let s = open.take().unwrap_or(i);
                spans.push(s..i + 1);
            }
        }
    }
    if let Some(s) = open {
        spans.push(s..tags.len());
    }
    spans
}

pub fn bmes_to_words(tokens: &[Token], tags: &[Tag]) -> Result<Vec<String>> {
    if tokens.len() != tags.len() {
        return contract(format!(
            "bmes_to_words: {} tokens but {} tags",
            tokens.len(),
            tags.len()
        ));
    }
    Ok(bmes_spans(tags)
        .into_iter()
        .map(|r| join_tokens(&tokens[r]))
        .collect())
}

/// Surrounds the sentence with `<c>` ... `</c>`, both tagged S.
pub fn wrap_with_criterion(ts: &TaggedSentence) -> Result<TaggedSentence> {
    if ts.tokens.first().is_some_and(is_criterion_marker) {
        return contract(format!(
            "sentence already starts with criterion marker {}",
            ts.tokens[0]
        ));
    }
    let mut tokens = Vec::with_capacity(ts.len() + 2);
    tokens.push(ts.criterion.open_marker());
    tokens.extend(ts.tokens.iter().cloned());
    tokens.push(ts.criterion.close_marker());
    let mut tags = Vec::with_capacity(tokens.len());
    tags.push(Tag::S);
    tags.extend_from_slice(&ts.tags);
    tags.push(Tag::S);
    Ok(TaggedSentence {
        tokens,
        tags,
        criterion: ts.criterion.clone(),
    })
}

/// Inverse of [`wrap_with_criterion`].
pub fn strip_criterion(ts: &TaggedSentence) -> Result<TaggedSentence> {
    let open = ts.criterion.open_marker();
    let close = ts.criterion.close_marker();
    let n = ts.tokens.len();
    if n < 2 || ts.tokens[0] != open || ts.tokens[n - 1] != close {
        return contract(format!(
            "expected sentence wrapped in {open} ... {close} for criterion `{}`",
            ts.criterion
        ));
    }
    if ts.tags.len() != n {
        return contract(format!("{} tokens but {} tags", n, ts.tags.len()));
    }
    Ok(TaggedSentence {
        tokens: ts.tokens[1..n - 1].to_vec(),
        tags: ts.tags[1..n - 1].to_vec(),
        criterion: ts.criterion.clone(),
    })
}
