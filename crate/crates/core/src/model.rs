//! The segmenter: character and bigram embeddings, a Bi-LSTM, an affine
//! score layer and a CRF on top.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    bmes_spans, normalize_spans, strip_criterion, CharMap, CriterionId, NormalizeMode,
    TaggedSentence, Tag, Token,
};
use crate::crf::{self, Lattice, NUM_STATES, NUM_TAGS};
use crate::error::{contract, Error, Result};
use crate::nn::{bi_lstm, LstmParams, ParamId, ParamSet, Tape, Tensor, Var};
use crate::vocab::Vocab;

/// Parameter names in storage order.
pub const PARAM_NAMES: [&str; 11] = [
    "char_embedding",
    "bigram_embedding",
    "lstm_fwd.input",
    "lstm_fwd.recurrent",
    "lstm_fwd.bias",
    "lstm_bwd.input",
    "lstm_bwd.recurrent",
    "lstm_bwd.bias",
    "score.weight",
    "score.bias",
    "transitions",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub d_char: usize,
    pub d_bigram: usize,
    pub d_hidden: usize,
    pub dropout: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            d_char: 100,
            d_bigram: 50,
            d_hidden: 100,
            dropout: 0.2,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.d_char == 0 || self.d_bigram == 0 || self.d_hidden == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of `f_t = [h_t; e_t]`.
    pub fn d_feature(&self) -> usize {
        2 * self.d_hidden + self.d_bigram
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ParamIds {
    char_embedding: ParamId,
    bigram_embedding: ParamId,
    lstm_fwd: LstmParams,
    lstm_bwd: LstmParams,
    score_weight: ParamId,
    score_bias: ParamId,
    transitions: ParamId,
}

/// Expected shapes of every parameter, in [`PARAM_NAMES`] order.
pub fn param_shapes(h: &Hyperparams, unigrams: usize, bigrams: usize) -> Vec<Vec<usize>> {
    let [fi, fr, fb] = LstmParams::shapes(h.d_char, h.d_hidden);
    vec![
        vec![unigrams, h.d_char],
        vec![bigrams, h.d_bigram],
        fi.clone(),
        fr.clone(),
        fb.clone(),
        fi,
        fr,
        fb,
        vec![h.d_feature(), NUM_TAGS],
        vec![NUM_TAGS],
        vec![NUM_STATES, NUM_STATES],
    ]
}

/// A trained or freshly initialized segmenter.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    vocab: Vocab,
    hyper: Hyperparams,
    criteria: Vec<CriterionId>,
    normalize: NormalizeMode,
    char_map: CharMap,
    params: ParamSet,
    ids: ParamIds,
}

impl SegModel {
    /// Random initialization: embeddings uniform in [-0.1, 0.1], Glorot
    /// weights, forget-gate bias 1, other biases and transitions 0.
    pub fn new(vocab: Vocab, hyper: Hyperparams, criteria: Vec<CriterionId>, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.add(
            PARAM_NAMES[0],
            Tensor::uniform(&[vocab.unigram_len(), hyper.d_char], 0.1, &mut rng),
        );
        params.add(
            PARAM_NAMES[1],
            Tensor::uniform(&[vocab.bigram_len(), hyper.d_bigram], 0.1, &mut rng),
        );
        LstmParams::init(&mut params, "lstm_fwd", hyper.d_char, hyper.d_hidden, &mut rng);
        LstmParams::init(&mut params, "lstm_bwd", hyper.d_char, hyper.d_hidden, &mut rng);
        let d_f = hyper.d_feature();
        params.add(PARAM_NAMES[8], Tensor::glorot(&[d_f, NUM_TAGS], d_f, NUM_TAGS, &mut rng));
        params.add(PARAM_NAMES[9], Tensor::zeros(&[NUM_TAGS]));
        params.add(PARAM_NAMES[10], Tensor::zeros(&[NUM_STATES, NUM_STATES]));
        let transitions = params.get_mut(ParamId(10));
        for i in crf::impossible_transitions() {
            transitions.values_mut()[i] = crf::IMPOSSIBLE;
        }
        Self::from_parts(vocab, hyper, criteria, NormalizeMode::default(), CharMap::identity(), params)
    }

    /// Assembles a model from stored parts, validating names and shapes.
    pub fn from_parts(
        vocab: Vocab,
        hyper: Hyperparams,
        mut criteria: Vec<CriterionId>,
        normalize: NormalizeMode,
        char_map: CharMap,
        mut params: ParamSet,
    ) -> Result<Self> {
        hyper.validate()?;
        criteria.sort();
        criteria.dedup();
        if criteria.is_empty() {
            return Err(Error::Config("a model needs at least one criterion".into()));
        }
        for c in &criteria {
            for m in [c.open_marker(), c.close_marker()] {
                if !vocab.contains_unigram(&m) {
                    return Err(Error::Config(format!("criterion marker {m} missing from vocabulary")));
                }
            }
        }
        let shapes = param_shapes(&hyper, vocab.unigram_len(), vocab.bigram_len());
        if params.len() != PARAM_NAMES.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                PARAM_NAMES.len(),
                params.len()
            )));
        }
        for ((p, name), shape) in params.iter().zip(PARAM_NAMES).zip(&shapes) {
            if p.name != name {
                return Err(Error::Format(format!("expected parameter `{name}`, found `{}`", p.name)));
            }
            if p.tensor.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "model parameter",
                    left: shape.clone(),
                    right: p.tensor.shape().to_vec(),
                });
            }
        }
        let transitions = ParamId(10);
        params.freeze_entries(transitions, &crf::impossible_transitions());
        let lstm = |base: usize| LstmParams {
            input: ParamId(base),
            recurrent: ParamId(base + 1),
            bias: ParamId(base + 2),
            d_in: hyper.d_char,
            d_hidden: hyper.d_hidden,
        };
        Ok(SegModel {
            vocab,
            hyper,
            criteria,
            normalize,
            char_map,
            params,
            ids: ParamIds {
                char_embedding: ParamId(0),
                bigram_embedding: ParamId(1),
                lstm_fwd: lstm(2),
                lstm_bwd: lstm(5),
                score_weight: ParamId(8),
                score_bias: ParamId(9),
                transitions,
            },
        })
    }

    pub fn with_normalize(mut self, mode: NormalizeMode) -> Self {
        self.normalize = mode;
        self
    }

    pub fn with_char_map(mut self, map: CharMap) -> Self {
        self.char_map = map;
        self
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        let h = Hyperparams {
            dropout: rate,
            ..self.hyper
        };
        h.validate()?;
        self.hyper = h;
        Ok(())
    }

    pub fn criteria(&self) -> &[CriterionId] {
        &self.criteria
    }

    pub fn normalize_mode(&self) -> NormalizeMode {
        self.normalize
    }

    pub fn char_map(&self) -> &CharMap {
        &self.char_map
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `(name, shape, scalar count)` for every parameter tensor.
    pub fn census(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.shape().to_vec(), p.tensor.len()))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn check_criterion(&self, c: &CriterionId) -> Result<()> {
        if self.criteria.contains(c) {
            Ok(())
        } else {
            Err(Error::UnknownCriterion {
                name: c.name().to_owned(),
                available: self.criteria.iter().map(|c| c.name().to_owned()).collect(),
            })
        }
    }

    /// Records the `[n, 4]` emission matrix on `tape`. Passing an RNG turns
    /// on training-mode dropout over `f_t`.
    pub fn emissions_on_tape(&self, tape: &mut Tape, tokens: &[Token], mut rng: Option<&mut dyn RngCore>) -> Result<Var> {
        if tokens.is_empty() {
            return contract("emissions of an empty token sequence");
        }
        let ids = &self.ids;
        let chars = tokens
            .iter()
            .map(|t| tape.embed(&self.params, ids.char_embedding, self.vocab.lookup_unigram(t)))
            .collect::<Result<Vec<_>>>()?;
        let fwd = ids.lstm_fwd.bind(tape, &self.params)?;
        let bwd = ids.lstm_bwd.bind(tape, &self.params)?;
        let hidden = bi_lstm(tape, &fwd, &bwd, &chars)?;
        let w = tape.param(&self.params, ids.score_weight);
        let b = tape.param(&self.params, ids.score_bias);
        let mut rows = Vec::with_capacity(tokens.len());
        for (t, &h) in hidden.iter().enumerate() {
            let e = tape.embed(&self.params, ids.bigram_embedding, self.vocab.bigram_at(tokens, t)?)?;
            let f = tape.concat(h, e)?;
            let r = rng.as_mut().map(|r| &mut **r as &mut dyn RngCore);
            let f = tape.dropout(f, self.hyper.dropout, r)?;
            rows.push(tape.affine(w, f, Some(b))?);
        }
        tape.stack(&rows)
    }

    /// Eval-mode emission scores, one row per token.
    pub fn emissions(&self, tokens: &[Token]) -> Result<Vec<[f64; NUM_TAGS]>> {
        let mut tape = Tape::new();
        let e = self.emissions_on_tape(&mut tape, tokens, None)?;
        Ok(tape
            .value(e)
            .chunks_exact(NUM_TAGS)
            .map(|r| [r[0], r[1], r[2], r[3]])
            .collect())
    }

    pub fn transitions(&self) -> crf::Transitions {
        let v = self.params.get(self.ids.transitions).values();
        std::array::from_fn(|i| std::array::from_fn(|j| v[i * NUM_STATES + j]))
    }

    pub fn lattice(&self, tokens: &[Token]) -> Result<Lattice> {
        Lattice::new(self.emissions(tokens)?, self.transitions())
    }

    /// CRF negative log-likelihood of a wrapped sentence, recorded on `tape`.
    pub fn sentence_loss(&self, tape: &mut Tape, ts: &TaggedSentence, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        if ts.tokens.len() != ts.tags.len() {
            return contract(format!("{} tokens but {} tags", ts.tokens.len(), ts.tags.len()));
        }
        if ts.tokens.first() != Some(&ts.criterion.open_marker()) {
            return contract(format!("training sentence is not wrapped in <{}>", ts.criterion));
        }
        let e = self.emissions_on_tape(tape, &ts.tokens, rng)?;
        let a = tape.param(&self.params, self.ids.transitions);
        crf::nll_on_tape(tape, e, a, &ts.tags)
    }

    /// Eval-mode loss value, without dropout.
    pub fn loss_value(&self, ts: &TaggedSentence) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.sentence_loss(&mut tape, ts, None)?;
        Ok(tape.scalar(l))
    }

    /// Best tag path for already-wrapped tokens.
    pub fn decode(&self, tokens: &[Token]) -> Result<Vec<Tag>> {
        Ok(crf::viterbi(&self.lattice(tokens)?).0)
    }

    /// Segments raw text under `criterion`. Whitespace is dropped; ASCII runs
    /// are decoded as placeholders and restored to their surface form.
    pub fn segment(&self, raw: &str, criterion: &CriterionId) -> Result<Vec<String>> {
        self.check_criterion(criterion)?;
        let surface: Vec<char> = raw.chars().filter(|c| !c.is_whitespace()).collect();
        if surface.is_empty() {
            return Ok(Vec::new());
        }
        let mapped: Vec<Token> = surface
            .iter()
            .map(|&c| Token::from_char(self.char_map.map_char(c)))
            .collect();
        let normalized = normalize_spans(&mapped, self.normalize);
        let mut tokens = Vec::with_capacity(normalized.len() + 2);
        tokens.push(criterion.open_marker());
        tokens.extend(normalized.iter().map(|(t, _)| t.clone()));
        tokens.push(criterion.close_marker());
        let tags = self.decode(&tokens)?;
        let inner = strip_criterion(&TaggedSentence {
            tokens,
            tags,
            criterion: criterion.clone(),
        })?;
        Ok(bmes_spans(&inner.tags)
            .into_iter()
            .map(|r| {
                let from = normalized[r.start].1.start;
                let to = normalized[r.end - 1].1.end;
                surface[from..to].iter().collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chars_to_tokens, words_to_bmes, wrap_with_criterion, WordSentence};
    use crate::nn::{Adam, AdamConfig};

    fn crit(s: &str) -> CriterionId {
        CriterionId::new(s).unwrap()
    }

    fn wrapped(words: &[&str], c: &str) -> TaggedSentence {
        let s = WordSentence::from_words(words, crit(c)).unwrap();
        wrap_with_criterion(&words_to_bmes(&s).unwrap()).unwrap()
    }

    fn small() -> Hyperparams {
        Hyperparams {
            d_char: 8,
            d_bigram: 4,
            d_hidden: 8,
            dropout: 0.0,
        }
    }

    fn table_model(seed: u64) -> (SegModel, Vec<TaggedSentence>) {
        let data = vec![
            wrapped(&["李", "乐", "到达", "奔驰", "公司"], "pku"),
            wrapped(&["李乐", "到达", "奔驰公司"], "msr"),
        ];
        let vocab = Vocab::build(&data, 1).unwrap();
        let m = SegModel::new(vocab, small(), vec![crit("pku"), crit("msr")], seed).unwrap();
        (m, data)
    }

    #[test]
    fn emission_shape_and_determinism() {
        let (m, data) = table_model(1);
        let e = m.emissions(&data[0].tokens).unwrap();
        assert_eq!(e.len(), data[0].tokens.len());
        assert_eq!(e, m.emissions(&data[0].tokens).unwrap());
        assert!(m.emissions(&[]).is_err());
    }

    #[test]
    fn criterion_markers_change_every_row() {
        let (m, _) = table_model(2);
        let inner = chars_to_tokens("李乐到达奔驰公司");
        let with = |c: &str| {
            let mut t = vec![crit(c).open_marker()];
            t.extend(inner.iter().cloned());
            t.push(crit(c).close_marker());
            m.emissions(&t).unwrap()
        };
        let (a, b) = (with("pku"), with("msr"));
        for (ra, rb) in a.iter().zip(&b) {
            let diff = ra.iter().zip(rb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff > 0.0);
        }
    }

    #[test]
    fn fresh_model_has_positive_loss() {
        let (m, data) = table_model(3);
        for s in &data {
            assert!(m.loss_value(s).unwrap() > 0.0);
        }
    }

    #[test]
    fn loss_requires_wrapping_and_lengths() {
        let (m, data) = table_model(3);
        let mut bad = data[0].clone();
        bad.tags.pop();
        assert!(matches!(m.loss_value(&bad), Err(Error::Contract(_))));
        let unwrapped = strip_criterion(&data[0]).unwrap();
        assert!(m.loss_value(&unwrapped).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (mut m, _) = table_model(4);
        let ts = wrapped(&["李乐", "到达"], "msr");
        assert_eq!(ts.tokens.len(), 6);
        let mut tape = Tape::new();
        let l = m.sentence_loss(&mut tape, &ts, None).unwrap();
        tape.backward(l, m.params_mut()).unwrap();
        let probe = m.clone();
        let report = crate::gradcheck::check_params(m.params_mut(), 1e-5, |ps| {
            let mut p = probe.clone();
            p.params_mut().copy_values_from(ps);
            p.loss_value(&ts).unwrap()
        });
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn overfits_one_sentence() {
        let (small_model, data) = table_model(5);
        let h = Hyperparams {
            dropout: 0.0,
            ..Hyperparams::default()
        };
        let mut m = SegModel::new(small_model.vocab().clone(), h, small_model.criteria().to_vec(), 5).unwrap();
        let ts = &data[1];
        let mut adam = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }, m.params());
        for _ in 0..200 {
            m.params_mut().zero_grads();
            let mut tape = Tape::new();
            let l = m.sentence_loss(&mut tape, ts, None).unwrap();
            tape.backward(l, m.params_mut()).unwrap();
            adam.step(m.params_mut()).unwrap();
        }
        let loss = m.loss_value(ts).unwrap();
        assert!(loss < 0.01, "{loss}");
        assert_eq!(m.decode(&ts.tokens).unwrap(), ts.tags);
        assert_eq!(m.segment("李乐到达奔驰公司", &crit("msr")).unwrap(), vec!["李乐", "到达", "奔驰公司"]);
    }

    #[test]
    fn impossible_transitions_stay_fixed() {
        let (mut m, data) = table_model(6);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, m.params());
        for _ in 0..5 {
            m.params_mut().zero_grads();
            let mut tape = Tape::new();
            let l = m.sentence_loss(&mut tape, &data[0], None).unwrap();
            tape.backward(l, m.params_mut()).unwrap();
            adam.step(m.params_mut()).unwrap();
        }
        let a = m.transitions();
        for i in crf::impossible_transitions() {
            assert_eq!(a[i / 6][i % 6], crf::IMPOSSIBLE);
        }
    }

    #[test]
    fn segment_contracts() {
        let (m, _) = table_model(7);
        assert_eq!(m.segment("", &crit("pku")).unwrap(), Vec::<String>::new());
        assert_eq!(m.segment("  \t", &crit("pku")).unwrap(), Vec::<String>::new());
        match m.segment("李乐", &crit("ctb")) {
            Err(Error::UnknownCriterion { name, available }) => {
                assert_eq!(name, "ctb");
                assert_eq!(available, vec!["msr", "pku"]);
            }
            other => panic!("{other:?}"),
        }
        let raw = "李乐在2008年到达Benz公司。";
        let words = m.segment(raw, &crit("pku")).unwrap();
        assert_eq!(words.concat(), raw);
        assert_eq!(m.decode(&chars_to_tokens("李")).unwrap().len(), 1);
    }

    #[test]
    fn placeholder_runs_are_never_split() {
        let (m, _) = table_model(8);
        let words = m.segment("ab1234李", &crit("pku")).unwrap();
        // "ab" and "1234" are single tokens, so no word boundary falls inside.
        let mut offset = 0;
        let mut cuts = vec![];
        for w in &words {
            offset += w.chars().count();
            cuts.push(offset);
        }
        assert!(!cuts.contains(&1) && !cuts.iter().any(|&c| (3..6).contains(&c)));
    }

    #[test]
    fn adding_a_criterion_only_adds_marker_rows() {
        let text = [&["李乐", "到达"][..], &["奔驰", "公司"][..]];
        let a_only: Vec<_> = text.iter().map(|w| wrapped(w, "a")).collect();
        let mut both = a_only.clone();
        both.extend(text.iter().map(|w| wrapped(w, "b")));
        let va = Vocab::build(&a_only, 1).unwrap();
        let vb = Vocab::build(&both, 1).unwrap();
        let ma = SegModel::new(va, small(), vec![crit("a")], 1).unwrap();
        let mb = SegModel::new(vb.clone(), small(), vec![crit("a"), crit("b")], 1).unwrap();
        let (ca, cb) = (ma.census(), mb.census());
        for ((na, sa, _), (nb, sb, _)) in ca.iter().zip(&cb).skip(2) {
            assert_eq!(na, nb);
            assert_eq!(sa, sb);
        }
        let marker_bigrams = vb.bigrams_touching("<b>") + vb.bigrams_touching("</b>");
        assert_eq!(
            mb.num_parameters() - ma.num_parameters(),
            2 * small().d_char + marker_bigrams * small().d_bigram
        );
    }

    #[test]
    fn from_parts_rejects_bad_shapes() {
        let (m, _) = table_model(9);
        let mut params = m.params().clone();
        *params.get_mut(ParamId(9)) = Tensor::zeros(&[5]);
        assert!(SegModel::from_parts(
            m.vocab().clone(),
            *m.hyper(),
            m.criteria().to_vec(),
            NormalizeMode::Split,
            CharMap::identity(),
            params
        )
        .is_err());
        assert!(SegModel::new(m.vocab().clone(), small(), vec![crit("ctb")], 1).is_err());
    }
}
