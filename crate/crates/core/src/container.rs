//! The `MCSEG` model file: a UTF-8 header with hyperparameters, criteria,
//! character map and vocabularies, followed by named tensors stored as
//! little-endian `f64`.
//!
//! ```text
//! MCSEG 1
//! d_char <usize>
//! d_bigram <usize>
//! d_hidden <usize>
//! dropout <f64>
//! placeholders split|unified
//! criteria <name> <name> ...
//! [charmap] <count>
//! <src>\t<dst>                    (count lines)
//! [unigram] <count>
//! <token>                         (count lines)
//! [bigram] <count>
//! <left>\t<right>                 (count lines)
//! [params] <count>
//! <name> <ndim> <dim>...\n<product(dims) * 8 bytes>   (count times)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::{CharMap, CriterionId, NormalizeMode};
use crate::error::{Error, Result};
use crate::model::{Hyperparams, SegModel};
use crate::nn::{ParamSet, Tensor};
use crate::vocab::Vocab;

pub const MAGIC: &str = "MCSEG";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &SegModel) -> Vec<u8> {
    let h = model.hyper();
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("{MAGIC} {VERSION}"));
    line(format!("d_char {}", h.d_char));
    line(format!("d_bigram {}", h.d_bigram));
    line(format!("d_hidden {}", h.d_hidden));
    line(format!("dropout {}", h.dropout));
    line(format!("placeholders {}", model.normalize_mode().name()));
    let names: Vec<&str> = model.criteria().iter().map(CriterionId::name).collect();
    line(format!("criteria {}", names.join(" ")));
    let pairs = model.char_map().pairs();
    line(format!("[charmap] {}", pairs.len()));
    for (s, d) in pairs {
        line(format!("{s}\t{d}"));
    }
    let vocab = model.vocab();
    line(format!("[unigram] {}", vocab.unigram_len()));
    for u in vocab.unigrams() {
        line(u.clone());
    }
    line(format!("[bigram] {}", vocab.bigram_len()));
    for (a, b) in vocab.bigrams() {
        line(format!("{a}\t{b}"));
    }
    line(format!("[params] {}", model.params().len()));
    let mut bytes = out.into_bytes();
    for p in model.params().iter() {
        let shape = p.tensor.shape();
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        writeln!(bytes, "{} {} {}", p.name, shape.len(), dims.join(" ")).expect("writing to a Vec");
        for v in p.tensor.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save(model: &SegModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SegModel> {
    from_bytes(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

fn corrupt<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

impl<'a> Reader<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return corrupt(format!("truncated header after line {}", self.line));
        };
        self.pos += end + 1;
        self.line += 1;
        std::str::from_utf8(&rest[..end]).or_else(|_| corrupt(format!("line {} is not UTF-8", self.line)))
    }

    /// Reads `key value` and returns `value`.
    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ => corrupt(format!("line {}: expected `{key}`, found `{line}`", self.line)),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key)?;
        v.parse()
            .or_else(|_| corrupt(format!("line {}: bad value `{v}` for `{key}`", self.line)))
    }

    fn section(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let n: usize = self.number(key)?;
        (0..n).map(|_| self.line()).collect()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return corrupt("truncated tensor data");
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn tab_pair<'a>(line: &'a str, what: &str) -> Result<(&'a str, &'a str)> {
    line.split_once('\t')
        .ok_or_else(|| Error::Format(format!("malformed {what} entry `{line}`")))
}

fn single_char(s: &str) -> Result<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => corrupt(format!("character map entry `{s}` is not one character")),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SegModel> {
    let mut r = Reader { bytes, pos: 0, line: 0 };
    let version: u32 = r.number(MAGIC)?;
    if version != VERSION {
        return corrupt(format!("unsupported version {version}"));
    }
    let hyper = Hyperparams {
        d_char: r.number("d_char")?,
        d_bigram: r.number("d_bigram")?,
        d_hidden: r.number("d_hidden")?,
        dropout: r.number("dropout")?,
    };
    let mode = r.field("placeholders")?;
    let normalize =
        NormalizeMode::from_name(mode).ok_or_else(|| Error::Format(format!("unknown placeholder mode `{mode}`")))?;
    let criteria = r
        .field("criteria")?
        .split(' ')
        .map(|n| CriterionId::new(n).map_err(|e| Error::Format(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let char_map = CharMap::from_pairs(
        r.section("[charmap]")?
            .into_iter()
            .map(|l| {
                let (s, d) = tab_pair(l, "character map")?;
                Ok((single_char(s)?, single_char(d)?))
            })
            .collect::<Result<Vec<_>>>()?,
    );
    let unigrams = r.section("[unigram]")?.into_iter().map(str::to_owned).collect();
    let bigrams = r
        .section("[bigram]")?
        .into_iter()
        .map(|l| tab_pair(l, "bigram").map(|(a, b)| (a.to_owned(), b.to_owned())))
        .collect::<Result<Vec<_>>>()?;
    let vocab = Vocab::from_lists(unigrams, bigrams).map_err(|e| Error::Format(e.to_string()))?;

    let n: usize = r.number("[params]")?;
    let mut params = ParamSet::new();
    for _ in 0..n {
        let line = r.line()?;
        let fields: Vec<&str> = line.split(' ').collect();
        let bad = || Error::Format(format!("malformed tensor header `{line}`"));
        let (name, ndim) = match fields.as_slice() {
            [name, ndim, ..] => (*name, ndim.parse::<usize>().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        if fields.len() != ndim + 2 {
            return Err(bad());
        }
        let shape = fields[2..]
            .iter()
            .map(|d| d.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(bad)?;
        let values = r
            .take(count)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        params.add(name, Tensor::from_vec(&shape, values)?);
    }
    if r.pos != bytes.len() {
        return corrupt("trailing bytes after the last tensor");
    }
    let model = SegModel::from_parts(vocab, hyper, criteria, normalize, char_map, params).map_err(|e| match e {
        Error::ShapeMismatch { .. } | Error::Config(_) => Error::Format(e.to_string()),
        other => other,
    })?;
    Ok(model)
}
