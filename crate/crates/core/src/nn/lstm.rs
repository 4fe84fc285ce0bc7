use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::{ParamId, ParamSet, Tensor};
use crate::error::{contract, Error, Result};

/// Gate order inside the packed weight matrices.
pub const GATES: [&str; 4] = ["input", "forget", "cell", "output"];

/// Parameters of one LSTM direction.
///
/// The four gates are packed column-wise: `input` is `[d_in, 4 * d_hidden]`
/// and gate `k` owns columns `k * d_hidden .. (k + 1) * d_hidden`, in
/// [`GATES`] order. Same for `recurrent` (`[d_hidden, 4 * d_hidden]`) and
/// `bias` (`[4 * d_hidden]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub input: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl LstmParams {
    /// Glorot-uniform weights per gate, forget-gate bias 1, other biases 0.
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let input = params.add(
            format!("{prefix}.input"),
            Tensor::glorot(&[d_in, 4 * d_hidden], d_in, d_hidden, rng),
        );
        let recurrent = params.add(
            format!("{prefix}.recurrent"),
            Tensor::glorot(&[d_hidden, 4 * d_hidden], d_hidden, d_hidden, rng),
        );
        let mut b = Tensor::zeros(&[4 * d_hidden]);
        b.values_mut()[d_hidden..2 * d_hidden].fill(1.0);
        let bias = params.add(format!("{prefix}.bias"), b);
        LstmParams {
            input,
            recurrent,
            bias,
            d_in,
            d_hidden,
        }
    }

    /// Shapes of the three tensors for the given dimensions.
    pub fn shapes(d_in: usize, d_hidden: usize) -> [Vec<usize>; 3] {
        [
            vec![d_in, 4 * d_hidden],
            vec![d_hidden, 4 * d_hidden],
            vec![4 * d_hidden],
        ]
    }

    /// Records the parameters on `tape` once per sequence.
    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> Result<BoundLstm> {
        let [si, sr, sb] = Self::shapes(self.d_in, self.d_hidden);
        for (id, want) in [(self.input, si), (self.recurrent, sr), (self.bias, sb)] {
            let got = params.get(id).shape();
            if got != want.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "lstm bind",
                    left: want,
                    right: got.to_vec(),
                });
            }
        }
        Ok(BoundLstm {
            input: tape.param(params, self.input),
            recurrent: tape.param(params, self.recurrent),
            bias: tape.param(params, self.bias),
            d_in: self.d_in,
            d_hidden: self.d_hidden,
        })
    }
}

/// LSTM parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    input: Var,
    recurrent: Var,
    bias: Var,
    d_in: usize,
    d_hidden: usize,
}

impl BoundLstm {
    pub fn d_hidden(&self) -> usize {
        self.d_hidden
    }
}

/// One LSTM step:
/// `c = f * c_prev + i * g`, `h = o * tanh(c)`.
pub fn lstm_step(tape: &mut Tape, p: &BoundLstm, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let d = p.d_hidden;
    if tape.shape(x) != [p.d_in] {
        return Err(Error::ShapeMismatch {
            op: "lstm_step",
            left: vec![p.d_in],
            right: tape.shape(x).to_vec(),
        });
    }
    for v in [h_prev, c_prev] {
        if tape.shape(v) != [d] {
            return Err(Error::ShapeMismatch {
                op: "lstm_step",
                left: vec![d],
                right: tape.shape(v).to_vec(),
            });
        }
    }
    let zx = tape.affine(p.input, x, Some(p.bias))?;
    let zh = tape.affine(p.recurrent, h_prev, None)?;
    let z = tape.add(zx, zh)?;
    let i = tape.slice(z, 0, d)?;
    let f = tape.slice(z, d, d)?;
    let g = tape.slice(z, 2 * d, d)?;
    let o = tape.slice(z, 3 * d, d)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

fn run_direction(tape: &mut Tape, p: &BoundLstm, inputs: impl Iterator<Item = Var>) -> Result<Vec<Var>> {
    let mut h = tape.zeros(&[p.d_hidden]);
    let mut c = tape.zeros(&[p.d_hidden]);
    let mut out = Vec::new();
    for x in inputs {
        (h, c) = lstm_step(tape, p, x, h, c)?;
        out.push(h);
    }
    Ok(out)
}

/// Bidirectional encoding: `output[t] = [forward h_t; backward h_t]`, with
/// zero initial states in both directions.
pub fn bi_lstm(tape: &mut Tape, fwd: &BoundLstm, bwd: &BoundLstm, inputs: &[Var]) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return contract("bi_lstm over an empty sequence");
    }
    let forward = run_direction(tape, fwd, inputs.iter().copied())?;
    let mut backward = run_direction(tape, bwd, inputs.iter().rev().copied())?;
    backward.reverse();
    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| tape.concat(f, b))
        .collect()
}
