use rand::{Rng, RngCore};

use super::tensor::{ParamId, ParamSet, Tensor};
use crate::error::{contract, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Backward rule for operations defined outside this module.
pub trait CustomOp {
    /// Returns one gradient contribution per input, each the length of that
    /// input, given the gradient of the output.
    fn backward(&self, out_grad: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Input,
    Param(ParamId),
    EmbedRow { param: ParamId, row: usize },
    Affine { w: Var, x: Var, b: Option<Var> },
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Var, Var),
    Slice { a: Var, start: usize },
    Tanh(Var),
    Sigmoid(Var),
    Dropout { a: Var, mask: Vec<f64> },
    Sum(Var),
    Scale(Var, f64),
    Stack(Vec<Var>),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Reverse-mode computation tape. Nodes are stored in recording order, which
/// is a topological order; backward walks it in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch<T>(op: &'static str, left: &[usize], right: &[usize]) -> Result<T> {
    Err(Error::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.grad()
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// A constant or differentiable input not owned by a [`ParamSet`].
    pub fn input(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Input)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.input(Tensor::zeros(shape))
    }

    /// Records a copy of a parameter; its gradient flows back into `params`.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let t = params.get(id);
        let copy = Tensor::from_vec(t.shape(), t.values().to_vec()).expect("shape is consistent");
        self.push(copy, Op::Param(id))
    }

    /// Row `row` of a 2-D embedding table, without copying the whole table.
    pub fn embed(&mut self, params: &ParamSet, table: ParamId, row: usize) -> Result<Var> {
        let t = params.get(table);
        let shape = t.shape();
        if shape.len() != 2 {
            return mismatch("embed", shape, &[row]);
        }
        if row >= shape[0] {
            return contract(format!("embedding row {row} out of range for {shape:?}"));
        }
        let d = shape[1];
        let values = t.values()[row * d..(row + 1) * d].to_vec();
        Ok(self.push(
            Tensor::from_vec(&[d], values)?,
            Op::EmbedRow { param: table, row },
        ))
    }

    /// `W^T x + b` with `W: [d_in, d_out]`, `x: [d_in]`, `b: [d_out]`.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let ws = self.shape(w);
        if ws.len() != 2 || self.shape(x) != [ws[0]] {
            return mismatch("affine", ws, self.shape(x));
        }
        let (d_in, d_out) = (ws[0], ws[1]);
        let mut y = match b {
            Some(b) => {
                if self.shape(b) != [d_out] {
                    return mismatch("affine", ws, self.shape(b));
                }
                self.value(b).to_vec()
            }
            None => vec![0.0; d_out],
        };
        let wv = self.value(w);
        let xv = self.value(x);
        for i in 0..d_in {
            let xi = xv[i];
            if xi != 0.0 {
                for (yj, wij) in y.iter_mut().zip(&wv[i * d_out..(i + 1) * d_out]) {
                    *yj += xi * wij;
                }
            }
        }
        let t = Tensor::from_vec(&[d_out], y)?;
        Ok(self.push(t, Op::Affine { w, x, b }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return mismatch(op, self.shape(a), self.shape(b));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let values = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(self.shape(a), values).expect("shapes checked")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let values = self.value(a).iter().map(|&x| f(x)).collect();
        Tensor::from_vec(self.shape(a), values).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Concatenation of two vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 1 || self.shape(b).len() != 1 {
            return mismatch("concat", self.shape(a), self.shape(b));
        }
        let mut v = self.value(a).to_vec();
        v.extend_from_slice(self.value(b));
        let t = Tensor::from_vec(&[v.len()], v)?;
        Ok(self.push(t, Op::Concat(a, b)))
    }

    /// Elements `start..start + len` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || start + len > s[0] {
            return mismatch("slice", s, &[start, start + len]);
        }
        let v = self.value(a)[start..start + len].to_vec();
        let t = Tensor::from_vec(&[len], v)?;
        Ok(self.push(t, Op::Slice { a, start }))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    /// Inverted dropout. With `rng = None` (eval mode) or `rate == 0` this is
    /// the identity and returns `a` itself.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return contract(format!("dropout rate {rate} outside [0, 1)"));
        }
        let Some(rng) = rng else { return Ok(a) };
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let values = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::from_vec(self.shape(a), values)?;
        Ok(self.push(t, Op::Dropout { a, mask }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.map(a, |x| x * factor);
        self.push(t, Op::Scale(a, factor))
    }

    /// Stacks equal-length vectors into a `[rows, d]` matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return contract("stack of zero rows");
        };
        let s0 = self.shape(first).to_vec();
        if s0.len() != 1 {
            return mismatch("stack", &s0, &[]);
        }
        let mut v = Vec::with_capacity(rows.len() * s0[0]);
        for &r in rows {
            if self.shape(r) != s0.as_slice() {
                return mismatch("stack", &s0, self.shape(r));
            }
            v.extend_from_slice(self.value(r));
        }
        let t = Tensor::from_vec(&[rows.len(), s0[0]], v)?;
        Ok(self.push(t, Op::Stack(rows.to_vec())))
    }

    /// Records a node whose value was computed by the caller and whose
    /// gradient rule is supplied by `op`.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Back-propagates from the scalar `loss`. Node gradients are recomputed
    /// from scratch; parameter gradients in `params` are accumulated.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if self.tensor(loss).len() != 1 {
            return contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        for n in &mut self.nodes {
            n.tensor.zero_grad();
        }
        self.nodes[loss.0].tensor.grad_mut()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let gy = node.tensor.grad();
            if gy.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => add_into(params.get_mut(*id).grad_mut(), gy),
                Op::EmbedRow { param, row } => {
                    let d = gy.len();
                    let g = &mut params.get_mut(*param).grad_mut()[row * d..(row + 1) * d];
                    add_into(g, gy);
                }
                Op::Affine { w, x, b } => {
                    let ws = before[w.0].tensor.shape();
                    let (d_in, d_out) = (ws[0], ws[1]);
                    let wv = before[w.0].tensor.values();
                    let dx: Vec<f64> = (0..d_in)
                        .map(|r| {
                            wv[r * d_out..(r + 1) * d_out]
                                .iter()
                                .zip(gy)
                                .map(|(a, g)| a * g)
                                .sum()
                        })
                        .collect();
                    let xv = before[x.0].tensor.values().to_vec();
                    let gw = before[w.0].tensor.grad_mut();
                    for (r, &xr) in xv.iter().enumerate() {
                        if xr != 0.0 {
                            for (g, &gj) in gw[r * d_out..(r + 1) * d_out].iter_mut().zip(gy) {
                                *g += xr * gj;
                            }
                        }
                    }
                    add_into(before[x.0].tensor.grad_mut(), &dx);
                    if let Some(b) = b {
                        add_into(before[b.0].tensor.grad_mut(), gy);
                    }
                }
                Op::Add(a, b) => {
                    add_into(before[a.0].tensor.grad_mut(), gy);
                    add_into(before[b.0].tensor.grad_mut(), gy);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = gy
                        .iter()
                        .zip(before[b.0].tensor.values())
                        .map(|(g, v)| g * v)
                        .collect();
                    let db: Vec<f64> = gy
                        .iter()
                        .zip(before[a.0].tensor.values())
                        .map(|(g, v)| g * v)
                        .collect();
                    add_into(before[a.0].tensor.grad_mut(), &da);
                    add_into(before[b.0].tensor.grad_mut(), &db);
                }
                Op::Concat(a, b) => {
                    let na = before[a.0].tensor.len();
                    add_into(before[a.0].tensor.grad_mut(), &gy[..na]);
                    add_into(before[b.0].tensor.grad_mut(), &gy[na..]);
                }
                Op::Slice { a, start } => {
                    add_into(&mut before[a.0].tensor.grad_mut()[*start..], gy);
                }
                Op::Tanh(a) => {
                    let y = node.tensor.values();
                    for ((g, gy), y) in before[a.0].tensor.grad_mut().iter_mut().zip(gy).zip(y) {
                        *g += gy * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.tensor.values();
                    for ((g, gy), y) in before[a.0].tensor.grad_mut().iter_mut().zip(gy).zip(y) {
                        *g += gy * y * (1.0 - y);
                    }
                }
                Op::Dropout { a, mask } => {
                    for ((g, gy), m) in before[a.0].tensor.grad_mut().iter_mut().zip(gy).zip(mask) {
                        *g += gy * m;
                    }
                }
                Op::Sum(a) => {
                    let g0 = gy[0];
                    for g in before[a.0].tensor.grad_mut() {
                        *g += g0;
                    }
                }
                Op::Scale(a, f) => {
                    for (g, gy) in before[a.0].tensor.grad_mut().iter_mut().zip(gy) {
                        *g += gy * f;
                    }
                }
                Op::Stack(rows) => {
                    let d = gy.len() / rows.len();
                    for (k, r) in rows.iter().enumerate() {
                        add_into(before[r.0].tensor.grad_mut(), &gy[k * d..(k + 1) * d]);
                    }
                }
                Op::Custom { inputs, op } => {
                    let grads = op.backward(gy);
                    for (v, g) in inputs.iter().zip(grads) {
                        add_into(before[v.0].tensor.grad_mut(), &g);
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
