//! First-order linear-chain CRF over the BMES tagset.
//!
//! A path `y_1..y_n` is scored as
//! `A[Start][y_1] + sum A[y_i][y_{i+1}] + A[y_n][End] + sum P[i][y_i]`:
//! the implicit endpoints are `y_0 = Start` and `y_{n+1} = End`.
//! All computations stay in the log domain.

use crate::corpus::Tag;
use crate::error::{contract, Error, Result};
use crate::nn::{CustomOp, Tape, Tensor, Var};

pub const NUM_TAGS: usize = 4;
/// Data tags plus Start and End.
pub const NUM_STATES: usize = NUM_TAGS + 2;
pub const START: usize = 4;
pub const END: usize = 5;
/// Score of structurally impossible transitions (into Start, out of End).
pub const IMPOSSIBLE: f64 = -1e4;
/// Largest `n` the brute-force oracles accept.
pub const BRUTE_FORCE_LIMIT: usize = 10;

pub type Transitions = [[f64; NUM_STATES]; NUM_STATES];

/// Flat indices (row-major 6x6) of the transitions that no path can use.
pub fn impossible_transitions() -> Vec<usize> {
    let into_start = (0..NUM_STATES).map(|from| from * NUM_STATES + START);
    let out_of_end = (0..NUM_STATES).filter(|&to| to != START).map(|to| END * NUM_STATES + to);
    into_start.chain(out_of_end).collect()
}

/// Emission scores `P` (n x 4) and transition scores `A` (6 x 6).
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    emissions: Vec<[f64; NUM_TAGS]>,
    transitions: Transitions,
}

impl Lattice {
    pub fn new(emissions: Vec<[f64; NUM_TAGS]>, transitions: Transitions) -> Result<Self> {
        if emissions.is_empty() {
            return contract("lattice needs at least one position");
        }
        let finite = emissions.iter().flatten().chain(transitions.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return contract("lattice contains non-finite scores");
        }
        Ok(Lattice {
            emissions,
            transitions,
        })
    }

    /// Builds from flat row-major buffers of length `4n` and 36.
    pub fn from_flat(emissions: &[f64], transitions: &[f64]) -> Result<Self> {
        if !emissions.len().is_multiple_of(NUM_TAGS) || transitions.len() != NUM_STATES * NUM_STATES {
            return Err(Error::ShapeMismatch {
                op: "lattice",
                left: vec![emissions.len()],
                right: vec![transitions.len()],
            });
        }
        let e = emissions
            .chunks_exact(NUM_TAGS)
            .map(|r| [r[0], r[1], r[2], r[3]])
            .collect();
        let mut a = [[0.0; NUM_STATES]; NUM_STATES];
        for (i, row) in a.iter_mut().enumerate() {
            row.copy_from_slice(&transitions[i * NUM_STATES..(i + 1) * NUM_STATES]);
        }
        Lattice::new(e, a)
    }

    pub fn len(&self) -> usize {
        self.emissions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn emissions(&self) -> &[[f64; NUM_TAGS]] {
        &self.emissions
    }

    pub fn transitions(&self) -> &Transitions {
        &self.transitions
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn path_score(l: &Lattice, path: &[Tag]) -> Result<f64> {
    if path.len() != l.len() {
        return contract(format!(
            "path of length {} for lattice of length {}",
            path.len(),
            l.len()
        ));
    }
    let a = &l.transitions;
    let mut s = a[START][path[0].index()];
    for w in path.windows(2) {
        s += a[w[0].index()][w[1].index()];
    }
    s += a[path[path.len() - 1].index()][END];
    for (row, t) in l.emissions.iter().zip(path) {
        s += row[t.index()];
    }
    Ok(s)
}

fn forward(l: &Lattice) -> Vec<[f64; NUM_TAGS]> {
    let a = &l.transitions;
    let mut alpha = Vec::with_capacity(l.len());
    let mut prev = [0.0; NUM_TAGS];
    for y in 0..NUM_TAGS {
        prev[y] = a[START][y] + l.emissions[0][y];
    }
    alpha.push(prev);
    for row in &l.emissions[1..] {
        let mut cur = [0.0; NUM_TAGS];
        for y in 0..NUM_TAGS {
            let terms: [f64; NUM_TAGS] = std::array::from_fn(|z| prev[z] + a[z][y]);
            cur[y] = row[y] + log_sum_exp(&terms);
        }
        alpha.push(cur);
        prev = cur;
    }
    alpha
}

fn backward(l: &Lattice) -> Vec<[f64; NUM_TAGS]> {
    let a = &l.transitions;
    let n = l.len();
    let mut beta = vec![[0.0; NUM_TAGS]; n];
    for y in 0..NUM_TAGS {
        beta[n - 1][y] = a[y][END];
    }
    for i in (0..n - 1).rev() {
        for y in 0..NUM_TAGS {
            let terms: [f64; NUM_TAGS] =
                std::array::from_fn(|z| a[y][z] + l.emissions[i + 1][z] + beta[i + 1][z]);
            beta[i][y] = log_sum_exp(&terms);
        }
    }
    beta
}

fn final_log_z(l: &Lattice, alpha: &[[f64; NUM_TAGS]]) -> f64 {
    let last = alpha[alpha.len() - 1];
    let terms: [f64; NUM_TAGS] = std::array::from_fn(|y| last[y] + l.transitions[y][END]);
    log_sum_exp(&terms)
}

/// Log of the sum of `exp(path_score)` over all `4^n` paths, by the forward
/// algorithm.
pub fn log_partition(l: &Lattice) -> f64 {
    final_log_z(l, &forward(l))
}

/// `-log p(gold | lattice)`.
pub fn nll(l: &Lattice, gold: &[Tag]) -> Result<f64> {
    let s = path_score(l, gold)?;
    Ok((log_partition(l) - s).max(0.0))
}

/// Posterior expectations under the CRF distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub log_z: f64,
    /// `p(y_i = y)`.
    pub unary: Vec<[f64; NUM_TAGS]>,
    /// Expected number of uses of each transition, Start/End included.
    pub transitions: Transitions,
}

/// Forward-backward marginals.
pub fn marginals(l: &Lattice) -> Marginals {
    let alpha = forward(l);
    let beta = backward(l);
    let log_z = final_log_z(l, &alpha);
    let a = &l.transitions;
    let n = l.len();
    let unary: Vec<[f64; NUM_TAGS]> = (0..n)
        .map(|i| std::array::from_fn(|y| (alpha[i][y] + beta[i][y] - log_z).exp()))
        .collect();
    let mut trans = [[0.0; NUM_STATES]; NUM_STATES];
    for y in 0..NUM_TAGS {
        trans[START][y] = unary[0][y];
        trans[y][END] = unary[n - 1][y];
    }
    for i in 0..n - 1 {
        for from in 0..NUM_TAGS {
            for to in 0..NUM_TAGS {
                let lp = alpha[i][from] + a[from][to] + l.emissions[i + 1][to] + beta[i + 1][to] - log_z;
                trans[from][to] += lp.exp();
            }
        }
    }
    Marginals {
        log_z,
        unary,
        transitions: trans,
    }
}

/// Highest-scoring path. Among equally scoring paths the one with the
/// smallest tag index at the earliest differing position wins.
pub fn viterbi(l: &Lattice) -> (Vec<Tag>, f64) {
    let a = &l.transitions;
    let n = l.len();
    // best[i][y]: best score of positions i+1.. given y_i = y, End included.
    let mut best = vec![[0.0; NUM_TAGS]; n];
    for y in 0..NUM_TAGS {
        best[n - 1][y] = a[y][END];
    }
    for i in (0..n - 1).rev() {
        for y in 0..NUM_TAGS {
            best[i][y] = (0..NUM_TAGS)
                .map(|z| a[y][z] + l.emissions[i + 1][z] + best[i + 1][z])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    // Forward greedy pass; strict `>` keeps the smallest index on ties.
    let mut path = Vec::with_capacity(n);
    let mut prev = START;
    for i in 0..n {
        let mut arg = 0;
        let mut top = f64::NEG_INFINITY;
        for y in 0..NUM_TAGS {
            let v = a[prev][y] + l.emissions[i][y] + best[i][y];
            if v > top {
                top = v;
                arg = y;
            }
        }
        path.push(Tag::ALL[arg]);
        prev = arg;
    }
    let score = path_score(l, &path).expect("path has lattice length");
    (path, score)
}

fn all_paths(n: usize) -> impl Iterator<Item = Vec<Tag>> {
    (0..NUM_TAGS.pow(n as u32)).map(move |mut code| {
        let mut p = vec![Tag::B; n];
        for slot in p.iter_mut().rev() {
            *slot = Tag::ALL[code % NUM_TAGS];
            code /= NUM_TAGS;
        }
        p
    })
}

fn check_brute_force(l: &Lattice) -> Result<()> {
    if l.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::EnumerationTooLarge {
            n: l.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    Ok(())
}

/// Exhaustive log-partition over all `4^n` paths.
pub fn brute_force_log_partition(l: &Lattice) -> Result<f64> {
    check_brute_force(l)?;
    let scores: Vec<f64> = all_paths(l.len())
        .map(|p| path_score(l, &p).expect("length matches"))
        .collect();
    Ok(log_sum_exp(&scores))
}

/// Exhaustive argmax; paths are visited in lexicographic tag order and only
/// a strictly better score replaces the incumbent.
pub fn brute_force_best(l: &Lattice) -> Result<(Vec<Tag>, f64)> {
    check_brute_force(l)?;
    let mut best: Option<(Vec<Tag>, f64)> = None;
    for p in all_paths(l.len()) {
        let s = path_score(l, &p)?;
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((p, s));
        }
    }
    Ok(best.expect("at least one path"))
}

/// Enumerates every path with its score. Test oracle; same limit as above.
pub fn brute_force_paths(l: &Lattice) -> Result<Vec<(Vec<Tag>, f64)>> {
    check_brute_force(l)?;
    Ok(all_paths(l.len())
        .map(|p| {
            let s = path_score(l, &p).expect("length matches");
            (p, s)
        })
        .collect())
}

struct NllOp {
    emission_grad: Vec<f64>,
    transition_grad: Vec<f64>,
}

impl CustomOp for NllOp {
    fn backward(&self, out_grad: &[f64]) -> Vec<Vec<f64>> {
        let g = out_grad[0];
        vec![
            self.emission_grad.iter().map(|v| v * g).collect(),
            self.transition_grad.iter().map(|v| v * g).collect(),
        ]
    }
}

/// Records the CRF negative log-likelihood on `tape`. `emissions` must be
/// `[n, 4]` and `transitions` `[6, 6]`. The gradient is expected counts minus
/// gold counts.
pub fn nll_on_tape(tape: &mut Tape, emissions: Var, transitions: Var, gold: &[Tag]) -> Result<Var> {
    let es = tape.shape(emissions);
    if es.len() != 2 || es[1] != NUM_TAGS || es[0] != gold.len() {
        return Err(Error::ShapeMismatch {
            op: "crf nll",
            left: es.to_vec(),
            right: vec![gold.len(), NUM_TAGS],
        });
    }
    if tape.shape(transitions) != [NUM_STATES, NUM_STATES] {
        return Err(Error::ShapeMismatch {
            op: "crf nll",
            left: tape.shape(transitions).to_vec(),
            right: vec![NUM_STATES, NUM_STATES],
        });
    }
    let lattice = Lattice::from_flat(tape.value(emissions), tape.value(transitions))?;
    let loss = nll(&lattice, gold)?;
    let m = marginals(&lattice);

    let mut emission_grad: Vec<f64> = m.unary.iter().flatten().copied().collect();
    for (i, t) in gold.iter().enumerate() {
        emission_grad[i * NUM_TAGS + t.index()] -= 1.0;
    }
    let mut transition_grad: Vec<f64> = m.transitions.iter().flatten().copied().collect();
    let mut prev = START;
    for t in gold.iter().map(|t| t.index()).chain(std::iter::once(END)) {
        transition_grad[prev * NUM_STATES + t] -= 1.0;
        prev = t;
    }
    Ok(tape.custom(
        &[emissions, transitions],
        Tensor::scalar(loss),
        Box::new(NllOp {
            emission_grad,
            transition_grad,
        }),
    ))
}
