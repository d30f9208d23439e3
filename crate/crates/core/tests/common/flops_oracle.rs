//! Brute-force FLOPs oracle.
//!
//! Runs the actual arithmetic of each module on concrete numbers with a
//! float wrapper that tallies every scalar operation it performs. Nothing
//! here calls into the crate's closed forms.

#![allow(clippy::suspicious_arithmetic_impl)]

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Sub};

#[derive(Default, Debug, Clone, Copy)]
pub struct Tally {
    pub mul: u64,
    pub add: u64,
    pub sub: u64,
    pub div: u64,
    pub exp: u64,
    pub sqrt: u64,
    pub gelu: u64,
}

impl Tally {
    /// multiply/add/subtract/divide/exp/sqrt = 1, GELU = 8.
    pub fn flops(&self) -> u64 {
        self.mul + self.add + self.sub + self.div + self.exp + self.sqrt + 8 * self.gelu
    }
}

thread_local! {
    static TALLY: RefCell<Tally> = RefCell::new(Tally::default());
}

fn bump(f: impl FnOnce(&mut Tally)) {
    TALLY.with(|t| f(&mut t.borrow_mut()));
}

#[derive(Debug, Clone, Copy)]
pub struct Op(pub f64);

impl Add for Op {
    type Output = Op;
    fn add(self, o: Op) -> Op {
        bump(|t| t.add += 1);
        Op(self.0 + o.0)
    }
}
impl Sub for Op {
    type Output = Op;
    fn sub(self, o: Op) -> Op {
        bump(|t| t.sub += 1);
        Op(self.0 - o.0)
    }
}
impl Mul for Op {
    type Output = Op;
    fn mul(self, o: Op) -> Op {
        bump(|t| t.mul += 1);
        Op(self.0 * o.0)
    }
}
impl Div for Op {
    type Output = Op;
    fn div(self, o: Op) -> Op {
        bump(|t| t.div += 1);
        Op(self.0 / o.0)
    }
}
impl Op {
    fn exp(self) -> Op {
        bump(|t| t.exp += 1);
        Op(self.0.exp())
    }
    fn sqrt(self) -> Op {
        bump(|t| t.sqrt += 1);
        Op(self.0.sqrt())
    }
    fn gelu(self) -> Op {
        bump(|t| t.gelu += 1);
        let x = self.0;
        Op(0.5 * x * (1.0 + (0.797_884_560_8 * (x + 0.044_715 * x * x * x)).tanh()))
    }
}

/// Counts the operations `f` performs.
pub fn count<T>(f: impl FnOnce() -> T) -> (T, Tally) {
    TALLY.with(|t| *t.borrow_mut() = Tally::default());
    let out = f();
    (out, TALLY.with(|t| *t.borrow()))
}

// Deterministic pseudo-random fill; values only need to be finite.
fn fill(rows: usize, cols: usize, salt: u64) -> Vec<Vec<Op>> {
    let mut state = salt
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    state = state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    Op(((state >> 33) as f64 / (1u64 << 31) as f64) - 0.5)
                })
                .collect()
        })
        .collect()
}

/// `x · w + b`: the accumulator starts at the bias.
fn linear(x: &[Vec<Op>], w: &[Vec<Op>], b: &[Op]) -> Vec<Vec<Op>> {
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| {
                    let mut acc = b[j];
                    for (k, xv) in row.iter().enumerate() {
                        acc = acc + *xv * w[k][j];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn sum(xs: impl Iterator<Item = Op>) -> Op {
    xs.reduce(|a, b| a + b).expect("non-empty")
}

fn layer_norm(x: &[Vec<Op>], gamma: &[Op], beta: &[Op]) -> Vec<Vec<Op>> {
    let eps = Op(1e-12);
    x.iter()
        .map(|row| {
            let d = Op(row.len() as f64);
            let mean = sum(row.iter().copied()) / d;
            let var = sum(row.iter().map(|&v| {
                let c = v - mean;
                c * c
            })) / d;
            let std = (var + eps).sqrt();
            row.iter()
                .enumerate()
                .map(|(i, &v)| (v - mean) / std * gamma[i] + beta[i])
                .collect()
        })
        .collect()
}

fn add_rows(a: &[Vec<Op>], b: &[Vec<Op>]) -> Vec<Vec<Op>> {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(&x, &y)| x + y).collect())
        .collect()
}

fn softmax(row: &[Op]) -> Vec<Op> {
    let max = row.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<Op> = row.iter().map(|&v| (v - Op(max)).exp()).collect();
    let total = sum(e.iter().copied());
    e.into_iter().map(|v| v / total).collect()
}

/// One post-LN encoder layer, scalar by scalar.
pub fn simulate_layer(n: usize, d: usize, h: usize, ffn: usize) -> Tally {
    let x = fill(n, d, 1);
    let wq = fill(d, d, 2);
    let wk = fill(d, d, 3);
    let wv = fill(d, d, 4);
    let wo = fill(d, d, 5);
    let bd = fill(1, d, 6).remove(0);
    let w1 = fill(d, ffn, 7);
    let b1 = fill(1, ffn, 8).remove(0);
    let w2 = fill(ffn, d, 9);
    let g = fill(1, d, 10).remove(0);
    let dk = d / h;
    let scale = Op((dk as f64).sqrt());

    count(|| {
        let q = linear(&x, &wq, &bd);
        let k = linear(&x, &wk, &bd);
        let v = linear(&x, &wv, &bd);
        let mut context = vec![vec![Op(0.0); d]; n];
        for head in 0..h {
            let cols = head * dk..(head + 1) * dk;
            for i in 0..n {
                let scores: Vec<Op> = (0..n)
                    .map(|j| {
                        let mut acc = Op(0.0);
                        for c in cols.clone() {
                            acc = acc + q[i][c] * k[j][c];
                        }
                        acc / scale
                    })
                    .collect();
                let probs = softmax(&scores);
                for c in cols.clone() {
                    let mut acc = Op(0.0);
                    for j in 0..n {
                        acc = acc + probs[j] * v[j][c];
                    }
                    context[i][c] = acc;
                }
            }
        }
        let attn = linear(&context, &wo, &bd);
        let h1 = layer_norm(&add_rows(&x, &attn), &g, &bd);
        let inner: Vec<Vec<Op>> = linear(&h1, &w1, &b1)
            .into_iter()
            .map(|r| r.into_iter().map(Op::gelu).collect())
            .collect();
        let out = linear(&inner, &w2, &bd);
        layer_norm(&add_rows(&h1, &out), &g, &bd)
    })
    .1
}

/// Word + position + segment lookups, summed, then LayerNorm.
pub fn simulate_embedding(n: usize, d: usize) -> Tally {
    let word = fill(n, d, 11);
    let pos = fill(n, d, 12);
    let seg = fill(n, d, 13);
    let g = fill(1, d, 14).remove(0);
    count(|| {
        let summed: Vec<Vec<Op>> = (0..n)
            .map(|i| (0..d).map(|c| word[i][c] + pos[i][c] + seg[i][c]).collect())
            .collect();
        layer_norm(&summed, &g, &g)
    })
    .1
}

/// Affine exit head on a pooled vector.
pub fn simulate_exit(d: usize, labels: usize) -> Tally {
    let x = fill(1, d, 15);
    let w = fill(d, labels, 16);
    let b = fill(1, labels, 17).remove(0);
    count(|| linear(&x, &w, &b)).1
}
