//! The FLOPs-counting convention.
//!
//! Every cost in this crate is derived from the constant table below. One
//! scalar multiply and one scalar add each count as one FLOP (not MAC = 1).
//!
//! | operation            | FLOPs              |
//! |----------------------|--------------------|
//! | multiply             | 1                  |
//! | add                  | 1                  |
//! | subtract             | 1                  |
//! | divide               | 1                  |
//! | exponential          | 1                  |
//! | square root          | 1                  |
//! | GELU (per element)   | 8                  |
//! | tanh (per element)   | 4                  |
//! | comparison / max     | 0                  |
//! | table lookup         | 0                  |
//!
//! Composite rules built from the table:
//!
//! * `matmul(n, a, b)` with bias: every output accumulates `a` products into
//!   the bias, so it costs `a` multiplies and `a` adds: `2·n·a·b`.
//! * Dot products without bias accumulate into zero: `2·k` for length `k`.
//! * A plain sum over `w` values folds over the elements: `w − 1` adds.
//! * Softmax over a row of width `w`: subtract the max, exponentiate, sum,
//!   divide: `4w − 1`. Finding the max is a comparison and is free.
//! * LayerNorm over a row of width `d`: mean (`d`), variance of the centred
//!   values (`3d`), `+ eps` and `sqrt` (`2`), normalisation of the centred
//!   values (`2d`), scale and shift (`2d`): `8d + 2`.

/// Version tag embedded in every report that carries a FLOPs number.
pub const CONVENTION_VERSION: &str = "flops-v1";

/// Constant per-operation FLOP costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsConvention {
    pub multiply: u64,
    pub add: u64,
    pub subtract: u64,
    pub divide: u64,
    pub exp: u64,
    pub sqrt: u64,
    pub gelu: u64,
    pub tanh: u64,
}

/// The convention used throughout the crate.
pub const CONVENTION: FlopsConvention = FlopsConvention {
    multiply: 1,
    add: 1,
    subtract: 1,
    divide: 1,
    exp: 1,
    sqrt: 1,
    gelu: 8,
    tanh: 4,
};

impl FlopsConvention {
    /// `(n × a) · (a × b) + bias`.
    pub const fn matmul(&self, n: u64, a: u64, b: u64) -> u64 {
        n * b * a * (self.multiply + self.add)
    }

    /// Bias-free dot product of length `k`.
    pub const fn dot(&self, k: u64) -> u64 {
        k * (self.multiply + self.add)
    }

    /// Sum of `w` values.
    pub const fn sum(&self, w: u64) -> u64 {
        w.saturating_sub(1) * self.add
    }

    /// Numerically stable softmax over one row of width `w`.
    pub const fn softmax_row(&self, w: u64) -> u64 {
        w * self.subtract + w * self.exp + self.sum(w) + w * self.divide
    }

    /// LayerNorm over `n` rows of width `d`.
    pub const fn layer_norm(&self, n: u64, d: u64) -> u64 {
        let mean = self.sum(d) + self.divide;
        let var = d * self.subtract + d * self.multiply + self.sum(d) + self.divide;
        let std = self.add + self.sqrt;
        let normalize = d * self.subtract + d * self.divide;
        let affine = d * self.multiply + d * self.add;
        n * (mean + var + std + normalize + affine)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_rules_match_closed_forms() {
        let c = CONVENTION;
        assert_eq!(c.matmul(3, 5, 7), 2 * 3 * 5 * 7);
        assert_eq!(c.softmax_row(10), 39);
        for d in 1..20 {
            assert_eq!(c.layer_norm(3, d), 3 * (8 * d + 2));
        }
    }
}
