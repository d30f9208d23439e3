//! Straightforward re-implementation of the multi-exit forward pass.

use exitbench_core::trainer::{Affine, MultiExitNet};

fn affine(a: &Affine, x: &[f64]) -> Vec<f64> {
    (0..a.weight.rows)
        .map(|o| {
            let mut acc = a.bias[o];
            for (c, xv) in x.iter().enumerate() {
                acc += a.weight.get(o, c) * xv;
            }
            acc
        })
        .collect()
}

/// `out[l][s]` is exit `l + 1`'s logits for sample `s`.
pub fn forward(net: &MultiExitNet, xs: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); net.blocks.len()];
    for x in xs {
        let mut h = x.clone();
        for ((block, head), exit) in net.blocks.iter().zip(&net.heads).zip(&mut out) {
            h = affine(block, &h).into_iter().map(f64::tanh).collect();
            exit.push(affine(head, &h));
        }
    }
    out
}

fn cross_entropy(z: &[f64], y: usize) -> f64 {
    let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
    lse - z[y]
}

pub fn exit_losses(net: &MultiExitNet, xs: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
    forward(net, xs)
        .iter()
        .map(|per_sample| {
            per_sample
                .iter()
                .zip(labels)
                .map(|(z, &y)| cross_entropy(z, y))
                .sum::<f64>()
                / labels.len() as f64
        })
        .collect()
}
