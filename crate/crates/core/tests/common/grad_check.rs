//! Central-difference gradient check for the multi-exit trainer.

use exitbench_core::trainer::{init_network, strided_groups, Matrix, MultiExitNet, Objective};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net_oracle;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-5;

pub struct Case {
    pub net: MultiExitNet,
    pub xs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.random_range(1..=4usize);
    let width = rng.random_range(1..=8usize);
    let classes = rng.random_range(2..=4usize);
    let mut net = init_network(layers, width, classes, seed).unwrap();
    for p in net.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let batch = rng.random_range(1..=4usize);
    let xs = (0..batch)
        .map(|_| (0..width).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    Case { net, xs, labels }
}

/// Exit weights of each objective, written out independently of the crate.
pub fn weights(objective: &Objective, layers: usize) -> Vec<f64> {
    (1..=layers)
        .map(|l| match objective {
            Objective::Sum | Objective::GradientEquilibrium => 1.0,
            Objective::Weighted => 2.0 * l as f64 / (layers * (layers + 1)) as f64,
            Objective::Group(g) => {
                if g.contains(&l) {
                    1.0
                } else {
                    0.0
                }
            }
            Objective::TopOnly => {
                if l == layers {
                    1.0
                } else {
                    0.0
                }
            }
            Objective::InternalOnly => {
                if l < layers {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn weighted_loss(net: &MultiExitNet, case: &Case, w: &[f64]) -> f64 {
    net_oracle::exit_losses(net, &case.xs, &case.labels)
        .iter()
        .zip(w)
        .map(|(l, w)| l * w)
        .sum()
}

/// Central difference of the weighted objective in parameter `k` of either
/// the backbone (`block = true`) or the heads.
fn numeric(case: &Case, w: &[f64], block: bool, k: usize) -> f64 {
    let probe = |delta: f64| {
        let mut net = case.net.clone();
        let mut params = if block {
            net.block_params_mut()
        } else {
            net.head_params_mut()
        };
        *params[k] += delta;
        drop(params);
        weighted_loss(&net, case, w)
    };
    (probe(EPS) - probe(-EPS)) / (2.0 * EPS)
}

/// Max relative error between analytic and numeric gradients.
pub fn check(case: &Case, objective: &Objective) -> f64 {
    let layers = case.net.num_layers();
    let d = case.net.width;
    let w = weights(objective, layers);
    let pass = case
        .net
        .forward_all_exits(&Matrix::from_rows(&case.xs))
        .unwrap();
    let grads = case.net.backward(&pass, &case.labels, objective).unwrap();
    let mut worst: f64 = 0.0;

    for (k, &a) in grads.block_values().iter().enumerate() {
        let block = k / (d * d + d) + 1;
        let n = match objective {
            Objective::InternalOnly => 0.0,
            // (1/k_i) Σ_{j ≥ i} ∂L_j/∂θ_i with k_i = number of exits at or above block i
            Objective::GradientEquilibrium => {
                numeric(case, &w, true, k) / (layers - block + 1) as f64
            }
            _ => numeric(case, &w, true, k),
        };
        if matches!(objective, Objective::InternalOnly) {
            assert_eq!(
                a.to_bits(),
                0f64.to_bits(),
                "frozen block gradient must be exactly zero"
            );
        }
        worst = worst.max(rel_err(a, n));
    }
    for (k, &a) in grads.head_values().iter().enumerate() {
        worst = worst.max(rel_err(a, numeric(case, &w, false, k)));
    }
    worst
}

pub fn objectives(layers: usize, step: usize) -> Vec<Objective> {
    let mut out = vec![
        Objective::Sum,
        Objective::Weighted,
        Objective::GradientEquilibrium,
        Objective::TopOnly,
        Objective::InternalOnly,
    ];
    for g in 1..=layers {
        let groups = strided_groups(layers, g);
        out.push(Objective::Group(groups[step % groups.len()].clone()));
    }
    out
}
