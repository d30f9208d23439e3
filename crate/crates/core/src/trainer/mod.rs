//! Reference multi-exit trainer.
//!
//! A small tanh network with one classifier per block, trained by plain
//! gradient descent under the usual multi-exit objectives. It exists to
//! produce real per-exit logits for the exit simulator and to pin down how
//! each objective distributes gradient over the shared backbone.

mod data;
mod net;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{Split, SyntheticConfig, SyntheticDataset};
pub use net::{init_network, Affine, ForwardPass, Gradients, Matrix, MultiExitNet};

use crate::exitsim::{ExitOutputs, ExitValues, LogitsFile};
use crate::metrics::TaskKind;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid exit groups: {0}")]
    Groups(String),
    #[error("loss diverged at epoch {epoch}, step {step}: exit {exit} loss is {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        exit: usize,
        loss: f64,
    },
}

/// How the per-exit losses are combined during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainStrategy {
    /// `Σ_l L_l`.
    Sum,
    /// `Σ_l l·L_l / Σ_l l`; deeper exits weigh more.
    Weighted,
    /// Sum objective, but block `i`'s parameter gradient is divided by the
    /// number of exits at or above it.
    GradientEquilibrium,
    /// One group of exits per step, cycled in order. Exit ids are 1-based.
    Grouped { groups: Vec<Vec<usize>> },
    /// Train the top exit and backbone for `stage1_epochs`, then freeze the
    /// backbone and train the remaining exits for `stage2_epochs`.
    TwoStage {
        stage1_epochs: usize,
        stage2_epochs: usize,
    },
}

impl TrainStrategy {
    pub fn validate(&self, num_layers: usize, epochs: usize) -> Result<(), TrainError> {
        match self {
            TrainStrategy::Grouped { groups } => validate_groups(groups, num_layers),
            TrainStrategy::TwoStage {
                stage1_epochs,
                stage2_epochs,
            } if stage1_epochs + stage2_epochs != epochs => Err(TrainError::Config(format!(
                "epochs {epochs} != stage1_epochs {stage1_epochs} + stage2_epochs {stage2_epochs}"
            ))),
            _ => Ok(()),
        }
    }

    /// The objective used at a given epoch and global step.
    pub fn objective(&self, epoch: usize, step: usize) -> Result<Objective, TrainError> {
        Ok(match self {
            TrainStrategy::Sum => Objective::Sum,
            TrainStrategy::Weighted => Objective::Weighted,
            TrainStrategy::GradientEquilibrium => Objective::GradientEquilibrium,
            TrainStrategy::Grouped { groups } => {
                Objective::Group(group_schedule(groups, step)?.to_vec())
            }
            TrainStrategy::TwoStage { stage1_epochs, .. } => {
                if epoch < *stage1_epochs {
                    Objective::TopOnly
                } else {
                    Objective::InternalOnly
                }
            }
        })
    }
}

/// The loss actually optimised by a single gradient step.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Sum,
    Weighted,
    GradientEquilibrium,
    Group(Vec<usize>),
    TopOnly,
    /// Exits `1..L-1` with the backbone frozen.
    InternalOnly,
}

impl Objective {
    /// Weight of exit `l` (1-based) in the objective.
    pub fn exit_weight(&self, l: usize, num_layers: usize) -> f64 {
        match self {
            Objective::Sum | Objective::GradientEquilibrium => 1.0,
            Objective::Weighted => {
                let total = (num_layers * (num_layers + 1) / 2) as f64;
                l as f64 / total
            }
            Objective::Group(g) => f64::from(u8::from(g.contains(&l))),
            Objective::TopOnly => f64::from(u8::from(l == num_layers)),
            Objective::InternalOnly => f64::from(u8::from(l < num_layers)),
        }
    }

    /// Multiplier on block `i`'s own parameter gradient.
    pub fn block_scale(&self, i: usize, num_layers: usize) -> f64 {
        match self {
            Objective::GradientEquilibrium => 1.0 / (num_layers - i + 1) as f64,
            Objective::InternalOnly => 0.0,
            _ => 1.0,
        }
    }

    pub fn backbone_frozen(&self) -> bool {
        matches!(self, Objective::InternalOnly)
    }

    pub fn value(&self, losses: &[f64]) -> f64 {
        let n = losses.len();
        losses
            .iter()
            .enumerate()
            .map(|(i, l)| self.exit_weight(i + 1, n) * l)
            .sum()
    }
}

fn validate_groups(groups: &[Vec<usize>], num_layers: usize) -> Result<(), TrainError> {
    if groups.is_empty() {
        return Err(TrainError::Groups("no groups given".into()));
    }
    let mut covered = vec![false; num_layers];
    for (k, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(TrainError::Groups(format!("group {} is empty", k + 1)));
        }
        if let Some(&bad) = g.iter().find(|&&e| e == 0 || e > num_layers) {
            return Err(TrainError::Groups(format!(
                "group {} names exit {bad}, outside 1..={num_layers}",
                k + 1
            )));
        }
        if !g.contains(&num_layers) {
            return Err(TrainError::Groups(format!(
                "group {} does not contain the top exit {num_layers}",
                k + 1
            )));
        }
        g.iter().for_each(|&e| covered[e - 1] = true);
    }
    match covered.iter().position(|c| !c) {
        Some(missing) => Err(TrainError::Groups(format!(
            "exit {} is in no group",
            missing + 1
        ))),
        None => Ok(()),
    }
}

/// The group active at `step`.
pub fn group_schedule(groups: &[Vec<usize>], step: usize) -> Result<&[usize], TrainError> {
    if groups.is_empty() {
        return Err(TrainError::Groups("no groups given".into()));
    }
    Ok(&groups[step % groups.len()])
}

/// `num_groups` interleaved groups `{k, k+G, k+2G, …} ∪ {L}`.
pub fn strided_groups(num_exits: usize, num_groups: usize) -> Vec<Vec<usize>> {
    (1..=num_groups.min(num_exits))
        .map(|k| {
            let mut g: Vec<usize> = (k..=num_exits).step_by(num_groups).collect();
            if g.last() != Some(&num_exits) {
                g.push(num_exits);
            }
            g
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub num_layers: usize,
    pub width: usize,
    pub num_classes: usize,
    pub strategy: TrainStrategy,
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` trains on the full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Seeds initialisation and batch shuffling.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-exit mean cross-entropy on the whole training split after the epoch.
    pub exit_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub history: Vec<EpochRecord>,
}

/// Trains `net` in place. Identical inputs give bit-identical weights.
pub fn train(
    net: &mut MultiExitNet,
    data: &Split,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    let num_layers = net.num_layers();
    cfg.strategy.validate(num_layers, cfg.epochs)?;
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(TrainError::Config("learning_rate must be positive".into()));
    }
    if data.is_empty() {
        return Err(TrainError::Config("training split is empty".into()));
    }
    let batch = cfg.batch_size.unwrap_or(data.len()).clamp(1, data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if batch < data.len() {
            order.shuffle(&mut rng);
        }
        for rows in order.chunks(batch) {
            let objective = cfg.strategy.objective(epoch, step)?;
            let mb = data.subset(rows);
            let pass = net.forward_all_exits(&mb.features)?;
            let losses = net.exit_losses(&pass, &mb.labels)?;
            check_finite(&losses, epoch, step)?;
            let grads = net.backward(&pass, &mb.labels, &objective)?;
            net.apply_gradients(&grads, cfg.learning_rate, !objective.backbone_frozen());
            step += 1;
        }
        let pass = net.forward_all_exits(&data.features)?;
        let exit_losses = net.exit_losses(&pass, &data.labels)?;
        check_finite(&exit_losses, epoch, step)?;
        history.push(EpochRecord { epoch, exit_losses });
    }
    Ok(TrainReport {
        steps: step,
        history,
    })
}

fn check_finite(losses: &[f64], epoch: usize, step: usize) -> Result<(), TrainError> {
    match losses.iter().position(|l| !l.is_finite()) {
        Some(i) => Err(TrainError::Diverged {
            epoch,
            step,
            exit: i + 1,
            loss: losses[i],
        }),
        None => Ok(()),
    }
}

/// Fraction of correct predictions per exit.
pub fn exit_accuracies(net: &MultiExitNet, data: &Split) -> Result<Vec<f64>, TrainError> {
    let preds = net.predict_all_exits(&data.features)?;
    Ok(preds
        .iter()
        .map(|p| {
            let hits = p.iter().zip(&data.labels).filter(|(a, b)| a == b).count();
            hits as f64 / data.len().max(1) as f64
        })
        .collect())
}

/// Per-exit logits of every sample, in the simulator's input format.
pub fn export_logits(net: &MultiExitNet, data: &Split) -> Result<LogitsFile, TrainError> {
    let pass = net.forward_all_exits(&data.features)?;
    let samples = (0..data.len())
        .map(|r| ExitOutputs {
            index: r as u64,
            seq_len: Some(data.seq_lens[r]),
            per_exit: ExitValues::Logits(pass.logits.iter().map(|z| z.row(r).to_vec()).collect()),
        })
        .collect();
    Ok(LogitsFile {
        task_kind: TaskKind::Classification,
        num_exits: net.num_layers() as u64,
        num_labels: Some(net.num_classes as u64),
        samples,
    })
}
