use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::net::Matrix;
use super::TrainError;
use crate::metrics::{GoldFile, MetricKind, TaskKind};
use crate::trace::Pred;

/// Gaussian-cluster classification data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_samples: usize,
    pub num_classes: usize,
    pub width: usize,
    /// Distance of every class centre from the origin.
    pub separation: f64,
    /// Per-coordinate standard deviation around the centre.
    pub noise: f64,
    pub train_fraction: f64,
    /// Token lengths attached to samples, drawn uniformly from this range.
    pub min_seq_len: u64,
    pub max_seq_len: u64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_samples: 400,
            num_classes: 3,
            width: 8,
            separation: 3.0,
            noise: 0.5,
            train_fraction: 0.75,
            min_seq_len: 16,
            max_seq_len: 128,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub seq_lens: Vec<u64>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Split {
        let features: Vec<Vec<f64>> = rows
            .iter()
            .map(|&r| self.features.row(r).to_vec())
            .collect();
        Split {
            features: Matrix {
                rows: rows.len(),
                cols: self.features.cols,
                data: features.into_iter().flatten().collect(),
            },
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            seq_lens: rows.iter().map(|&r| self.seq_lens[r]).collect(),
        }
    }

    pub fn gold_file(&self, dataset_id: &str, num_classes: usize) -> GoldFile {
        GoldFile {
            dataset_id: dataset_id.to_string(),
            task_kind: TaskKind::Classification,
            metric_kind: MetricKind::Accuracy,
            num_labels: Some(num_classes as u64),
            labels: self.labels.iter().map(|&y| Pred::Class(y as i64)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub num_classes: usize,
    pub train: Split,
    pub test: Split,
}

impl SyntheticDataset {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self, TrainError> {
        if cfg.num_classes < 2 || cfg.width == 0 || cfg.num_samples < 2 {
            return Err(TrainError::Config(
                "synthetic data needs num_classes >= 2, width >= 1, num_samples >= 2".into(),
            ));
        }
        if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
            return Err(TrainError::Config(
                "train_fraction must be in (0, 1)".into(),
            ));
        }
        if cfg.min_seq_len == 0 || cfg.min_seq_len > cfg.max_seq_len {
            return Err(TrainError::Config(
                "need 1 <= min_seq_len <= max_seq_len".into(),
            ));
        }
        let noise =
            Normal::new(0.0, cfg.noise).map_err(|e| TrainError::Config(format!("noise: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let centres: Vec<Vec<f64>> = (0..cfg.num_classes)
            .map(|_| {
                let v: Vec<f64> = (0..cfg.width)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x * cfg.separation / norm).collect()
            })
            .collect();

        let mut data = Vec::with_capacity(cfg.num_samples * cfg.width);
        let mut labels = Vec::with_capacity(cfg.num_samples);
        let mut seq_lens = Vec::with_capacity(cfg.num_samples);
        for i in 0..cfg.num_samples {
            let y = i % cfg.num_classes;
            data.extend(centres[y].iter().map(|c| c + noise.sample(&mut rng)));
            labels.push(y);
            seq_lens.push(rng.random_range(cfg.min_seq_len..=cfg.max_seq_len));
        }
        let all = Split {
            features: Matrix {
                rows: cfg.num_samples,
                cols: cfg.width,
                data,
            },
            labels,
            seq_lens,
        };
        let n_train = ((cfg.num_samples as f64 * cfg.train_fraction).round() as usize)
            .clamp(1, cfg.num_samples - 1);
        let train_rows: Vec<usize> = (0..n_train).collect();
        let test_rows: Vec<usize> = (n_train..cfg.num_samples).collect();
        Ok(Self {
            num_classes: cfg.num_classes,
            train: all.subset(&train_rows),
            test: all.subset(&test_rows),
        })
    }
}
