//! Efficiency benchmarking for early-exit models.
//!
//! * [`cost`]: exact parameter counts and FLOPs from a declarative [`cost::ModelSpec`].
//! * [`trace`]: the per-sample module-trace submission format.
//! * [`metrics`]: accuracy, F1, Pearson and Spearman.
//! * [`scoring`]: baseline curves, the ELUE score, Pareto frontiers and tracks.
//! * [`exitsim`]: entropy and patience exit policies and threshold sweeps.
//! * [`trainer`]: a small multi-exit network trained with manual backprop.
//! * [`evaluate`]: the end-to-end submission pipeline shared by the CLI and the service.

pub mod cost;
pub mod evaluate;
pub mod exitsim;
pub mod metrics;
pub mod scoring;
pub mod trace;
pub mod trainer;
