//! Parameter and FLOPs accounting for transformer-style module catalogs.

mod convention;
mod spec;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use convention::{FlopsConvention, CONVENTION, CONVENTION_VERSION};
pub use spec::{exit_id, layer_id, Geometry, ModelSpec, ModuleDecl, ModuleKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CostError {
    #[error("invalid model spec: field `{field}` {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("model spec schema violation: {0}")]
    Schema(String),
    #[error("unknown module id `{0}`")]
    UnknownModule(String),
    #[error("module `{id}` ({kind:?}) cannot take input shape {shape}: {reason}")]
    Shape {
        id: String,
        kind: ModuleKind,
        shape: Shape,
        reason: String,
    },
    #[error("exit layer {layer} outside 1..={num_layers}")]
    ExitLayerOutOfRange { layer: u64, num_layers: u64 },
}

impl CostError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::InvalidSpec {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Input shape of one module invocation: `(n)` or `(n, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    D1(u64),
    D2(u64, u64),
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::D1(a) => write!(f, "({a})"),
            Shape::D2(a, b) => write!(f, "({a},{b})"),
        }
    }
}

/// Parameter totals, with exit heads reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub backbone: u64,
    pub exit_heads: u64,
}

impl ParamCount {
    pub fn total(&self) -> u64 {
        self.backbone + self.exit_heads
    }
}

/// Exact parameter count of every module in the catalog. No pooler.
pub fn count_params(spec: &ModelSpec) -> Result<ParamCount, CostError> {
    spec.validate()?;
    let d = spec.hidden_size;
    let mut count = ParamCount {
        backbone: 0,
        exit_heads: 0,
    };
    for m in &spec.modules {
        match m.kind {
            ModuleKind::Embedding => {
                let rows = spec.vocab_size + spec.max_positions + spec.num_segment_types;
                count.backbone += rows * d + 2 * d;
            }
            ModuleKind::TransformerLayer => {
                let ff = m.ffn_size.unwrap_or(spec.ffn_size);
                let attention = 4 * (d * d + d);
                let ffn = (d * ff + ff) + (ff * d + d);
                let norms = 2 * (2 * d);
                count.backbone += attention + ffn + norms;
            }
            ModuleKind::ExitClassifier => {
                let c = m.num_labels.unwrap_or(spec.num_labels);
                count.exit_heads += d * c + c;
            }
        }
    }
    Ok(count)
}

/// FLOPs of one module invocation on `shape`, under [`CONVENTION`].
pub fn module_flops(decl: &ModuleDecl, shape: Shape, spec: &ModelSpec) -> Result<u64, CostError> {
    let c = CONVENTION;
    let d = spec.hidden_size;
    let bad = |reason: String| CostError::Shape {
        id: decl.id.clone(),
        kind: decl.kind,
        shape,
        reason,
    };
    match (decl.kind, shape) {
        (ModuleKind::Embedding, Shape::D1(n)) => {
            if n == 0 {
                return Err(bad("sequence length must be positive".into()));
            }
            // word + position + segment: two adds per element
            Ok(2 * n * d * c.add + c.layer_norm(n, d))
        }
        (ModuleKind::TransformerLayer, Shape::D2(n, width)) => {
            if n == 0 {
                return Err(bad("sequence length must be positive".into()));
            }
            if width != d {
                return Err(bad(format!("hidden dimension {width} != {d}")));
            }
            let h = decl.num_heads.unwrap_or(spec.num_heads);
            let ff = decl.ffn_size.unwrap_or(spec.ffn_size);
            Ok(layer_flops(n, d, h, ff))
        }
        (ModuleKind::ExitClassifier, Shape::D1(width)) => {
            if width != d {
                return Err(bad(format!("hidden dimension {width} != {d}")));
            }
            let labels = decl.num_labels.unwrap_or(spec.num_labels);
            Ok(c.matmul(1, d, labels))
        }
        (kind, _) => Err(bad(format!(
            "expected {}",
            match kind {
                ModuleKind::Embedding => "(n)",
                ModuleKind::TransformerLayer => "(n,d)",
                ModuleKind::ExitClassifier => "(d)",
            }
        ))),
    }
}

/// Closed form for one post-LN transformer layer on `n` tokens.
///
/// `8nd² + 4n²d + 5hn² − hn` (attention) `+ 4n·d·d_ff + 8n·d_ff` (FFN)
/// `+ 2·n(8d+2)` (two LayerNorms) `+ 2nd` (residual adds).
pub fn layer_flops(n: u64, d: u64, h: u64, ffn: u64) -> u64 {
    let c = CONVENTION;
    let head_dim = d / h;
    let projections = 4 * c.matmul(n, d, d);
    let scores = h * n * n * c.dot(head_dim);
    let scaling = h * n * n * c.divide;
    let softmax = h * n * c.softmax_row(n);
    let context = h * n * head_dim * c.dot(n);
    let attention = projections + scores + scaling + softmax + context;

    let ffn_cost = c.matmul(n, d, ffn) + n * ffn * c.gelu + c.matmul(n, ffn, d);
    let norms = 2 * c.layer_norm(n, d);
    let residual = 2 * n * d * c.add;
    attention + ffn_cost + norms + residual
}

/// FLOPs of a full forward pass exiting at `exit_layer` (1-based).
pub fn forward_flops(spec: &ModelSpec, seq_len: u64, exit_layer: u64) -> Result<u64, CostError> {
    if exit_layer == 0 || exit_layer > spec.num_layers {
        return Err(CostError::ExitLayerOutOfRange {
            layer: exit_layer,
            num_layers: spec.num_layers,
        });
    }
    let d = spec.hidden_size;
    let emb = spec
        .embedding()
        .ok_or_else(|| CostError::UnknownModule("<embedding>".into()))?;
    let mut total = module_flops(emb, Shape::D1(seq_len), spec)?;
    for k in 1..=exit_layer {
        let id = layer_id(k);
        let decl = spec.module(&id).ok_or(CostError::UnknownModule(id))?;
        total += module_flops(decl, Shape::D2(seq_len, d), spec)?;
    }
    let id = exit_id(exit_layer);
    let head = spec.module(&id).ok_or(CostError::UnknownModule(id))?;
    Ok(total + module_flops(head, Shape::D1(d), spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bert(c: u64) -> ModelSpec {
        ModelSpec::standard("bert-base", Geometry::bert_base(c))
    }

    #[test]
    fn bert_base_backbone_params() {
        let p = count_params(&bert(2)).unwrap();
        assert_eq!(p.backbone, 108_891_648);
        assert_eq!(p.exit_heads, 12 * (768 * 2 + 2));
        let rel = (p.backbone as f64 - 109e6).abs() / 109e6;
        assert!(rel < 0.015);
    }

    #[test]
    fn unit_geometry_params() {
        let g = Geometry {
            hidden_size: 1,
            num_layers: 1,
            num_heads: 1,
            ffn_size: 1,
            vocab_size: 1,
            max_positions: 1,
            num_segment_types: 0,
            num_labels: 1,
        };
        let p = count_params(&ModelSpec::standard("unit", g)).unwrap();
        assert_eq!(p.backbone, 20);
        assert_eq!(p.exit_heads, 2);
    }

    #[test]
    fn params_ignore_catalog_order() {
        let spec = bert(3);
        let mut rev = spec.clone();
        rev.modules.reverse();
        assert_eq!(count_params(&spec).unwrap(), count_params(&rev).unwrap());
    }

    #[test]
    fn embedding_and_exit_flops() {
        let spec = bert(2);
        let emb = spec.module("emb").unwrap();
        assert_eq!(module_flops(emb, Shape::D1(10), &spec).unwrap(), 76_820);
        let exit = spec.module("exit_3").unwrap();
        assert_eq!(module_flops(exit, Shape::D1(768), &spec).unwrap(), 3_072);
    }

    #[test]
    fn small_layer_attention_part() {
        // n=2, d=4, h=1: 8·2·16 + 4·4·4 + 5·4 − 2
        let attn =
            layer_flops(2, 4, 1, 8) - (4 * 2 * 4 * 8 + 8 * 2 * 8) - 2 * 2 * (8 * 4 + 2) - 2 * 2 * 4;
        assert_eq!(attn, 338);
    }

    #[test]
    fn shape_errors() {
        let spec = bert(2);
        let layer = spec.module("layer_1").unwrap();
        assert!(matches!(
            module_flops(layer, Shape::D1(10), &spec),
            Err(CostError::Shape { .. })
        ));
        assert!(matches!(
            module_flops(layer, Shape::D2(10, 512), &spec),
            Err(CostError::Shape { .. })
        ));
        let exit = spec.module("exit_1").unwrap();
        assert!(module_flops(exit, Shape::D2(1, 768), &spec).is_err());
        let emb = spec.module("emb").unwrap();
        assert!(module_flops(emb, Shape::D2(10, 768), &spec).is_err());
    }

    #[test]
    fn forward_is_sum_of_modules() {
        let spec = bert(2);
        let expected = 76_820 + layer_flops(10, 768, 12, 3072) + 3_072;
        assert_eq!(forward_flops(&spec, 10, 1).unwrap(), expected);
    }

    #[test]
    fn forward_bert_base_sanity_band() {
        let f = forward_flops(&bert(2), 70, 12).unwrap();
        assert!((12e9..=15e9).contains(&(f as f64)), "{f}");
    }

    #[test]
    fn forward_monotone() {
        let spec = bert(2);
        for l in 1..12 {
            assert!(
                forward_flops(&spec, 20, l + 1).unwrap() > forward_flops(&spec, 20, l).unwrap()
            );
        }
        for n in 1..40 {
            assert!(forward_flops(&spec, n + 1, 6).unwrap() > forward_flops(&spec, n, 6).unwrap());
        }
    }

    #[test]
    fn forward_rejects_bad_exit_layer() {
        let spec = bert(2);
        assert!(matches!(
            forward_flops(&spec, 10, 0),
            Err(CostError::ExitLayerOutOfRange { .. })
        ));
        assert!(forward_flops(&spec, 10, 13).is_err());
    }
}
