use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::CostError;

/// What a catalog entry computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModuleKind {
    Embedding,
    TransformerLayer,
    ExitClassifier,
}

/// One entry of a model's module catalog.
///
/// Dimensions not given here are inherited from the owning [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleDecl {
    pub id: String,
    pub kind: ModuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_heads: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffn_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_labels: Option<u64>,
}

impl ModuleDecl {
    pub fn new(id: impl Into<String>, kind: ModuleKind) -> Self {
        Self {
            id: id.into(),
            kind,
            num_heads: None,
            ffn_size: None,
            num_labels: None,
        }
    }
}

/// Declarative description of an encoder-only multi-exit model.
///
/// This is the only input the parameter and FLOPs counters look at. The JSON
/// form uses exactly these field names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_name: String,
    pub hidden_size: u64,
    pub num_layers: u64,
    pub num_heads: u64,
    pub ffn_size: u64,
    pub vocab_size: u64,
    pub max_positions: u64,
    pub num_segment_types: u64,
    pub num_labels: u64,
    pub modules: Vec<ModuleDecl>,
}

/// Hyperparameters of a spec without its catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub hidden_size: u64,
    pub num_layers: u64,
    pub num_heads: u64,
    pub ffn_size: u64,
    pub vocab_size: u64,
    pub max_positions: u64,
    pub num_segment_types: u64,
    pub num_labels: u64,
}

impl Geometry {
    /// BERT-base: 12 layers, width 768, 12 heads, FFN 3072, 30522 tokens.
    pub const fn bert_base(num_labels: u64) -> Self {
        Self {
            hidden_size: 768,
            num_layers: 12,
            num_heads: 12,
            ffn_size: 3072,
            vocab_size: 30522,
            max_positions: 512,
            num_segment_types: 2,
            num_labels,
        }
    }
}

impl ModelSpec {
    /// A spec with the standard catalog `emb`, `layer_1..=layer_L` and
    /// `exit_1..=exit_L`.
    pub fn standard(model_name: impl Into<String>, g: Geometry) -> Self {
        let mut modules = vec![ModuleDecl::new("emb", ModuleKind::Embedding)];
        modules.extend(
            (1..=g.num_layers).map(|k| ModuleDecl::new(layer_id(k), ModuleKind::TransformerLayer)),
        );
        modules.extend(
            (1..=g.num_layers).map(|k| ModuleDecl::new(exit_id(k), ModuleKind::ExitClassifier)),
        );
        Self {
            model_name: model_name.into(),
            hidden_size: g.hidden_size,
            num_layers: g.num_layers,
            num_heads: g.num_heads,
            ffn_size: g.ffn_size,
            vocab_size: g.vocab_size,
            max_positions: g.max_positions,
            num_segment_types: g.num_segment_types,
            num_labels: g.num_labels,
            modules,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CostError> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| CostError::Schema(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ModelSpec serializes");
        s.push('\n');
        s
    }

    /// Checks every structural invariant, naming the offending field.
    pub fn validate(&self) -> Result<(), CostError> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_size", self.ffn_size),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
            ("num_labels", self.num_labels),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(CostError::invalid(field, "must be positive"));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(CostError::invalid(
                "num_heads",
                format!(
                    "{} does not divide hidden_size {}",
                    self.num_heads, self.hidden_size
                ),
            ));
        }

        let mut seen = HashSet::new();
        let mut embeddings = 0;
        let mut layers = HashSet::new();
        for m in &self.modules {
            if !seen.insert(m.id.as_str()) {
                return Err(CostError::invalid(
                    "modules",
                    format!("duplicate module id `{}`", m.id),
                ));
            }
            let field = |name: &str| format!("modules[{}].{name}", m.id);
            for (name, v) in [
                ("num_heads", m.num_heads),
                ("ffn_size", m.ffn_size),
                ("num_labels", m.num_labels),
            ] {
                if v == Some(0) {
                    return Err(CostError::invalid(field(name), "must be positive"));
                }
            }
            match m.kind {
                ModuleKind::Embedding => embeddings += 1,
                ModuleKind::TransformerLayer => {
                    let k = self.indexed(&m.id, "layer_")?;
                    layers.insert(k);
                    let h = m.num_heads.unwrap_or(self.num_heads);
                    if !self.hidden_size.is_multiple_of(h) {
                        return Err(CostError::invalid(
                            field("num_heads"),
                            format!("{h} does not divide hidden_size {}", self.hidden_size),
                        ));
                    }
                }
                ModuleKind::ExitClassifier => {
                    self.indexed(&m.id, "exit_")?;
                }
            }
        }
        if embeddings != 1 {
            return Err(CostError::invalid(
                "modules",
                format!("expected exactly one Embedding module, found {embeddings}"),
            ));
        }
        if layers.len() as u64 != self.num_layers {
            return Err(CostError::invalid(
                "modules",
                format!(
                    "expected layer_1..layer_{} to be declared, found {} layers",
                    self.num_layers,
                    layers.len()
                ),
            ));
        }
        Ok(())
    }

    fn indexed(&self, id: &str, prefix: &str) -> Result<u64, CostError> {
        let k = id
            .strip_prefix(prefix)
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| {
                CostError::invalid(
                    "modules",
                    format!("module id `{id}` must look like `{prefix}<k>`"),
                )
            })?;
        if k == 0 || k > self.num_layers {
            return Err(CostError::invalid(
                "modules",
                format!("`{id}` is outside 1..={}", self.num_layers),
            ));
        }
        Ok(k)
    }

    pub fn module(&self, id: &str) -> Option<&ModuleDecl> {
        self.modules.iter().find(|m| m.id == id)
    }

    pub fn embedding(&self) -> Option<&ModuleDecl> {
        self.modules
            .iter()
            .find(|m| m.kind == ModuleKind::Embedding)
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            hidden_size: self.hidden_size,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_size: self.ffn_size,
            vocab_size: self.vocab_size,
            max_positions: self.max_positions,
            num_segment_types: self.num_segment_types,
            num_labels: self.num_labels,
        }
    }
}

pub fn layer_id(k: u64) -> String {
    format!("layer_{k}")
}

pub fn exit_id(k: u64) -> String {
    format!("exit_{k}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_must_divide_hidden() {
        let mut g = Geometry::bert_base(2);
        g.num_heads = 7;
        let err = ModelSpec::standard("m", g).validate().unwrap_err();
        assert!(err.to_string().contains("num_heads"), "{err}");
    }

    #[test]
    fn zero_dimension_names_field() {
        let mut g = Geometry::bert_base(2);
        g.ffn_size = 0;
        let err = ModelSpec::standard("m", g).validate().unwrap_err();
        assert!(err.to_string().contains("ffn_size"), "{err}");
    }

    #[test]
    fn catalog_invariants() {
        let mut spec = ModelSpec::standard("m", Geometry::bert_base(2));
        spec.modules
            .push(ModuleDecl::new("emb2", ModuleKind::Embedding));
        assert!(spec.validate().is_err());

        let mut spec = ModelSpec::standard("m", Geometry::bert_base(2));
        spec.modules
            .push(ModuleDecl::new("exit_13", ModuleKind::ExitClassifier));
        assert!(spec.validate().is_err());

        let mut spec = ModelSpec::standard("m", Geometry::bert_base(2));
        spec.modules.retain(|m| m.id != "layer_5");
        assert!(spec.validate().is_err());

        let mut spec = ModelSpec::standard("m", Geometry::bert_base(2));
        spec.modules
            .push(ModuleDecl::new("exit_1", ModuleKind::ExitClassifier));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let spec = ModelSpec::standard("bert-base", Geometry::bert_base(2));
        assert_eq!(ModelSpec::from_json(&spec.to_json()).unwrap(), spec);
    }

    #[test]
    fn json_schema_violation() {
        assert!(matches!(
            ModelSpec::from_json("{\"model_name\": 3}"),
            Err(CostError::Schema(_))
        ));
    }
}
