//! Declarative column descriptions and the schema file format.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::PrepError;

/// Reserved label for the missing-value category. Always the last index.
pub const MISSING_LABEL: &str = "missing";

/// Suffixes pairing the ergometry measurements taken at program start and
/// end; the end-of-program column carries the `generation-only` role.
pub const START_SUFFIX: &str = "_start";
pub const END_SUFFIX: &str = "_end";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributeKind {
    #[serde(rename = "continuous-binned")]
    ContinuousBinned,
    #[serde(rename = "categorical")]
    Categorical,
    #[serde(rename = "binary")]
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributeRole {
    #[serde(rename = "feature")]
    Feature,
    #[serde(rename = "generation-only")]
    GenerationOnly,
    #[serde(rename = "condition")]
    Condition,
    #[serde(rename = "label")]
    Label,
}

/// One column of the table.
///
/// In a raw schema a continuous-binned attribute may carry no categories
/// yet; preparation fills categories, edges, and per-bin midpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub midpoints: Option<Vec<f64>>,
    pub role: AttributeRole,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, kind: AttributeKind, role: AttributeRole) -> Self {
        Self {
            name: name.into(),
            kind,
            categories: Vec::new(),
            edges: None,
            midpoints: None,
            role,
        }
    }

    pub fn with_categories(mut self, categories: Vec<String>) -> Self {
        self.categories = categories;
        self
    }

    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }

    /// Index of the missing category, when this attribute may be absent.
    pub fn missing_index(&self) -> Option<usize> {
        match self.categories.last() {
            Some(last) if last == MISSING_LABEL => Some(self.categories.len() - 1),
            _ => None,
        }
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub version: String,
    pub attributes: Vec<AttributeSpec>,
}

/// A start/end ergometry measurement pair, by attribute index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErgometryPair {
    pub base: String,
    pub start: usize,
    pub end: usize,
}

impl Schema {
    pub fn new(attributes: Vec<AttributeSpec>) -> Self {
        Self {
            version: "1".to_string(),
            attributes,
        }
    }

    pub fn load(path: &Path) -> Result<Self, PrepError> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<(), PrepError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Structural checks that hold for raw and encoded schemas alike.
    pub fn validate(&self) -> Result<(), PrepError> {
        let mut seen = std::collections::HashSet::new();
        for attr in &self.attributes {
            if !seen.insert(attr.name.as_str()) {
                return Err(PrepError::schema(&attr.name, "duplicate attribute name"));
            }
            if let Some(edges) = &attr.edges {
                if edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(PrepError::schema(
                        &attr.name,
                        "bin edges must be strictly increasing",
                    ));
                }
            }
            if let Some(pos) = attr.categories.iter().position(|c| c == MISSING_LABEL) {
                if pos != attr.categories.len() - 1 {
                    return Err(PrepError::schema(
                        &attr.name,
                        "missing category must be the last index",
                    ));
                }
            }
        }
        let conditions: Vec<_> = self
            .attributes
            .iter()
            .filter(|a| a.role == AttributeRole::Condition)
            .collect();
        if conditions.len() != 1 {
            return Err(PrepError::Contract(format!(
                "schema must declare exactly one condition attribute, found {}",
                conditions.len()
            )));
        }
        if conditions[0].kind != AttributeKind::Binary {
            return Err(PrepError::schema(
                &conditions[0].name,
                "condition attribute must be binary",
            ));
        }
        Ok(())
    }

    /// Additional checks for a fully encoded schema backing a [`super::Dataset`].
    pub fn validate_encoded(&self) -> Result<(), PrepError> {
        self.validate()?;
        for attr in &self.attributes {
            if attr.categories.is_empty() {
                return Err(PrepError::schema(&attr.name, "no categories"));
            }
            if attr.kind == AttributeKind::ContinuousBinned {
                let edges = attr
                    .edges
                    .as_ref()
                    .ok_or_else(|| PrepError::schema(&attr.name, "binned attribute without edges"))?;
                let value_bins = edges.len() + 1;
                let expected = value_bins + usize::from(attr.missing_index().is_some());
                if attr.categories.len() != expected {
                    return Err(PrepError::schema(
                        &attr.name,
                        format!(
                            "{} categories but {} edges imply {}",
                            attr.categories.len(),
                            edges.len(),
                            expected
                        ),
                    ));
                }
                match &attr.midpoints {
                    Some(m) if m.len() == value_bins => {}
                    _ => {
                        return Err(PrepError::schema(
                            &attr.name,
                            "binned attribute needs one midpoint per value bin",
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn attribute(&self, name: &str) -> Option<(usize, &AttributeSpec)> {
        self.attributes
            .iter()
            .enumerate()
            .find(|(_, a)| a.name == name)
    }

    /// Index (into `attributes`) of the condition column.
    pub fn condition_index(&self) -> usize {
        self.attributes
            .iter()
            .position(|a| a.role == AttributeRole::Condition)
            .expect("validated schema has a condition attribute")
    }

    /// Attribute indices the model encodes and reconstructs: everything
    /// except the condition (and any auxiliary label columns).
    pub fn model_attributes(&self) -> Vec<usize> {
        self.attributes
            .iter()
            .enumerate()
            .filter(|(_, a)| {
                matches!(a.role, AttributeRole::Feature | AttributeRole::GenerationOnly)
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Attribute indices classifiers may use: features only, never the
    /// end-of-program generation variables.
    pub fn classifier_attributes(&self) -> Vec<usize> {
        self.attributes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.role == AttributeRole::Feature)
            .map(|(i, _)| i)
            .collect()
    }

    /// Start/end ergometry pairs: a generation-only `X_end` column paired
    /// with its `X_start` counterpart.
    pub fn ergometry_pairs(&self) -> Vec<ErgometryPair> {
        let mut pairs = Vec::new();
        for (end_idx, attr) in self.attributes.iter().enumerate() {
            if attr.role != AttributeRole::GenerationOnly {
                continue;
            }
            let Some(base) = attr.name.strip_suffix(END_SUFFIX) else {
                continue;
            };
            let start_name = format!("{base}{START_SUFFIX}");
            if let Some((start_idx, _)) = self.attribute(&start_name) {
                pairs.push(ErgometryPair {
                    base: base.to_string(),
                    start: start_idx,
                    end: end_idx,
                });
            }
        }
        pairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn risk_attr() -> AttributeSpec {
        AttributeSpec::new("risk", AttributeKind::Binary, AttributeRole::Condition)
            .with_categories(vec!["non-risk".into(), "risk".into()])
    }

    #[test]
    fn validate_requires_exactly_one_binary_condition() {
        let schema = Schema::new(vec![AttributeSpec::new(
            "a",
            AttributeKind::Categorical,
            AttributeRole::Feature,
        )]);
        assert!(schema.validate().is_err());

        let schema = Schema::new(vec![risk_attr()]);
        assert!(schema.validate().is_ok());
    }

    #[test]
    fn validate_rejects_misplaced_missing_category() {
        let mut attr = AttributeSpec::new("a", AttributeKind::Categorical, AttributeRole::Feature)
            .with_categories(vec![MISSING_LABEL.into(), "x".into()]);
        let schema = Schema::new(vec![attr.clone(), risk_attr()]);
        assert!(schema.validate().is_err());

        attr.categories = vec!["x".into(), MISSING_LABEL.into()];
        let schema = Schema::new(vec![attr, risk_attr()]);
        assert!(schema.validate().is_ok());
    }

    #[test]
    fn ergometry_pairs_match_start_end_roles() {
        let schema = Schema::new(vec![
            AttributeSpec::new("mets_start", AttributeKind::ContinuousBinned, AttributeRole::Feature),
            AttributeSpec::new(
                "mets_end",
                AttributeKind::ContinuousBinned,
                AttributeRole::GenerationOnly,
            ),
            AttributeSpec::new("age", AttributeKind::ContinuousBinned, AttributeRole::Feature),
            risk_attr(),
        ]);
        let pairs = schema.ergometry_pairs();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].base, "mets");
        assert_eq!(pairs[0].start, 0);
        assert_eq!(pairs[0].end, 1);
    }

    #[test]
    fn content_hash_tracks_content() {
        let a = Schema::new(vec![risk_attr()]);
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.attributes.push(AttributeSpec::new(
            "x",
            AttributeKind::Categorical,
            AttributeRole::Feature,
        ));
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
