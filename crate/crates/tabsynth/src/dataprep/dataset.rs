//! Encoded datasets: category indices plus a condition label per record.

use std::path::Path;
use std::sync::Arc;

use super::raw::label_text;
use super::schema::{AttributeRole, Schema};
use super::PrepError;

/// Fully categorical dataset. `rows[r][j]` is the category index of model
/// attribute `j` (schema order, condition excluded); the condition lives
/// in `labels` (1 = risk).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Arc<Schema>,
    pub rows: Vec<Vec<usize>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(schema: Arc<Schema>, rows: Vec<Vec<usize>>, labels: Vec<u8>) -> Result<Self, PrepError> {
        let ds = Self {
            schema,
            rows,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Cardinalities of the model attributes, in column order.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.schema
            .model_attributes()
            .iter()
            .map(|&a| self.schema.attributes[a].cardinality())
            .collect()
    }

    pub fn validate(&self) -> Result<(), PrepError> {
        self.schema.validate_encoded()?;
        let model = self.schema.model_attributes();
        if self.rows.len() != self.labels.len() {
            return Err(PrepError::Contract(format!(
                "{} rows but {} labels",
                self.rows.len(),
                self.labels.len()
            )));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != model.len() {
                return Err(PrepError::Contract(format!(
                    "row {} has {} columns, schema expects {}",
                    r,
                    row.len(),
                    model.len()
                )));
            }
            for (j, &idx) in row.iter().enumerate() {
                let attr = &self.schema.attributes[model[j]];
                if idx >= attr.cardinality() {
                    return Err(PrepError::schema(
                        &attr.name,
                        format!("index {} out of range ({} categories)", idx, attr.cardinality()),
                    ));
                }
            }
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(PrepError::Contract("labels must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let risk = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - risk, risk)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: Arc::clone(&self.schema),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Row indices belonging to the given class.
    pub fn class_indices(&self, label: u8) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Appends another dataset over the same schema.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset, PrepError> {
        if self.schema.content_hash() != other.schema.content_hash() {
            return Err(PrepError::Contract(
                "cannot concatenate datasets with different schemas".into(),
            ));
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Dataset {
            schema: Arc::clone(&self.schema),
            rows,
            labels,
        })
    }

    /// Writes the dataset as a CSV of category labels; the missing
    /// category becomes an empty cell, the condition column its label.
    pub fn write_csv(&self, path: &Path) -> Result<(), PrepError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(self.schema.attributes.iter().map(|a| a.name.as_str()))?;
        let model = self.schema.model_attributes();
        let condition = self.schema.condition_index();
        for (r, row) in self.rows.iter().enumerate() {
            let mut record: Vec<&str> = Vec::with_capacity(self.schema.attributes.len());
            let mut j = 0;
            for (a, attr) in self.schema.attributes.iter().enumerate() {
                if a == condition {
                    record.push(label_text(self.labels[r]));
                    continue;
                }
                debug_assert_eq!(model[j], a);
                let idx = row[j];
                j += 1;
                if attr.missing_index() == Some(idx) {
                    record.push("");
                } else {
                    record.push(&attr.categories[idx]);
                }
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a CSV of category labels back into an encoded dataset.
    pub fn read_csv(schema: Arc<Schema>, path: &Path) -> Result<Self, PrepError> {
        schema.validate_encoded()?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
        let expected: Vec<&str> = schema.attributes.iter().map(|a| a.name.as_str()).collect();
        if header != expected {
            let offending = header
                .iter()
                .zip(&expected)
                .find(|(h, e)| h.as_str() != **e)
                .map(|(h, _)| h.clone())
                .unwrap_or_else(|| "<column count>".to_string());
            return Err(PrepError::schema(offending, "header does not match schema"));
        }
        let condition = schema.condition_index();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for record in reader.records() {
            let record = record?;
            let mut row = Vec::with_capacity(schema.attributes.len() - 1);
            for (a, attr) in schema.attributes.iter().enumerate() {
                let cell = record.get(a).unwrap_or("").trim();
                if a == condition {
                    labels.push(match cell {
                        "risk" => 1,
                        "non-risk" => 0,
                        other => {
                            return Err(PrepError::schema(
                                &attr.name,
                                format!("unknown condition label '{}'", other),
                            ))
                        }
                    });
                    continue;
                }
                if attr.role == AttributeRole::Label {
                    continue;
                }
                let idx = if cell.is_empty() {
                    attr.missing_index().ok_or_else(|| {
                        PrepError::schema(&attr.name, "missing value but no missing category")
                    })?
                } else {
                    attr.category_index(cell).ok_or_else(|| {
                        PrepError::schema(&attr.name, format!("unknown category '{}'", cell))
                    })?
                };
                row.push(idx);
            }
            rows.push(row);
        }
        Dataset::new(schema, rows, labels)
    }
}
