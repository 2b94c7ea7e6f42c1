//! Raw tables and feature derivation.
//!
//! Raw cells are strings straight from CSV; an empty cell means missing.
//! Derivation adds BMI when weight/height columns are present, converts
//! ISO-8601 date columns to integer weeks since the `program_start`
//! column, computes the per-ergometry-variable improvement flags, and
//! attaches the condition label.

use std::path::Path;

use super::schema::{AttributeKind, AttributeRole, AttributeSpec, Schema};
use super::PrepError;

/// Relative improvement at or above this fraction flips a variable's flag.
pub const IMPROVEMENT_THRESHOLD: f64 = 0.15;

/// Column names the BMI derivation looks for.
pub const WEIGHT_COLUMN: &str = "weight_kg";
pub const HEIGHT_COLUMN: &str = "height_m";
/// Anchor column for week conversion of date-valued columns.
pub const PROGRAM_START_COLUMN: &str = "program_start";

/// String-valued table as read from a raw CSV file.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub columns: Vec<String>,
    /// `rows[r][c]`: None encodes an empty (missing) cell.
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawTable {
    pub fn read_csv(path: &Path) -> Result<Self, PrepError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let columns: Vec<String> = reader
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            rows.push(
                record
                    .iter()
                    .map(|cell| {
                        let cell = cell.trim();
                        if cell.is_empty() {
                            None
                        } else {
                            Some(cell.to_string())
                        }
                    })
                    .collect(),
            );
        }
        Ok(Self { columns, rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), PrepError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(&self.columns)?;
        for row in &self.rows {
            writer.write_record(row.iter().map(|c| c.as_deref().unwrap_or("")))?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn numeric(&self, row: usize, col: usize) -> Result<Option<f64>, PrepError> {
        match &self.rows[row][col] {
            None => Ok(None),
            Some(text) => text.parse::<f64>().map(Some).map_err(|_| {
                PrepError::schema(
                    &self.columns[col],
                    format!("'{}' is not numeric (row {})", text, row),
                )
            }),
        }
    }
}

/// Result of [`derive_features`].
#[derive(Debug, Clone)]
pub struct DeriveOutcome {
    pub table: RawTable,
    pub schema: Schema,
    /// Condition labels per surviving row: 1 = risk, 0 = non-risk.
    pub labels: Vec<u8>,
    /// Per surviving row, one flag per ergometry pair; None = indeterminate.
    pub flags: Vec<Vec<Option<bool>>>,
    /// Rows dropped because every ergometry pair was indeterminate.
    pub rejected: usize,
}

/// Augments a raw table with derived features and the condition label.
///
/// Records with no determinable ergometry pair (start and end present,
/// start positive, for at least one variable) are rejected, mirroring the
/// record-selection rule. The label is risk exactly when no available
/// variable improved by [`IMPROVEMENT_THRESHOLD`] or more.
pub fn derive_features(raw: &RawTable, raw_schema: &Schema) -> Result<DeriveOutcome, PrepError> {
    check_header(raw, raw_schema)?;
    let mut table = raw.clone();
    let mut schema = raw_schema.clone();

    add_bmi(&mut table, &mut schema)?;
    convert_dates_to_weeks(&mut table, &mut schema)?;

    let pairs = schema.ergometry_pairs();
    let pair_cols: Vec<(usize, usize)> = pairs
        .iter()
        .map(|p| {
            let start = table
                .column_index(&schema.attributes[p.start].name)
                .expect("schema column present");
            let end = table
                .column_index(&schema.attributes[p.end].name)
                .expect("schema column present");
            (start, end)
        })
        .collect();

    let existing_condition = schema
        .attributes
        .iter()
        .position(|a| a.role == AttributeRole::Condition);
    if pairs.is_empty() && existing_condition.is_none() {
        return Err(PrepError::Contract(
            "no ergometry start/end pairs and no condition column: cannot derive labels".into(),
        ));
    }

    let mut labels = Vec::new();
    let mut flags = Vec::new();
    let mut kept_rows = Vec::new();
    let mut rejected = 0;
    for row in 0..table.n_rows() {
        let mut row_flags = Vec::with_capacity(pair_cols.len());
        for &(start_col, end_col) in &pair_cols {
            let start = table.numeric(row, start_col)?;
            let end = table.numeric(row, end_col)?;
            row_flags.push(improvement_flag(start, end));
        }
        let label = if pair_cols.is_empty() {
            // fall back to the existing condition column
            let cond_attr = &schema.attributes[existing_condition.expect("checked above")];
            let col = table
                .column_index(&cond_attr.name)
                .expect("schema column present");
            match &table.rows[row][col] {
                Some(text) if text == "risk" => 1,
                Some(text) if text == "non-risk" => 0,
                other => {
                    return Err(PrepError::schema(
                        &cond_attr.name,
                        format!("unknown condition value {:?} (row {})", other, row),
                    ))
                }
            }
        } else {
            if row_flags.iter().all(|f| f.is_none()) {
                rejected += 1;
                continue;
            }
            u8::from(!row_flags.iter().any(|f| *f == Some(true)))
        };
        labels.push(label);
        flags.push(row_flags);
        kept_rows.push(table.rows[row].clone());
    }
    table.rows = kept_rows;

    attach_condition_column(&mut table, &mut schema, &labels, existing_condition)?;

    Ok(DeriveOutcome {
        table,
        schema,
        labels,
        flags,
        rejected,
    })
}

/// Flag for one ergometry variable: `(end - start) / start >= 0.15`, or
/// None when either value is missing or the start is not positive.
pub fn improvement_flag(start: Option<f64>, end: Option<f64>) -> Option<bool> {
    match (start, end) {
        (Some(s), Some(e)) if s > 0.0 => Some((e - s) / s >= IMPROVEMENT_THRESHOLD),
        _ => None,
    }
}

fn check_header(raw: &RawTable, schema: &Schema) -> Result<(), PrepError> {
    for attr in &schema.attributes {
        // the condition column may be derived later
        if attr.role == AttributeRole::Condition {
            continue;
        }
        if raw.column_index(&attr.name).is_none() {
            return Err(PrepError::schema(&attr.name, "column missing from data file"));
        }
    }
    for col in &raw.columns {
        if schema.attribute(col).is_none() {
            return Err(PrepError::schema(col, "column not declared in schema"));
        }
    }
    Ok(())
}

fn add_bmi(table: &mut RawTable, schema: &mut Schema) -> Result<(), PrepError> {
    let (Some(w), Some(h)) = (
        table.column_index(WEIGHT_COLUMN),
        table.column_index(HEIGHT_COLUMN),
    ) else {
        return Ok(());
    };
    for row in 0..table.n_rows() {
        let weight = table.numeric(row, w)?;
        let height = table.numeric(row, h)?;
        let bmi = match (weight, height) {
            (Some(wk), Some(hm)) if hm > 0.0 => Some(format!("{}", wk / (hm * hm))),
            _ => None,
        };
        table.rows[row].push(bmi);
    }
    table.columns.push("bmi".to_string());
    schema.attributes.push(AttributeSpec::new(
        "bmi",
        AttributeKind::ContinuousBinned,
        AttributeRole::Feature,
    ));
    Ok(())
}

fn convert_dates_to_weeks(table: &mut RawTable, schema: &mut Schema) -> Result<(), PrepError> {
    let date_cols: Vec<usize> = (0..table.columns.len())
        .filter(|&c| {
            let mut any = false;
            let all = table.rows.iter().all(|row| match &row[c] {
                None => true,
                Some(text) => {
                    let ok = parse_iso_date(text).is_some();
                    any |= ok;
                    ok
                }
            });
            all && any
        })
        .collect();
    if date_cols.is_empty() {
        return Ok(());
    }
    let anchor = table
        .column_index(PROGRAM_START_COLUMN)
        .filter(|c| date_cols.contains(c))
        .ok_or_else(|| {
            PrepError::schema(
                PROGRAM_START_COLUMN,
                "date columns present but no program_start anchor column",
            )
        })?;
    for row in 0..table.n_rows() {
        let Some(anchor_days) = table.rows[row][anchor]
            .as_deref()
            .and_then(parse_iso_date)
        else {
            // no anchor for this record: its event dates become missing
            for &c in &date_cols {
                table.rows[row][c] = None;
            }
            continue;
        };
        for &c in &date_cols {
            if c == anchor {
                continue;
            }
            table.rows[row][c] = table.rows[row][c]
                .as_deref()
                .and_then(parse_iso_date)
                .map(|days| format!("{}", (days - anchor_days).div_euclid(7)));
        }
    }
    // the anchor itself is week zero everywhere; drop it
    table.columns.remove(anchor);
    for row in &mut table.rows {
        row.remove(anchor);
    }
    schema.attributes.retain(|a| a.name != PROGRAM_START_COLUMN);
    Ok(())
}

/// Days since 1970-01-01 for a `YYYY-MM-DD` string.
fn parse_iso_date(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
        return None;
    }
    let year: i64 = text[0..4].parse().ok()?;
    let month: u32 = text[5..7].parse().ok()?;
    let day: u32 = text[8..10].parse().ok()?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    // civil-to-days conversion (proleptic Gregorian)
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = (y - era * 400) as i64;
    let mp = ((month + 9) % 12) as i64;
    let doy = (153 * mp + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    Some(era * 146097 + doe - 719468)
}

fn attach_condition_column(
    table: &mut RawTable,
    schema: &mut Schema,
    labels: &[u8],
    existing: Option<usize>,
) -> Result<(), PrepError> {
    let categories = vec!["non-risk".to_string(), "risk".to_string()];
    match existing {
        Some(attr_idx) => {
            let name = schema.attributes[attr_idx].name.clone();
            schema.attributes[attr_idx].categories = categories;
            let col = table
                .column_index(&name)
                .ok_or_else(|| PrepError::schema(&name, "condition column missing from data"))?;
            for (row, &label) in labels.iter().enumerate() {
                table.rows[row][col] = Some(label_text(label).to_string());
            }
        }
        None => {
            for (row, &label) in labels.iter().enumerate() {
                table.rows[row].push(Some(label_text(label).to_string()));
            }
            table.columns.push("risk".to_string());
            schema.attributes.push(
                AttributeSpec::new("risk", AttributeKind::Binary, AttributeRole::Condition)
                    .with_categories(categories),
            );
        }
    }
    Ok(())
}

pub(crate) fn label_text(label: u8) -> &'static str {
    if label == 1 {
        "risk"
    } else {
        "non-risk"
    }
}
