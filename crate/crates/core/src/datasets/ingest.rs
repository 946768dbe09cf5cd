use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttrTransform, Dataset, DatasetMeta, RelationConstraint, Split};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Relationship constraint declared by column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub a: String,
    pub b: String,
    pub sign: i8,
    #[serde(default)]
    pub transform_a: AttrTransform,
    #[serde(default)]
    pub description: String,
}

impl ConstraintSpec {
    /// Index-based constraint for the given feature order.
    pub fn resolve(&self, feature_names: &[String]) -> Result<RelationConstraint> {
        let a = feature_names.iter().position(|f| *f == self.a);
        let b = feature_names.iter().position(|f| *f == self.b);
        match (a, b) {
            (Some(a), Some(b)) => {
                Ok(RelationConstraint::new(a, b, self.sign, self.description.clone())?.with_transform_a(self.transform_a))
            }
            _ => Err(Error::Schema(format!(
                "constraint ({}, {}) names a non-feature column",
                self.a, self.b
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitPolicy {
    Holdout,
    LeaveOneOut,
}

/// Column layout of a CSV file. Rows with a missing cell in any used
/// column, or a zero in a `zero_as_missing` column, are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    #[serde(default)]
    pub zero_as_missing: Vec<String>,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
    #[serde(default = "default_split")]
    pub split: SplitPolicy,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
}

fn default_missing_tokens() -> Vec<String> {
    ["", "NA", "NaN", "nan", "?"].map(String::from).to_vec()
}

fn default_split() -> SplitPolicy {
    SplitPolicy::Holdout
}

impl CsvSchema {
    /// Pima Indians diabetes: seven attributes, zero-coded missing values,
    /// leave-one-out evaluation and the blood-pressure/BMI relationship.
    pub fn pima() -> Self {
        let cols = [
            "Pregnancies",
            "Glucose",
            "BloodPressure",
            "SkinThickness",
            "Insulin",
            "BMI",
            "Age",
        ];
        Self {
            feature_columns: cols.map(String::from).to_vec(),
            label_column: "Outcome".into(),
            zero_as_missing: cols[..6].iter().map(|s| s.to_string()).collect(),
            missing_tokens: default_missing_tokens(),
            split: SplitPolicy::LeaveOneOut,
            constraints: vec![ConstraintSpec {
                a: "BloodPressure".into(),
                b: "BMI".into(),
                sign: 1,
                transform_a: AttrTransform::Identity,
                description: "blood pressure and BMI move together".into(),
            }],
        }
    }
}

fn parse_label(cell: &str) -> Option<u8> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "1.0" | "true" | "yes" | "positive" | "tested_positive" => Some(1),
        "0" | "0.0" | "false" | "no" | "negative" | "tested_negative" => Some(0),
        _ => None,
    }
}

/// Reads a comma-separated file with a header row.
pub fn ingest_csv(path: &Path, schema: &CsvSchema, seed: u64) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in {header:?}")))
    };
    let feature_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let label_idx = col(&schema.label_column)?;
    for z in &schema.zero_as_missing {
        if !schema.feature_columns.contains(z) {
            return Err(Error::Schema(format!("zero-as-missing column `{z}` is not a feature")));
        }
    }
    let zero_missing: Vec<bool> = schema
        .feature_columns
        .iter()
        .map(|c| schema.zero_as_missing.contains(c))
        .collect();
    let is_missing = |cell: &str| schema.missing_tokens.iter().any(|t| t == cell);

    let mut raw = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0usize;
    'rows: for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(feature_idx.len());
        for (k, &ci) in feature_idx.iter().enumerate() {
            let cell = rec.get(ci).unwrap_or("");
            if is_missing(cell) {
                dropped += 1;
                continue 'rows;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: r + 1,
                column: schema.feature_columns[k].clone(),
                message: format!("`{cell}` is not numeric"),
            })?;
            if !v.is_finite() || (zero_missing[k] && v == 0.0) {
                dropped += 1;
                continue 'rows;
            }
            row.push(v);
        }
        let cell = rec.get(label_idx).unwrap_or("");
        if is_missing(cell) {
            dropped += 1;
            continue;
        }
        let y = parse_label(cell).ok_or_else(|| Error::Parse {
            row: r + 1,
            column: schema.label_column.clone(),
            message: format!("`{cell}` is not a binary label"),
        })?;
        raw.extend(row);
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let constraints = schema
        .constraints
        .iter()
        .map(|c| c.resolve(&schema.feature_columns))
        .collect::<Result<Vec<_>>>()?;
    let n = labels.len();
    let split = match schema.split {
        SplitPolicy::LeaveOneOut => Split::LeaveOneOut,
        SplitPolicy::Holdout => Split::ratio_8_1_1(n, &mut rng_from_seed(seed)),
    };
    Dataset::from_raw(
        schema.feature_columns.clone(),
        raw,
        labels,
        split,
        constraints,
        DatasetMeta {
            source: format!("csv:{}", path.display()),
            seed: Some(seed),
            notes: vec![format!("{dropped} rows dropped for missing values")],
        },
    )
}
