//! Tabular datasets: synthetic structural-equation generators, CSV
//! ingestion, standardization, splits and declared relationship
//! constraints.

mod ingest;
mod sem;
mod standardize;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};

pub use ingest::{ingest_csv, ConstraintSpec, CsvSchema, SplitPolicy};
pub use sem::{
    generate_nonlinear, generate_toy, LabelRule, NoiseParams, SemSample, SemSpec,
    StructuralEquation, NONLINEAR_X4_CLAMP,
};
pub use standardize::Standardizer;

/// How an attribute enters a relationship check before differencing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrTransform {
    #[default]
    Identity,
    Square,
}

impl AttrTransform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            AttrTransform::Identity => v,
            AttrTransform::Square => v * v,
        }
    }
}

/// Declared monotone relationship: `sign = +1` means the two attributes
/// should move together, `-1` in opposite directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationConstraint {
    pub attr_a: usize,
    pub attr_b: usize,
    pub sign: i8,
    pub description: String,
    #[serde(default)]
    pub transform_a: AttrTransform,
}

impl RelationConstraint {
    pub fn new(attr_a: usize, attr_b: usize, sign: i8, description: impl Into<String>) -> Result<Self> {
        let c = Self {
            attr_a,
            attr_b,
            sign,
            description: description.into(),
            transform_a: AttrTransform::Identity,
        };
        c.validate(usize::MAX)?;
        Ok(c)
    }

    pub fn with_transform_a(mut self, t: AttrTransform) -> Self {
        self.transform_a = t;
        self
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.attr_a == self.attr_b {
            return Err(Error::Schema(format!(
                "constraint relates attribute {} to itself",
                self.attr_a
            )));
        }
        if self.sign != 1 && self.sign != -1 {
            return Err(Error::Schema(format!("constraint sign must be ±1, got {}", self.sign)));
        }
        if self.attr_a >= n_features || self.attr_b >= n_features {
            return Err(Error::Schema(format!(
                "constraint ({}, {}) out of range for {n_features} features",
                self.attr_a, self.attr_b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Split {
    Holdout {
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
    LeaveOneOut,
}

impl Split {
    /// Shuffled 8:1:1 split; `|test| = |val| = ⌊n/10⌋`.
    pub fn ratio_8_1_1<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let tenth = n / 10;
        let mut test = idx[..tenth].to_vec();
        let mut val = idx[tenth..2 * tenth].to_vec();
        let mut train = idx[2 * tenth..].to_vec();
        test.sort_unstable();
        val.sort_unstable();
        train.sort_unstable();
        Split::Holdout { train, val, test }
    }

    pub fn is_leave_one_out(&self) -> bool {
        matches!(self, Split::LeaveOneOut)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if let Split::Holdout { train, val, test } = self {
            let mut seen = vec![false; n];
            for &i in train.iter().chain(val).chain(test) {
                if i >= n || seen[i] {
                    return Err(Error::Schema(format!("split index {i} out of range or repeated")));
                }
                seen[i] = true;
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::Schema("split does not cover every row".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Raw and standardized features with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    raw: Vec<f64>,
    standardized: Vec<f64>,
    labels: Vec<u8>,
    split: Split,
    standardizer: Standardizer,
    constraints: Vec<RelationConstraint>,
    meta: DatasetMeta,
}

/// JSON sidecar written next to an exported dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub feature_names: Vec<String>,
    pub n_rows: usize,
    pub split: Split,
    pub standardizer: Standardizer,
    pub constraints: Vec<RelationConstraint>,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Builds a dataset from raw rows; the standardizer is fitted on the
    /// training split (all rows under leave-one-out).
    pub fn from_raw(
        feature_names: Vec<String>,
        raw: Vec<f64>,
        labels: Vec<u8>,
        split: Split,
        constraints: Vec<RelationConstraint>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let l = feature_names.len();
        if l == 0 {
            return Err(Error::Schema("no feature columns".into()));
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if raw.len() != labels.len() * l {
            return Err(shape_err(format!(
                "{} raw values for {} rows × {l} features",
                raw.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Schema(format!("label {bad} is not binary")));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite feature value".into()));
        }
        split.validate(labels.len())?;
        for c in &constraints {
            c.validate(l)?;
        }
        let n = labels.len();
        let fit_rows: Vec<usize> = match &split {
            Split::Holdout { train, .. } => train.clone(),
            Split::LeaveOneOut => (0..n).collect(),
        };
        let standardizer =
            Standardizer::fit(&feature_names, fit_rows.iter().map(|&i| &raw[i * l..(i + 1) * l]))?;
        let mut standardized = Vec::with_capacity(raw.len());
        for row in raw.chunks(l) {
            standardized.extend(standardizer.standardize(row)?);
        }
        Ok(Self {
            feature_names,
            raw,
            standardized,
            labels,
            split,
            standardizer,
            constraints,
            meta,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn constraints(&self) -> &[RelationConstraint] {
        &self.constraints
    }

    pub fn with_constraints(mut self, constraints: Vec<RelationConstraint>) -> Result<Self> {
        for c in &constraints {
            c.validate(self.n_features())?;
        }
        self.constraints = constraints;
        Ok(self)
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn raw_row(&self, i: usize) -> &[f64] {
        let l = self.n_features();
        &self.raw[i * l..(i + 1) * l]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let l = self.n_features();
        &self.standardized[i * l..(i + 1) * l]
    }

    pub fn train_indices(&self) -> Vec<usize> {
        match &self.split {
            Split::Holdout { train, .. } => train.clone(),
            Split::LeaveOneOut => (0..self.n_rows()).collect(),
        }
    }

    pub fn val_indices(&self) -> Vec<usize> {
        match &self.split {
            Split::Holdout { val, .. } => val.clone(),
            Split::LeaveOneOut => Vec::new(),
        }
    }

    pub fn test_indices(&self) -> Vec<usize> {
        match &self.split {
            Split::Holdout { test, .. } => test.clone(),
            Split::LeaveOneOut => Vec::new(),
        }
    }

    /// Standardized `B × L` matrix of the given rows.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let l = self.n_features();
        if indices.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let mut d = Vec::with_capacity(indices.len() * l);
        for &i in indices {
            d.extend_from_slice(self.row(i));
        }
        Tensor::matrix(indices.len(), l, d)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// One leave-one-out fold: `held_out` becomes the test set, a seeded
    /// tenth of the rest is kept for validation, and the standardizer is
    /// refitted on the remaining training rows.
    pub fn fold<R: Rng>(&self, held_out: usize, rng: &mut R) -> Result<Dataset> {
        let n = self.n_rows();
        if held_out >= n {
            return Err(shape_err(format!("fold index {held_out} out of range")));
        }
        let mut rest: Vec<usize> = (0..n).filter(|&i| i != held_out).collect();
        rest.shuffle(rng);
        let n_val = (rest.len() / 10).max(1);
        let mut val = rest[..n_val].to_vec();
        let mut train = rest[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        let mut meta = self.meta.clone();
        meta.notes.push(format!("leave-one-out fold holding out row {held_out}"));
        Dataset::from_raw(
            self.feature_names.clone(),
            self.raw.clone(),
            self.labels.clone(),
            Split::Holdout {
                train,
                val,
                test: vec![held_out],
            },
            self.constraints.clone(),
            meta,
        )
    }

    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            feature_names: self.feature_names.clone(),
            n_rows: self.n_rows(),
            split: self.split.clone(),
            standardizer: self.standardizer.clone(),
            constraints: self.constraints.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Writes `<features…>,label` rows in raw units plus the JSON sidecar.
    pub fn export(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        let mut header = self.feature_names.clone();
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.raw_row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        fs::write(json_path, serde_json::to_string_pretty(&self.sidecar())?)?;
        Ok(())
    }

    /// Reads back a dataset written by [`Dataset::export`].
    pub fn load(csv_path: &Path, json_path: &Path) -> Result<Self> {
        let sidecar: DatasetSidecar = serde_json::from_str(&fs::read_to_string(json_path)?)?;
        let mut rdr = csv::Reader::from_path(csv_path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let l = sidecar.feature_names.len();
        if header.len() != l + 1 || header[..l] != sidecar.feature_names[..] || header[l] != "label" {
            return Err(Error::Schema(format!(
                "header {header:?} does not match sidecar features {:?}",
                sidecar.feature_names
            )));
        }
        let mut raw = Vec::new();
        let mut labels = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (j, cell) in rec.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    row: r + 1,
                    column: header[j].clone(),
                    message: format!("`{cell}` is not numeric"),
                })?;
                if j < l {
                    raw.push(v);
                } else if v == 0.0 || v == 1.0 {
                    labels.push(v as u8);
                } else {
                    return Err(Error::Parse {
                        row: r + 1,
                        column: header[j].clone(),
                        message: format!("label `{cell}` is not 0 or 1"),
                    });
                }
            }
        }
        let ds = Dataset::from_raw(
            sidecar.feature_names,
            raw,
            labels,
            sidecar.split,
            sidecar.constraints,
            sidecar.meta,
        )?;
        if ds.n_rows() != sidecar.n_rows {
            return Err(Error::Schema(format!(
                "sidecar records {} rows, CSV holds {}",
                sidecar.n_rows,
                ds.n_rows()
            )));
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn split_sizes_follow_ratio() {
        let mut rng = rng_from_seed(3);
        let Split::Holdout { train, val, test } = Split::ratio_8_1_1(20000, &mut rng) else {
            unreachable!()
        };
        assert_eq!((train.len(), val.len(), test.len()), (16000, 2000, 2000));
        let Split::Holdout { train, val, test } = Split::ratio_8_1_1(37, &mut rng) else {
            unreachable!()
        };
        assert_eq!((train.len(), val.len(), test.len()), (31, 3, 3));
    }

    #[test]
    fn constraint_validation() {
        assert!(RelationConstraint::new(1, 1, 1, "").is_err());
        assert!(RelationConstraint::new(0, 1, 0, "").is_err());
        let c = RelationConstraint::new(0, 4, -1, "").unwrap();
        assert!(c.validate(3).is_err());
        assert!(c.validate(5).is_ok());
    }

    #[test]
    fn fold_holds_out_one_row() {
        let raw: Vec<f64> = (0..40).map(|v| (v as f64).sin() * 3.0 + v as f64).collect();
        let labels = (0..20).map(|i| (i % 2) as u8).collect();
        let ds = Dataset::from_raw(
            vec!["a".into(), "b".into()],
            raw,
            labels,
            Split::LeaveOneOut,
            vec![],
            DatasetMeta::default(),
        )
        .unwrap();
        let f = ds.fold(7, &mut rng_from_seed(1)).unwrap();
        assert_eq!(f.test_indices(), vec![7]);
        assert_eq!(f.train_indices().len() + f.val_indices().len(), 19);
        assert!(!f.train_indices().contains(&7));
    }
}
