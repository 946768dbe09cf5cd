//! Run manifest and plot-ready CSV exports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::classifier::AccuracyReport;
use crate::datasets::{RelationConstraint, Standardizer};
use crate::engine::CounterfactualResult;
use crate::error::{Error, Result};
use crate::rng::sha256_hex;

pub const EXCLUDED_BASELINES_NOTE: &str = "CF-VAE and EB-VAE are not reimplemented; \
comparison tables list Ours, Plain-CF and Plain-CF_K only";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub sha256: String,
}

impl ArtifactRecord {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            file: path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: sha256_hex(&std::fs::read(path)?),
        })
    }
}

/// Provenance for everything written into one output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub tool: String,
    pub dataset: String,
    pub config_hash: String,
    pub root_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: BTreeMap<String, ArtifactRecord>,
    pub stages: BTreeSet<String>,
    pub classifier_accuracy: Option<AccuracyReport>,
    pub vae_final_h: Option<f64>,
    pub vae_converged: Option<bool>,
    pub vae_test_mse: Option<f64>,
    pub frozen_upstream: Option<bool>,
    pub methods: Vec<String>,
    pub excluded_baselines: String,
    pub warnings: Vec<String>,
}

impl RunManifest {
    /// Reads `path` if present, otherwise starts empty.
    pub fn open(path: &Path) -> Result<Self> {
        let mut m: Self = if path.exists() {
            serde_json::from_str(&std::fs::read_to_string(path)?)?
        } else {
            Self::default()
        };
        m.tool = format!("latentcf {}", env!("CARGO_PKG_VERSION"));
        m.excluded_baselines = EXCLUDED_BASELINES_NOTE.into();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn record(&mut self, name: &str, path: &Path) -> Result<()> {
        self.artifacts.insert(name.into(), ArtifactRecord::of(path)?);
        Ok(())
    }

    /// Replaces earlier warnings from the same stage.
    pub fn set_warnings(&mut self, stage: &str, warnings: Vec<String>) {
        let prefix = format!("{stage}: ");
        self.warnings.retain(|w| !w.starts_with(&prefix));
        self.warnings.extend(warnings.into_iter().map(|w| format!("{prefix}{w}")));
    }
}

pub(crate) fn write_serialized<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Original and counterfactual values of one constraint pair, one row per
/// result.
pub fn write_arrow_csv(path: &Path, results: &[CounterfactualResult], c: &RelationConstraint) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x_orig_a", "x_orig_b", "x_cf_a", "x_cf_b", "label", "target"])?;
    for r in results {
        w.write_record([
            r.original[c.attr_a].to_string(),
            r.original[c.attr_b].to_string(),
            r.counterfactual[c.attr_a].to_string(),
            r.counterfactual[c.attr_b].to_string(),
            r.original_label.to_string(),
            r.target_label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and the two leading principal axes of `rows`. Each axis is signed
/// so that its largest-magnitude entry is positive.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<(Vec<f64>, [Vec<f64>; 2])> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::DegenerateData("projection needs at least two rows".into()));
    }
    let l = rows[0].len();
    if l < 2 {
        return Err(Error::DegenerateData("projection needs at least two features".into()));
    }
    let mut mean = vec![0.0; l];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut cov = DMatrix::<f64>::zeros(l, l);
    for r in rows {
        for i in 0..l {
            for j in 0..l {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |k: usize| {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    Ok((mean, [axis(0), axis(1)]))
}

/// 2-D projection of standardized originals and every method's
/// counterfactuals onto the originals' principal axes.
pub(crate) fn write_pca_csv(
    path: &Path,
    standardizer: &Standardizer,
    methods: &[(&str, &[CounterfactualResult])],
) -> Result<()> {
    let Some((_, first)) = methods.first() else {
        return Err(Error::EmptyInput("no results to project".into()));
    };
    let originals: Vec<Vec<f64>> = first
        .iter()
        .map(|r| standardizer.standardize(&r.original))
        .collect::<Result<_>>()?;
    let (mean, axes) = pca_2d(&originals)?;
    let project = |x: &[f64]| -> [f64; 2] {
        let c: Vec<f64> = x.iter().zip(&mean).map(|(a, m)| a - m).collect();
        [0, 1].map(|k| c.iter().zip(&axes[k]).map(|(a, b)| a * b).sum())
    };
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["source", "index", "pc1", "pc2", "label"])?;
    for (i, (x, r)) in originals.iter().zip(*first).enumerate() {
        let [p1, p2] = project(x);
        w.write_record(["original".into(), i.to_string(), p1.to_string(), p2.to_string(), r.original_label.to_string()])?;
    }
    for (name, results) in methods {
        for (i, r) in results.iter().enumerate() {
            let [p1, p2] = project(&standardizer.standardize(&r.counterfactual)?);
            w.write_record([
                name.to_string(),
                i.to_string(),
                p1.to_string(),
                p2.to_string(),
                r.predicted_cf_label.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
