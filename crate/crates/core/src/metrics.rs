//! Evaluation of counterfactual sets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::linalg;
use crate::datasets::RelationConstraint;
use crate::engine::CounterfactualResult;
use crate::error::{shape_err, Error, Result};

/// Changes smaller than this (raw units) count as no change.
pub const NO_CHANGE_EPSILON: f64 = 1e-6;
/// Ridge added to the covariance diagonal.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

fn non_empty(results: &[CounterfactualResult]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no counterfactuals to evaluate".into()));
    }
    Ok(())
}

pub fn validity(results: &[CounterfactualResult]) -> Result<f64> {
    non_empty(results)?;
    Ok(results.iter().filter(|r| r.is_valid()).count() as f64 / results.len() as f64)
}

/// `n / Σ 1/sᵢ`, zero when any score is zero.
pub fn harmonic_mean(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("harmonic mean of nothing".into()));
    }
    if scores.iter().any(|&s| s <= 0.0) {
        return Ok(0.0);
    }
    Ok(scores.len() as f64 / scores.iter().map(|s| 1.0 / s).sum::<f64>())
}

/// Whether one original/counterfactual pair respects a constraint.
pub fn preserves(c: &RelationConstraint, original: &[f64], cf: &[f64], epsilon: f64) -> bool {
    let t = c.transform_a;
    let mut da = t.apply(cf[c.attr_a]) - t.apply(original[c.attr_a]);
    let mut db = cf[c.attr_b] - original[c.attr_b];
    if da.abs() < epsilon {
        da = 0.0;
    }
    if db.abs() < epsilon {
        db = 0.0;
    }
    c.sign as f64 * da * db >= 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintScore {
    pub overall: f64,
    pub per_constraint: Vec<f64>,
}

pub fn constraint_score(
    results: &[CounterfactualResult],
    constraints: &[RelationConstraint],
    epsilon: f64,
) -> Result<ConstraintScore> {
    non_empty(results)?;
    if constraints.is_empty() {
        return Err(Error::EmptyInput("no constraints to score".into()));
    }
    let l = results[0].original.len();
    for c in constraints {
        c.validate(l)?;
    }
    let per_constraint: Vec<f64> = constraints
        .iter()
        .map(|c| {
            results
                .iter()
                .filter(|r| preserves(c, &r.original, &r.counterfactual, epsilon))
                .count() as f64
                / results.len() as f64
        })
        .collect();
    Ok(ConstraintScore {
        overall: harmonic_mean(&per_constraint)?,
        per_constraint,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Largest pairwise Euclidean distance (exact scan).
pub fn diameter(points: &[Vec<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.max(dist(&points[i], &points[j]));
        }
    }
    best
}

pub fn euclidean_normalized(results: &[CounterfactualResult], reference: &[Vec<f64>]) -> Result<f64> {
    non_empty(results)?;
    if reference.len() < 2 {
        return Err(Error::DegenerateData("diameter needs at least two reference points".into()));
    }
    let d = diameter(reference);
    if d <= 0.0 {
        return Err(Error::DegenerateData("reference points are all identical".into()));
    }
    let total: f64 = results.iter().map(|r| dist(&r.original, &r.counterfactual)).sum();
    Ok(total / results.len() as f64 / d)
}

/// Sample covariance (`n − 1` denominator) plus `ridge·I`.
pub fn covariance(reference: &[Vec<f64>], ridge: f64) -> Result<Vec<f64>> {
    let n = reference.len();
    if n < 2 {
        return Err(Error::DegenerateData("covariance needs at least two points".into()));
    }
    let l = reference[0].len();
    if reference.iter().any(|r| r.len() != l) {
        return Err(shape_err("reference rows differ in length"));
    }
    let mut mean = vec![0.0; l];
    for r in reference {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut cov = vec![0.0; l * l];
    for r in reference {
        for i in 0..l {
            let di = r[i] - mean[i];
            for j in 0..l {
                cov[i * l + j] += di * (r[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    for i in 0..l {
        cov[i * l + i] += ridge;
    }
    Ok(cov)
}

/// `√(dᵀ Σ⁻¹ d)` for a precomputed inverse.
pub fn mahalanobis(d: &[f64], inv: &[f64]) -> f64 {
    let l = d.len();
    let mut q = 0.0;
    for i in 0..l {
        for j in 0..l {
            q += d[i] * inv[i * l + j] * d[j];
        }
    }
    q.max(0.0).sqrt()
}

pub fn mahalanobis_with(results: &[CounterfactualResult], cov: &[f64]) -> Result<f64> {
    non_empty(results)?;
    let l = results[0].original.len();
    if cov.len() != l * l {
        return Err(shape_err("covariance does not match feature count"));
    }
    let inv = linalg::invert(cov, l)?;
    let total: f64 = results
        .iter()
        .map(|r| {
            let d: Vec<f64> = r.original.iter().zip(&r.counterfactual).map(|(a, b)| a - b).collect();
            mahalanobis(&d, &inv)
        })
        .sum();
    Ok(total / results.len() as f64)
}

pub fn mahalanobis_mean(results: &[CounterfactualResult], reference: &[Vec<f64>]) -> Result<f64> {
    non_empty(results)?;
    let l = results[0].original.len();
    if reference.len() <= l {
        return Err(Error::DegenerateData(format!(
            "covariance of {l} features needs more than {l} reference points"
        )));
    }
    mahalanobis_with(results, &covariance(reference, COVARIANCE_RIDGE)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method_name: String,
    pub validity: f64,
    pub constraint_score: f64,
    pub per_constraint: Vec<f64>,
    pub euclidean_mean: f64,
    pub mahalanobis_mean: f64,
    pub n_evaluated: usize,
}

impl MetricsReport {
    pub fn evaluate(
        method_name: &str,
        results: &[CounterfactualResult],
        constraints: &[RelationConstraint],
        reference: &[Vec<f64>],
    ) -> Result<Self> {
        let cs = constraint_score(results, constraints, NO_CHANGE_EPSILON)?;
        Ok(Self {
            method_name: method_name.into(),
            validity: validity(results)?,
            constraint_score: cs.overall,
            per_constraint: cs.per_constraint,
            euclidean_mean: euclidean_normalized(results, reference)?,
            mahalanobis_mean: mahalanobis_mean(results, reference)?,
            n_evaluated: results.len(),
        })
    }
}

/// Comparison table: one row per method, percentages for the fractions.
pub fn write_comparison_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "valid_pct", "const_pct", "euclidean_dist", "mahalanobis_dist", "n"])?;
    for r in reports {
        w.write_record([
            r.method_name.clone(),
            format!("{:.2}", 100.0 * r.validity),
            format!("{:.2}", 100.0 * r.constraint_score),
            format!("{:.4}", r.euclidean_mean),
            format!("{:.4}", r.mahalanobis_mean),
            r.n_evaluated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
