//! Per-query gradient searches in input space: Plain-CF and its
//! k-nearest-neighbour variant.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
use crate::classifier::{argmax_label, BlackBox, ScoreScale};
use crate::datasets::Standardizer;
use crate::engine::{hinge_rows, CounterfactualResult};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlainCfConfig {
    pub lambda: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub k: usize,
    pub knn_weight: f64,
    pub score_scale: ScoreScale,
}

impl Default for PlainCfConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            steps: 500,
            learning_rate: 0.05,
            beta: 0.1,
            k: 5,
            knn_weight: 0.5,
            score_scale: ScoreScale::default(),
        }
    }
}

impl PlainCfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.knn_weight >= 0.0) {
            return Err(Error::Config("lambda and knn weight must be non-negative".into()));
        }
        if self.steps == 0 || !(self.learning_rate > 0.0) || !(self.beta > 0.0) {
            return Err(Error::Config("steps, learning rate and beta must be positive".into()));
        }
        Ok(())
    }
}

/// Standardized training rows grouped by label, for neighbour lookups.
#[derive(Debug, Clone)]
pub struct KnnPool {
    n_features: usize,
    by_class: [Vec<f64>; 2],
}

impl KnnPool {
    pub fn new(rows: &Tensor, labels: &[u8]) -> Result<Self> {
        if rows.rows() != labels.len() {
            return Err(shape_err("one label per pool row required"));
        }
        let mut by_class = [Vec::new(), Vec::new()];
        for (r, &y) in labels.iter().enumerate() {
            by_class[y as usize].extend_from_slice(rows.row_slice(r));
        }
        Ok(Self {
            n_features: rows.cols(),
            by_class,
        })
    }

    pub fn class_count(&self, y: u8) -> usize {
        self.by_class[y as usize].len() / self.n_features.max(1)
    }

    /// Centroid and mean squared spread of the `k` nearest rows of class
    /// `y`, so that `mean_j ‖x − n_j‖² = ‖x − c‖² + spread`.
    fn neighbourhood(&self, x: &[f64], y: u8, k: usize) -> (Vec<f64>, f64) {
        let l = self.n_features;
        let pool = &self.by_class[y as usize];
        let mut d: Vec<(f64, usize)> = pool
            .chunks(l)
            .enumerate()
            .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum(), i))
            .collect();
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
        }
        let mut c = vec![0.0; l];
        for &(_, i) in &d {
            for (cj, v) in c.iter_mut().zip(&pool[i * l..(i + 1) * l]) {
                *cj += v / k as f64;
            }
        }
        let spread = d
            .iter()
            .map(|&(_, i)| {
                pool[i * l..(i + 1) * l]
                    .iter()
                    .zip(&c)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / k as f64;
        (c, spread)
    }
}

/// Per-row objective values and gradients at `xc`.
fn objective(
    bb: &dyn BlackBox,
    x: &Tensor,
    xc: &Tensor,
    y_cf: &[u8],
    cfg: &PlainCfConfig,
    knn: Option<&KnnPool>,
) -> Result<(Vec<f64>, Vec<f64>, Vec<u8>)> {
    let (b, l) = (x.rows(), x.cols());
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let xcv = tape.leaf(&xc.clone().with_requires_grad(true));
    let scores = bb.scores(&mut tape, xcv, cfg.score_scale)?;
    let hinge = hinge_rows(&mut tape, scores, y_cf, cfg.beta)?;
    let class = tape.scale(hinge, cfg.lambda)?;
    let diff = tape.sub(xv, xcv)?;
    let sq = tape.square(diff)?;
    let dist = tape.sum_rows(sq)?;
    let mut rows = tape.add(class, dist)?;
    let mut spreads = vec![0.0; b];
    if let Some(pool) = knn.filter(|_| cfg.knn_weight > 0.0) {
        let mut cent = Vec::with_capacity(b * l);
        for r in 0..b {
            let (c, s) = pool.neighbourhood(xc.row_slice(r), y_cf[r], cfg.k);
            cent.extend(c);
            spreads[r] = cfg.knn_weight * s;
        }
        let cv = tape.constant(Tensor::matrix(b, l, cent)?);
        let dc = tape.sub(xcv, cv)?;
        let sq = tape.square(dc)?;
        let s = tape.sum_rows(sq)?;
        let s = tape.scale(s, cfg.knn_weight)?;
        rows = tape.add(rows, s)?;
    }
    let total = tape.sum(rows)?;
    let grads = tape.backward(total)?;
    let g = grads.get(xcv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; b * l]);
    let losses = tape
        .value(rows)
        .data()
        .iter()
        .zip(&spreads)
        .map(|(v, s)| v + s)
        .collect();
    let labels = (0..b).map(|r| argmax_label(tape.value(scores).row_slice(r))).collect();
    Ok((losses, g, labels))
}

/// Batched search; each row is optimized independently with its own Adam
/// moments and its own halve-on-increase learning rate.
pub fn plain_cf_batch(
    bb: &dyn BlackBox,
    standardizer: &Standardizer,
    x_raw: &Tensor,
    y_cf: &[u8],
    cfg: &PlainCfConfig,
    knn: Option<&KnnPool>,
) -> Result<Vec<CounterfactualResult>> {
    cfg.validate()?;
    let l = bb.n_features();
    if x_raw.shape().len() != 2 || x_raw.cols() != l {
        return Err(shape_err(format!("queries must have {l} columns")));
    }
    let b = x_raw.rows();
    if y_cf.len() != b {
        return Err(shape_err("one target label per query required"));
    }
    if let Some(pool) = knn {
        for &y in y_cf {
            if pool.class_count(y) < cfg.k.max(1) {
                return Err(Error::DegenerateData(format!(
                    "fewer than {} training rows of class {y}",
                    cfg.k
                )));
            }
        }
    }
    if b == 0 {
        return Ok(Vec::new());
    }
    let mut xs = Vec::with_capacity(b * l);
    for r in 0..b {
        xs.extend(standardizer.standardize(x_raw.row_slice(r))?);
    }
    let x = Tensor::matrix(b, l, xs)?;
    let original_labels = bb.predict(&x)?;

    let mut xc = x.clone();
    let mut m = vec![0.0; b * l];
    let mut v = vec![0.0; b * l];
    let mut t = vec![0i32; b];
    let mut lr = vec![cfg.learning_rate; b];
    let mut best: Vec<Option<(f64, Vec<f64>)>> = vec![None; b];
    let (b1, b2, eps) = (DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON);

    let (mut loss, mut grad, mut labels) = objective(bb, &x, &xc, y_cf, cfg, knn)?;
    for r in 0..b {
        if labels[r] == y_cf[r] {
            best[r] = Some((loss[r], xc.row_slice(r).to_vec()));
        }
    }
    for _ in 0..cfg.steps {
        let mut cand = xc.clone();
        let (mut cm, mut cv) = (m.clone(), v.clone());
        for r in 0..b {
            let step = t[r] + 1;
            let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
            for j in r * l..(r + 1) * l {
                cm[j] = b1 * m[j] + (1.0 - b1) * grad[j];
                cv[j] = b2 * v[j] + (1.0 - b2) * grad[j] * grad[j];
                cand.data_mut()[j] -= lr[r] * (cm[j] / c1) / ((cv[j] / c2).sqrt() + eps);
            }
        }
        let (closs, cgrad, clabels) = objective(bb, &x, &cand, y_cf, cfg, knn)?;
        for r in 0..b {
            if closs[r] <= loss[r] {
                let span = r * l..(r + 1) * l;
                xc.data_mut()[span.clone()].copy_from_slice(&cand.data()[span.clone()]);
                m[span.clone()].copy_from_slice(&cm[span.clone()]);
                v[span.clone()].copy_from_slice(&cv[span.clone()]);
                grad[span.clone()].copy_from_slice(&cgrad[span]);
                t[r] += 1;
                loss[r] = closs[r];
                labels[r] = clabels[r];
                if labels[r] == y_cf[r] && best[r].as_ref().is_none_or(|(bl, _)| loss[r] <= *bl) {
                    best[r] = Some((loss[r], xc.row_slice(r).to_vec()));
                }
            } else {
                lr[r] *= 0.5;
            }
        }
    }

    let mut out = Vec::with_capacity(b);
    for r in 0..b {
        let (row, label) = match &best[r] {
            Some((_, row)) => (row.clone(), y_cf[r]),
            None => (xc.row_slice(r).to_vec(), labels[r]),
        };
        let shift = row
            .iter()
            .zip(x.row_slice(r))
            .map(|(a, c)| (a - c).powi(2))
            .sum::<f64>()
            .sqrt();
        out.push(CounterfactualResult {
            original: x_raw.row_slice(r).to_vec(),
            counterfactual: standardizer.destandardize(&row)?,
            original_label: original_labels[r],
            target_label: y_cf[r],
            predicted_cf_label: label,
            delta_norm: shift,
            latent: Vec::new(),
            latent_cf: Vec::new(),
        });
    }
    Ok(out)
}

/// Minimizes `λ·hinge + ‖x − x_cf‖²` for one raw-unit query.
pub fn plain_cf(
    bb: &dyn BlackBox,
    standardizer: &Standardizer,
    x_raw: &[f64],
    y_cf: u8,
    cfg: &PlainCfConfig,
) -> Result<CounterfactualResult> {
    let x = Tensor::row(x_raw.to_vec())?;
    Ok(plain_cf_batch(bb, standardizer, &x, &[y_cf], cfg, None)?.remove(0))
}

/// Plain-CF plus a pull toward the `k` nearest training rows of the
/// target class.
pub fn plain_cf_k(
    bb: &dyn BlackBox,
    standardizer: &Standardizer,
    x_raw: &[f64],
    y_cf: u8,
    pool: &KnnPool,
    cfg: &PlainCfConfig,
) -> Result<CounterfactualResult> {
    let x = Tensor::row(x_raw.to_vec())?;
    Ok(plain_cf_batch(bb, standardizer, &x, &[y_cf], cfg, Some(pool))?.remove(0))
}
