use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rng::sha256_hex;

/// Per-feature mean and standard deviation in raw units, fitted on the
/// training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits population statistics over `rows`.
    pub fn fit<'a>(
        feature_names: &[String],
        rows: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<Self> {
        let l = feature_names.len();
        let mut n = 0usize;
        let mut sum = vec![0.0; l];
        let mut collected: Vec<&[f64]> = Vec::new();
        for r in rows {
            if r.len() != l {
                return Err(shape_err(format!("row of {} values for {l} features", r.len())));
            }
            n += 1;
            sum.iter_mut().zip(r).for_each(|(s, x)| *s += x);
            collected.push(r);
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; l];
        for r in &collected {
            for j in 0..l {
                let d = r[j] - mean[j];
                var[j] += d * d;
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        for j in 0..l {
            if !(std[j] > 1e-12 * (1.0 + mean[j].abs())) {
                return Err(Error::ConstantFeature(feature_names[j].clone()));
            }
        }
        Ok(Self {
            feature_names: feature_names.to_vec(),
            mean,
            std,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.len() {
            return Err(shape_err(format!(
                "vector of {} values for {} features",
                x.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn destandardize(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        Ok(z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    /// Short content hash identifying these statistics.
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("serializable");
        sha256_hex(&bytes)[..16].to_string()
    }
}
