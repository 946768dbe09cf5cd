//! Synthetic structural-equation datasets with ground-truth labeling
//! rules evaluated on the noise-free skeleton.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{AttrTransform, Dataset, DatasetMeta, RelationConstraint, Split};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Range `X₄` is clamped to before exponentiation in the nonlinear SEM.
pub const NONLINEAR_X4_CLAMP: (f64, f64) = (-6.0, 6.0);

/// One node: `value = f(parent values, noise)`.
#[derive(Debug, Clone)]
pub struct StructuralEquation {
    pub name: String,
    /// Indices of earlier nodes, in the order `f` receives them.
    pub parents: Vec<usize>,
    pub f: fn(&[f64], f64) -> f64,
}

impl StructuralEquation {
    fn new(name: &str, parents: &[usize], f: fn(&[f64], f64) -> f64) -> Self {
        Self {
            name: name.into(),
            parents: parents.to_vec(),
            f,
        }
    }

    pub fn is_root(&self) -> bool {
        self.parents.is_empty()
    }
}

/// Gaussian exogenous noise; `std` is a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelRule {
    /// Label 1 when `sin(v) > threshold` for at least `min_count` skeleton values.
    SinCount { threshold: f64, min_count: usize },
}

impl LabelRule {
    pub fn label(&self, skeleton: &[f64]) -> u8 {
        match *self {
            LabelRule::SinCount {
                threshold,
                min_count,
            } => {
                let hits = skeleton.iter().filter(|v| v.sin() > threshold).count();
                u8::from(hits >= min_count)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SemSpec {
    pub name: String,
    pub equations: Vec<StructuralEquation>,
    pub noise: Vec<NoiseParams>,
    pub label_rule: LabelRule,
    pub constraints: Vec<RelationConstraint>,
    pub notes: Vec<String>,
}

/// Observed values and their noise-free skeleton for one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SemSample {
    pub values: Vec<f64>,
    pub skeleton: Vec<f64>,
    pub label: u8,
}

const NOISE_NOTE: &str = "N(mean, s) noise parameters are read as standard deviations";

impl SemSpec {
    pub fn toy() -> Self {
        let eqs = vec![
            StructuralEquation::new("X1", &[], |_, u| u),
            StructuralEquation::new("X2", &[], |_, u| u),
            StructuralEquation::new("X3", &[0, 1], |p, u| 2.0 * p[0] - p[1] + u),
            StructuralEquation::new("X4", &[2], |p, u| -2.0 * p[0] + u),
            StructuralEquation::new("X5", &[2], |p, u| p[0].sin() + u),
        ];
        let noise = vec![NoiseParams { mean: 0.0, std: 0.5 }; 5];
        Self {
            name: "toy".into(),
            equations: eqs,
            noise,
            label_rule: LabelRule::SinCount {
                threshold: 0.5,
                min_count: 3,
            },
            constraints: vec![RelationConstraint::new(
                2,
                3,
                -1,
                "if X3 decreases/increases, X4 increases/decreases",
            )
            .expect("valid constraint")],
            notes: vec![NOISE_NOTE.into()],
        }
    }

    pub fn nonlinear() -> Self {
        let (lo, hi) = NONLINEAR_X4_CLAMP;
        let eqs = vec![
            StructuralEquation::new("X1", &[], |_, u| u),
            StructuralEquation::new("X2", &[0], |p, u| p[0] * p[0] + u),
            StructuralEquation::new("X3", &[0], |p, u| (-2.0 * p[0]).sin() + u),
            StructuralEquation::new("X4", &[], |_, u| u),
            StructuralEquation::new("X5", &[3], |p, u| {
                let (lo, hi) = NONLINEAR_X4_CLAMP;
                (1.5 * p[0].clamp(lo, hi)).exp() + 2.0 + u
            }),
        ];
        let noise = vec![
            NoiseParams { mean: 2.0, std: 0.5 },
            NoiseParams { mean: 0.0, std: 0.25 },
            NoiseParams { mean: 0.0, std: 1.0 },
            NoiseParams { mean: 1.0, std: 1.0 },
            NoiseParams { mean: 0.0, std: 1.0 },
        ];
        Self {
            name: "nonlinear".into(),
            equations: eqs,
            noise,
            label_rule: LabelRule::SinCount {
                threshold: 0.0,
                min_count: 5,
            },
            constraints: vec![
                RelationConstraint::new(0, 1, 1, "if |X1| increases/decreases, X2 increases/decreases")
                    .expect("valid constraint")
                    .with_transform_a(AttrTransform::Square),
                RelationConstraint::new(3, 4, 1, "if X4 increases/decreases, X5 increases/decreases")
                    .expect("valid constraint"),
            ],
            notes: vec![
                NOISE_NOTE.into(),
                format!("X4 clamped to [{lo}, {hi}] before exponentiation"),
            ],
        }
    }

    pub fn num_attributes(&self) -> usize {
        self.equations.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.equations.iter().map(|e| e.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise.len() != self.equations.len() {
            return Err(Error::Schema("one noise distribution per node required".into()));
        }
        for (j, e) in self.equations.iter().enumerate() {
            if e.parents.iter().any(|&p| p >= j) {
                return Err(Error::Schema(format!(
                    "node {} is not in topological order",
                    e.name
                )));
            }
        }
        if let Some(n) = self.noise.iter().find(|n| !(n.std > 0.0)) {
            return Err(Error::Schema(format!("noise std must be positive, got {}", n.std)));
        }
        Ok(())
    }

    /// Evaluates the equations for one draw of exogenous noise. The
    /// skeleton keeps root draws and drops the additive noise of every
    /// non-root node.
    pub fn evaluate(&self, noise: &[f64]) -> SemSample {
        let l = self.num_attributes();
        let mut values = vec![0.0; l];
        let mut skeleton = vec![0.0; l];
        let mut pv = Vec::new();
        for (j, e) in self.equations.iter().enumerate() {
            pv.clear();
            pv.extend(e.parents.iter().map(|&p| values[p]));
            values[j] = (e.f)(&pv, noise[j]);
            pv.clear();
            pv.extend(e.parents.iter().map(|&p| skeleton[p]));
            let u = if e.is_root() { noise[j] } else { 0.0 };
            skeleton[j] = (e.f)(&pv, u);
        }
        let label = self.label_rule.label(&skeleton);
        SemSample {
            values,
            skeleton,
            label,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> SemSample {
        let noise: Vec<f64> = self
            .noise
            .iter()
            .map(|n| {
                Normal::new(n.mean, n.std)
                    .expect("validated std")
                    .sample(rng)
            })
            .collect();
        self.evaluate(&noise)
    }

    /// `n` draws with an 8:1:1 split, all from one seeded stream.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut rng = rng_from_seed(seed);
        let l = self.num_attributes();
        let mut raw = Vec::with_capacity(n * l);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let s = self.sample(&mut rng);
            raw.extend(s.values);
            labels.push(s.label);
        }
        let split = Split::ratio_8_1_1(n, &mut rng);
        Dataset::from_raw(
            self.feature_names(),
            raw,
            labels,
            split,
            self.constraints.clone(),
            DatasetMeta {
                source: format!("synthetic:{}", self.name),
                seed: Some(seed),
                notes: self.notes.clone(),
            },
        )
    }
}

pub fn generate_toy(n: usize, seed: u64) -> Result<Dataset> {
    SemSpec::toy().generate(n, seed)
}

pub fn generate_nonlinear(n: usize, seed: u64) -> Result<Dataset> {
    SemSpec::nonlinear().generate(n, seed)
}
