//! The frozen black-box model whose decisions counterfactuals must flip.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Tape, Tensor, Var};
use crate::datasets::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::nn::Mlp;
use crate::rng::rng_from_seed;

/// Any model that exposes class probabilities differentiable with respect
/// to its (standardized) input. Implementations record their weights as
/// constants so gradients reach the input only.
pub trait BlackBox: Send + Sync {
    fn n_features(&self) -> usize;

    fn n_classes(&self) -> usize {
        2
    }

    /// Row-wise log class probabilities for `x` (`B × n_features`).
    fn log_probabilities(&self, tape: &mut Tape, x: Var) -> Result<Var>;

    fn probabilities(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let lp = self.log_probabilities(tape, x)?;
        tape.exp(lp)
    }

    /// Class scores on the requested scale.
    fn scores(&self, tape: &mut Tape, x: Var, scale: ScoreScale) -> Result<Var> {
        match scale {
            ScoreScale::Probability => self.probabilities(tape, x),
            ScoreScale::LogProbability => self.log_probabilities(tape, x),
        }
    }

    fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = self.probabilities(&mut tape, xv)?;
        Ok(tape.value(p).clone())
    }

    /// Argmax label per row, ties resolved toward label 0.
    fn predict(&self, x: &Tensor) -> Result<Vec<u8>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows()).map(|r| argmax_label(p.row_slice(r))).collect())
    }
}

/// Scale on which class scores enter hinge losses. Log-probability
/// differences equal logit differences and do not saturate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    Probability,
    #[default]
    LogProbability,
}

pub fn argmax_label(probs: &[f64]) -> u8 {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best as u8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Learning rate is multiplied by this after `plateau_epochs` epochs
    /// without a new best monitor accuracy. 1 disables the decay.
    pub plateau_factor: f64,
    pub plateau_epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            patience: 20,
            plateau_factor: 1.0,
            plateau_epochs: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub train: f64,
    pub val: Option<f64>,
    pub test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Two-layer ReLU network with a two-way softmax head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub mlp: Mlp,
    pub hidden_size: usize,
    pub standardizer_id: String,
    pub config: ClassifierConfig,
    pub accuracy: AccuracyReport,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

impl BlackBox for ClassifierModel {
    fn n_features(&self) -> usize {
        self.mlp.input_dim()
    }

    fn log_probabilities(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.n_features() {
            return Err(shape_err(format!(
                "classifier expects {} features, got {}",
                self.n_features(),
                tape.value(x).cols()
            )));
        }
        let vars = self.mlp.bind(tape, false);
        let logits = self.mlp.forward(tape, &vars, x)?;
        tape.log_softmax(logits)
    }

    fn probabilities(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let lp = self.log_probabilities(tape, x)?;
        tape.exp(lp)
    }
}

impl ClassifierModel {
    /// Model with every weight zero; predicts `[0.5, 0.5]` everywhere.
    pub fn zeros(n_features: usize, hidden_size: usize) -> Self {
        Self {
            mlp: Mlp::zeros(n_features, hidden_size, 2),
            hidden_size,
            standardizer_id: String::new(),
            config: ClassifierConfig {
                hidden_size,
                ..Default::default()
            },
            accuracy: AccuracyReport::default(),
            history: Vec::new(),
        }
    }

    pub fn accuracy_on(&self, data: &Dataset, indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("accuracy over no rows".into()));
        }
        let pred = self.predict(&data.batch(indices)?)?;
        let hits = pred
            .iter()
            .zip(indices)
            .filter(|(p, &i)| **p == data.labels()[i])
            .count();
        Ok(hits as f64 / indices.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn cross_entropy_step(
    mlp: &mut Mlp,
    opt: &mut Adam,
    x: &Tensor,
    y: &[u8],
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = mlp.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let logits = mlp.forward(&mut tape, &vars, xv)?;
    let logp = tape.log_softmax(logits)?;
    let idx: Vec<usize> = y.iter().map(|&v| v as usize).collect();
    let picked = tape.select_per_row(logp, &idx)?;
    let mean = tape.mean(picked)?;
    let loss = tape.scale(mean, -1.0)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Divergence(format!("classifier loss became {value}")));
    }
    let grads = tape.backward(loss)?;
    mlp.accumulate_grads(&grads, &vars);
    opt.step(&mut mlp.params_mut())?;
    Ok(value)
}

/// Cross-entropy training with Adam and early stopping on validation
/// accuracy; the best validation checkpoint is returned.
pub fn train_classifier(data: &Dataset, config: &ClassifierConfig) -> Result<ClassifierModel> {
    if config.batch_size == 0 || config.epochs == 0 || config.hidden_size == 0 {
        return Err(Error::Config("classifier batch size, epochs and hidden size must be positive".into()));
    }
    if !(config.plateau_factor > 0.0 && config.plateau_factor <= 1.0) || config.plateau_epochs == 0 {
        return Err(Error::Config("plateau factor must be in (0, 1] and plateau epochs positive".into()));
    }
    let train = data.train_indices();
    let labels = data.labels();
    let pos = train.iter().filter(|&&i| labels[i] == 1).count();
    if pos == 0 || pos == train.len() {
        return Err(Error::DegenerateData(
            "training split contains a single class".into(),
        ));
    }
    let val = data.val_indices();
    let monitor = if val.is_empty() { train.clone() } else { val.clone() };

    let mut rng = rng_from_seed(config.seed);
    let mut model = ClassifierModel {
        mlp: Mlp::new(data.n_features(), config.hidden_size, 2, &mut rng),
        hidden_size: config.hidden_size,
        standardizer_id: data.standardizer().id(),
        config: config.clone(),
        accuracy: AccuracyReport::default(),
        history: Vec::new(),
    };
    let mut opt = Adam::new(&model.mlp.params(), config.learning_rate);
    let mut best = (f64::NEG_INFINITY, model.mlp.clone());
    let mut since_best = 0;
    let mut order = train.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = data.batch(chunk)?;
            let y = data.labels_of(chunk);
            total += cross_entropy_step(&mut model.mlp, &mut opt, &x, &y)? * chunk.len() as f64;
        }
        let acc = model.accuracy_on(data, &monitor)?;
        model.history.push(EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            val_accuracy: acc,
        });
        if acc > best.0 {
            best = (acc, model.mlp.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
            if since_best % config.plateau_epochs == 0 {
                opt.set_learning_rate(opt.learning_rate() * config.plateau_factor);
            }
        }
    }
    model.mlp = best.1;
    let test = data.test_indices();
    model.accuracy = AccuracyReport {
        train: model.accuracy_on(data, &train)?,
        val: (!val.is_empty()).then(|| model.accuracy_on(data, &val)).transpose()?,
        test: (!test.is_empty()).then(|| model.accuracy_on(data, &test)).transpose()?,
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{DatasetMeta, Split};

    #[test]
    fn zero_model_is_uniform() {
        let m = ClassifierModel::zeros(3, 4);
        let p = m.predict_proba(&Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 5.0, 1.0, 0.0]).unwrap()).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
        assert_eq!(m.predict(&Tensor::matrix(1, 3, vec![1.0; 3]).unwrap()).unwrap(), vec![0]);
    }

    #[test]
    fn tie_break_toward_zero() {
        assert_eq!(argmax_label(&[0.7, 0.3]), 0);
        assert_eq!(argmax_label(&[0.5, 0.5]), 0);
        assert_eq!(argmax_label(&[0.2, 0.8]), 1);
    }

    #[test]
    fn wrong_width_is_shape_error() {
        let m = ClassifierModel::zeros(3, 4);
        let err = m.predict(&Tensor::matrix(1, 2, vec![0.0; 2]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn single_class_training_rejected() {
        let raw: Vec<f64> = (0..40).map(|v| v as f64 * 0.37 % 5.0 + v as f64).collect();
        let ds = Dataset::from_raw(
            vec!["a".into(), "b".into()],
            raw,
            vec![1; 20],
            Split::LeaveOneOut,
            vec![],
            DatasetMeta::default(),
        )
        .unwrap();
        let err = train_classifier(&ds, &ClassifierConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateData(_)));
    }

    fn blobs(n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        let mut raw = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = (i % 2) as u8;
            let c = if y == 1 { 3.0 } else { -3.0 };
            raw.push(c + rng.random_range(-1.0..1.0));
            raw.push(c + rng.random_range(-1.0..1.0));
            labels.push(y);
        }
        let split = Split::ratio_8_1_1(n, &mut rng);
        Dataset::from_raw(
            vec!["a".into(), "b".into()],
            raw,
            labels,
            split,
            vec![],
            DatasetMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn plateau_decay_validated_and_trains() {
        let ds = blobs(400, 3);
        let bad = ClassifierConfig {
            plateau_factor: 0.0,
            ..Default::default()
        };
        assert!(matches!(train_classifier(&ds, &bad), Err(Error::Config(_))));
        let base = ClassifierConfig {
            hidden_size: 8,
            epochs: 40,
            seed: 2,
            ..Default::default()
        };
        let plain = train_classifier(&ds, &base).unwrap();
        let never = ClassifierConfig {
            plateau_factor: 0.5,
            plateau_epochs: 1000,
            ..base.clone()
        };
        assert_eq!(train_classifier(&ds, &never).unwrap().mlp, plain.mlp);
        let eager = ClassifierConfig {
            plateau_factor: 0.1,
            plateau_epochs: 1,
            ..base
        };
        assert_ne!(train_classifier(&ds, &eager).unwrap().mlp, plain.mlp);
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let ds = blobs(400, 3);
        let cfg = ClassifierConfig {
            hidden_size: 16,
            epochs: 60,
            seed: 1,
            ..Default::default()
        };
        let m = train_classifier(&ds, &cfg).unwrap();
        assert_eq!(m.accuracy.test, Some(1.0));
        let p = m.predict_proba(&ds.batch(&ds.test_indices()).unwrap()).unwrap();
        for r in 0..p.rows() {
            assert!((p.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let again = train_classifier(&ds, &cfg).unwrap();
        assert_eq!(m.mlp, again.mlp);
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut rng = rng_from_seed(7);
        let m = ClassifierModel {
            mlp: Mlp::new(3, 8, 2, &mut rng),
            ..ClassifierModel::zeros(3, 8)
        };
        let x0 = vec![0.4, -1.2, 0.7];
        let f = |x: &[f64]| m.predict_proba(&Tensor::row(x.to_vec()).unwrap()).unwrap().get(0, 1);
        let mut tape = Tape::new();
        let xv = tape.leaf(&Tensor::row(x0.clone()).unwrap().with_requires_grad(true));
        let p = m.probabilities(&mut tape, xv).unwrap();
        let p1 = tape.select_per_row(p, &[1]).unwrap();
        let s = tape.sum(p1).unwrap();
        let g = tape.backward(s).unwrap();
        let g = g.get(xv).unwrap();
        let h = 1e-5;
        for j in 0..3 {
            let (mut a, mut b) = (x0.clone(), x0.clone());
            a[j] += h;
            b[j] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((g[j] - fd).abs() <= 1e-4 * fd.abs().max(1e-6), "{j}: {} vs {fd}", g[j]);
        }
    }

    #[test]
    fn json_round_trip() {
        let m = ClassifierModel::zeros(2, 4);
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path()).unwrap();
        assert_eq!(ClassifierModel::load(f.path()).unwrap(), m);
    }
}
