//! Stage 2: a modulation network perturbs latent codes toward a target
//! label while a discriminator keeps perturbed codes on the latent
//! distribution of the data.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Axis, Tape, Tensor, Var};
use crate::classifier::{argmax_label, BlackBox, ScoreScale};
use crate::datasets::{Dataset, Standardizer};
use crate::error::{shape_err, Error, Result};
use crate::nn::{Mlp, MlpVars};
use crate::rng::stage_rng;
use crate::vae::{CausalVae, VaeVars};

/// Bounds applied to discriminator outputs before taking logarithms.
pub const DIS_CLAMP: (f64, f64) = (1e-7, 1.0 - 1e-7);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationNet {
    pub mlp: Mlp,
    pub gamma: f64,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfTrainConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate_mod: f64,
    pub learning_rate_dis: f64,
    pub hidden_size: usize,
    /// Discriminator updates per modulation update.
    pub dis_steps: usize,
    pub score_scale: ScoreScale,
    pub seed: u64,
}

impl Default for CfTrainConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.5,
            alpha2: 1.0,
            alpha3: 0.5,
            beta: 0.1,
            gamma: 0.05,
            epochs: 100,
            batch_size: 32,
            learning_rate_mod: 1e-3,
            learning_rate_dis: 1e-3,
            hidden_size: 32,
            dis_steps: 1,
            score_scale: ScoreScale::default(),
            seed: 0,
        }
    }
}

impl CfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha1, self.alpha2, self.alpha3].iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.beta > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::Config("beta and gamma must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_size == 0 {
            return Err(Error::Config("epochs, batch size and hidden size must be positive".into()));
        }
        if !(self.learning_rate_mod > 0.0) || !(self.learning_rate_dis > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub original: Vec<f64>,
    pub counterfactual: Vec<f64>,
    pub original_label: u8,
    pub target_label: u8,
    pub predicted_cf_label: u8,
    pub delta_norm: f64,
    #[serde(default)]
    pub latent: Vec<f64>,
    #[serde(default)]
    pub latent_cf: Vec<f64>,
}

impl CounterfactualResult {
    pub fn is_valid(&self) -> bool {
        self.predicted_cf_label == self.target_label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfEpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub class: f64,
    pub nearest: f64,
    pub adversarial: f64,
    pub discriminator: f64,
}

/// Trained Stage-2 networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfEngine {
    pub modulation: ModulationNet,
    pub discriminator: Discriminator,
    pub config: CfTrainConfig,
    #[serde(default)]
    pub upstream: Vec<String>,
    #[serde(default)]
    pub history: Vec<CfEpochRecord>,
}

fn one_hot(labels: &[u8], k: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), k]);
    for (r, &y) in labels.iter().enumerate() {
        t.data_mut()[r * k + y as usize] = 1.0;
    }
    t
}

/// `max{max_{y≠y_cf} s_y − s_{y_cf}, −β}` for one score vector.
pub fn hinge_class_loss(scores: &[f64], y_cf: u8, beta: f64) -> f64 {
    let t = y_cf as usize;
    let other = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != t)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    (other - scores[t]).max(-beta)
}

/// Squared Euclidean distance plus `‖δ‖²`.
pub fn nearest_loss(x: &[f64], x_cf: &[f64], delta: &[f64]) -> f64 {
    let d: f64 = x.iter().zip(x_cf).map(|(a, b)| (a - b).powi(2)).sum();
    d + delta.iter().map(|v| v * v).sum::<f64>()
}

/// Per-row hinge on a `B × 2` score matrix, as a `B × 1` column.
pub fn hinge_rows(tape: &mut Tape, scores: Var, targets: &[u8], beta: f64) -> Result<Var> {
    if tape.value(scores).cols() != 2 {
        return Err(shape_err("hinge on the tape supports two classes"));
    }
    let t: Vec<usize> = targets.iter().map(|&y| y as usize).collect();
    let o: Vec<usize> = t.iter().map(|&y| 1 - y).collect();
    let st = tape.select_per_row(scores, &t)?;
    let so = tape.select_per_row(scores, &o)?;
    let diff = tape.sub(so, st)?;
    tape.clamp(diff, -beta, f64::INFINITY)
}

/// `(−mean log D(z_cf), −mean[log D(z) + log(1 − D(z_cf))])` from raw
/// discriminator outputs.
pub fn adversarial_terms(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<(Var, Var)> {
    let (lo, hi) = DIS_CLAMP;
    let fake = tape.clamp(d_fake, lo, hi)?;
    let real = tape.clamp(d_real, lo, hi)?;
    let log_fake = tape.log(fake)?;
    let m = tape.mean(log_fake)?;
    let mod_loss = tape.scale(m, -1.0)?;
    let log_real = tape.log(real)?;
    let neg = tape.scale(fake, -1.0)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    let log_one_minus = tape.log(one_minus)?;
    let mr = tape.mean(log_real)?;
    let mf = tape.mean(log_one_minus)?;
    let s = tape.add(mr, mf)?;
    let dis_loss = tape.scale(s, -1.0)?;
    Ok((mod_loss, dis_loss))
}

/// Plain-value version of the adversarial losses for flattened latents.
pub fn adversarial_losses(dis: &Discriminator, z: &Tensor, z_cf: &Tensor) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let dv = dis.mlp.bind(&mut tape, false);
    let zr = tape.constant(z.clone());
    let zf = tape.constant(z_cf.clone());
    let d_real = dis.forward(&mut tape, &dv, zr)?;
    let d_fake = dis.forward(&mut tape, &dv, zf)?;
    let (m, d) = adversarial_terms(&mut tape, d_real, d_fake)?;
    Ok((tape.value(m).item(), tape.value(d).item()))
}

impl ModulationNet {
    pub fn new<R: rand::Rng>(n_attrs: usize, flat_latent: usize, hidden: usize, gamma: f64, rng: &mut R) -> Self {
        Self {
            mlp: Mlp::new(n_attrs + 2, hidden, flat_latent, rng),
            gamma,
            n_classes: 2,
        }
    }

    pub fn zeros(n_attrs: usize, flat_latent: usize, hidden: usize, gamma: f64) -> Self {
        Self {
            mlp: Mlp::zeros(n_attrs + 2, hidden, flat_latent),
            gamma,
            n_classes: 2,
        }
    }

    /// `δ = γ·f(x ‖ onehot(y_cf))`, flattened to `B × (L·d)`.
    pub fn delta(&self, tape: &mut Tape, vars: &MlpVars, x: Var, y_cf: &[u8]) -> Result<Var> {
        if y_cf.len() != tape.value(x).rows() {
            return Err(shape_err("one target label per query required"));
        }
        if y_cf.iter().any(|&y| y as usize >= self.n_classes) {
            return Err(shape_err("target label out of range"));
        }
        let oh = tape.constant(one_hot(y_cf, self.n_classes));
        let input = tape.concat(x, oh, Axis::Cols)?;
        let raw = self.mlp.forward(tape, vars, input)?;
        tape.scale(raw, self.gamma)
    }
}

impl Discriminator {
    pub fn new<R: rand::Rng>(flat_latent: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            mlp: Mlp::new(flat_latent, hidden, 1, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, z: Var) -> Result<Var> {
        let logit = self.mlp.forward(tape, vars, z)?;
        tape.sigmoid(logit)
    }

    pub fn eval(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.mlp.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = self.forward(&mut tape, &vars, zv)?;
        Ok(tape.value(out).clone())
    }
}

/// Tape handles produced by one perturbation pass.
pub struct Perturbed {
    pub z: Var,
    pub delta: Var,
    pub z_cf: Var,
    pub x_cf: Var,
}

/// Encodes `x` (posterior mean), adds `δ` and decodes through the frozen VAE.
pub fn perturb_and_decode(
    tape: &mut Tape,
    vae: &CausalVae,
    vae_vars: &VaeVars,
    modulation: &ModulationNet,
    mod_vars: &MlpVars,
    x: Var,
    y_cf: &[u8],
) -> Result<Perturbed> {
    let b = tape.value(x).rows();
    let flat = vae.flat_latent_dim();
    if modulation.mlp.output_dim() != flat || modulation.mlp.input_dim() != vae.n_attrs() + 2 {
        return Err(shape_err("modulation network does not match the VAE latent shape"));
    }
    let (mean, _) = vae.encode_vars(tape, vae_vars, x)?;
    let z = tape.reshape(mean, vec![b, flat])?;
    let delta = modulation.delta(tape, mod_vars, x, y_cf)?;
    let z_cf = tape.add(z, delta)?;
    let blocks = tape.reshape(z_cf, vec![b * vae.n_attrs(), vae.latent_dim])?;
    let x_cf = vae.decode_vars(tape, vae_vars, blocks)?;
    Ok(Perturbed { z, delta, z_cf, x_cf })
}

/// Values of `(z, z_cf, δ)` for standardized queries.
pub fn perturb_latent(
    modulation: &ModulationNet,
    vae: &CausalVae,
    x: &Tensor,
    y_cf: &[u8],
) -> Result<(Tensor, Tensor, Tensor)> {
    let mut tape = Tape::new();
    let vv = vae.bind(&mut tape, false)?;
    let mv = modulation.mlp.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let (mean, _) = vae.encode_vars(&mut tape, &vv, xv)?;
    let z = tape.reshape(mean, vec![x.rows(), vae.flat_latent_dim()])?;
    let delta = modulation.delta(&mut tape, &mv, xv, y_cf)?;
    let z_cf = tape.add(z, delta)?;
    Ok((
        tape.value(z).clone(),
        tape.value(z_cf).clone(),
        tape.value(delta).clone(),
    ))
}

struct StepLosses {
    total: f64,
    class: f64,
    nearest: f64,
    adversarial: f64,
    discriminator: f64,
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    engine: &mut CfEngine,
    vae: &CausalVae,
    bb: &dyn BlackBox,
    x: &Tensor,
    y_cf: &[u8],
    opt_mod: &mut Adam,
    opt_dis: &mut Adam,
) -> Result<StepLosses> {
    let cfg = engine.config.clone();
    let b = x.rows() as f64;

    let mut discriminator = 0.0;
    for _ in 0..cfg.dis_steps {
        let mut tape = Tape::new();
        let vv = vae.bind(&mut tape, false)?;
        let mv = engine.modulation.mlp.bind(&mut tape, false);
        let dv = engine.discriminator.mlp.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let (mean, _) = vae.encode_vars(&mut tape, &vv, xv)?;
        let z = tape.reshape(mean, vec![x.rows(), vae.flat_latent_dim()])?;
        let delta = engine.modulation.delta(&mut tape, &mv, xv, y_cf)?;
        let z_cf = tape.add(z, delta)?;
        let d_real = engine.discriminator.forward(&mut tape, &dv, z)?;
        let d_fake = engine.discriminator.forward(&mut tape, &dv, z_cf)?;
        let (_, dis_loss) = adversarial_terms(&mut tape, d_real, d_fake)?;
        discriminator = tape.value(dis_loss).item();
        if !discriminator.is_finite() {
            return Err(Error::Divergence(format!(
                "discriminator loss became {discriminator}"
            )));
        }
        let g = tape.backward(dis_loss)?;
        engine.discriminator.mlp.accumulate_grads(&g, &dv);
        opt_dis.step(&mut engine.discriminator.mlp.params_mut())?;
    }

    let mut tape = Tape::new();
    let vv = vae.bind(&mut tape, false)?;
    let mv = engine.modulation.mlp.bind(&mut tape, true);
    let dv = engine.discriminator.mlp.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let p = perturb_and_decode(&mut tape, vae, &vv, &engine.modulation, &mv, xv, y_cf)?;
    let scores = bb.scores(&mut tape, p.x_cf, cfg.score_scale)?;
    let hinge = hinge_rows(&mut tape, scores, y_cf, cfg.beta)?;
    let class = tape.mean(hinge)?;
    let diff = tape.sub(xv, p.x_cf)?;
    let dist = tape.l2_norm_sq(diff)?;
    let dn = tape.l2_norm_sq(p.delta)?;
    let near = tape.add(dist, dn)?;
    let nearest = tape.scale(near, 1.0 / b)?;
    let d_real = engine.discriminator.forward(&mut tape, &dv, p.z)?;
    let d_fake = engine.discriminator.forward(&mut tape, &dv, p.z_cf)?;
    let (adv, _) = adversarial_terms(&mut tape, d_real, d_fake)?;
    let t1 = tape.scale(class, cfg.alpha1)?;
    let t2 = tape.scale(nearest, cfg.alpha2)?;
    let t3 = tape.scale(adv, cfg.alpha3)?;
    let s = tape.add(t1, t2)?;
    let total = tape.add(s, t3)?;
    let losses = StepLosses {
        total: tape.value(total).item(),
        class: tape.value(class).item(),
        nearest: tape.value(nearest).item(),
        adversarial: tape.value(adv).item(),
        discriminator,
    };
    if !losses.total.is_finite() {
        return Err(Error::Divergence(format!(
            "total loss became {} (class {}, nearest {}, adversarial {})",
            losses.total, losses.class, losses.nearest, losses.adversarial
        )));
    }
    let g = tape.backward(total)?;
    engine.modulation.mlp.accumulate_grads(&g, &mv);
    opt_mod.step(&mut engine.modulation.mlp.params_mut())?;
    Ok(losses)
}

/// Trains the modulation network and discriminator on the training split.
/// Targets always flip the black-box prediction.
pub fn train_cf(
    vae: &CausalVae,
    bb: &dyn BlackBox,
    data: &Dataset,
    config: &CfTrainConfig,
) -> Result<CfEngine> {
    config.validate()?;
    let l = data.n_features();
    if vae.n_attrs() != l || bb.n_features() != l {
        return Err(shape_err(format!(
            "dataset has {l} features, VAE {}, black box {}",
            vae.n_attrs(),
            bb.n_features()
        )));
    }
    let train = data.train_indices();
    if train.is_empty() {
        return Err(Error::EmptyInput("no training rows for the counterfactual engine".into()));
    }
    let mut init = stage_rng(config.seed, "cf-init");
    let mut rng = stage_rng(config.seed, "cf-train");
    let flat = vae.flat_latent_dim();
    let mut engine = CfEngine {
        modulation: ModulationNet::new(l, flat, config.hidden_size, config.gamma, &mut init),
        discriminator: Discriminator::new(flat, config.hidden_size, &mut init),
        config: config.clone(),
        upstream: Vec::new(),
        history: Vec::new(),
    };
    let mut opt_mod = Adam::new(&engine.modulation.mlp.params(), config.learning_rate_mod);
    let mut opt_dis = Adam::new(&engine.discriminator.mlp.params(), config.learning_rate_dis);

    let all = data.batch(&train)?;
    let pred = bb.predict(&all)?;
    let targets: Vec<u8> = pred.iter().map(|&p| 1 - p).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut acc = [0.0; 5];
        let mut n = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<usize> = chunk.iter().map(|&k| train[k]).collect();
            let x = data.batch(&rows)?;
            let y: Vec<u8> = chunk.iter().map(|&k| targets[k]).collect();
            let s = train_batch(&mut engine, vae, bb, &x, &y, &mut opt_mod, &mut opt_dis)
                .map_err(|e| match e {
                    Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}: {m}")),
                    other => other,
                })?;
            let w = chunk.len() as f64;
            for (a, v) in acc
                .iter_mut()
                .zip([s.total, s.class, s.nearest, s.adversarial, s.discriminator])
            {
                *a += v * w;
            }
            n += w;
        }
        engine.history.push(CfEpochRecord {
            epoch,
            total: acc[0] / n,
            class: acc[1] / n,
            nearest: acc[2] / n,
            adversarial: acc[3] / n,
            discriminator: acc[4] / n,
        });
    }
    Ok(engine)
}

impl CfEngine {
    /// Counterfactuals for raw-unit queries (`B × L`), one target each.
    pub fn generate(
        &self,
        vae: &CausalVae,
        bb: &dyn BlackBox,
        standardizer: &Standardizer,
        x_raw: &Tensor,
        y_cf: &[u8],
    ) -> Result<Vec<CounterfactualResult>> {
        let l = vae.n_attrs();
        if x_raw.shape().len() != 2 || x_raw.cols() != l {
            return Err(shape_err(format!(
                "queries must have {l} columns, got shape {:?}",
                x_raw.shape()
            )));
        }
        if y_cf.len() != x_raw.rows() {
            return Err(shape_err("one target label per query required"));
        }
        let b = x_raw.rows();
        if b == 0 {
            return Ok(Vec::new());
        }
        let mut std_rows = Vec::with_capacity(b * l);
        for r in 0..b {
            std_rows.extend(standardizer.standardize(x_raw.row_slice(r))?);
        }
        let x = Tensor::matrix(b, l, std_rows)?;
        let original_labels = bb.predict(&x)?;

        let mut tape = Tape::new();
        let vv = vae.bind(&mut tape, false)?;
        let mv = self.modulation.mlp.bind(&mut tape, false);
        let xv = tape.constant(x);
        let p = perturb_and_decode(&mut tape, vae, &vv, &self.modulation, &mv, xv, y_cf)?;
        let probs = bb.probabilities(&mut tape, p.x_cf)?;
        let (z, z_cf, delta, x_cf, probs) = (
            tape.value(p.z),
            tape.value(p.z_cf),
            tape.value(p.delta),
            tape.value(p.x_cf),
            tape.value(probs),
        );
        let mut out = Vec::with_capacity(b);
        for r in 0..b {
            out.push(CounterfactualResult {
                original: x_raw.row_slice(r).to_vec(),
                counterfactual: standardizer.destandardize(x_cf.row_slice(r))?,
                original_label: original_labels[r],
                target_label: y_cf[r],
                predicted_cf_label: argmax_label(probs.row_slice(r)),
                delta_norm: delta.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt(),
                latent: z.row_slice(r).to_vec(),
                latent_cf: z_cf.row_slice(r).to_vec(),
            });
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// CSV with `original_*`, `cf_*`, labels and `delta_norm` columns.
pub fn write_results_csv(path: &Path, feature_names: &[String], results: &[CounterfactualResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = feature_names.iter().map(|f| format!("original_{f}")).collect();
    header.extend(feature_names.iter().map(|f| format!("cf_{f}")));
    header.extend(
        ["original_label", "target_label", "predicted_cf_label", "delta_norm"].map(String::from),
    );
    w.write_record(&header)?;
    for r in results {
        let mut rec: Vec<String> = r.original.iter().map(|v| v.to_string()).collect();
        rec.extend(r.counterfactual.iter().map(|v| v.to_string()));
        rec.push(r.original_label.to_string());
        rec.push(r.target_label.to_string());
        rec.push(r.predicted_cf_label.to_string());
        rec.push(r.delta_norm.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::vae::VaeTrainConfig;

    #[test]
    fn hinge_hand_values() {
        assert!((hinge_class_loss(&[0.3, 0.7], 1, 0.1) + 0.1).abs() < 1e-15);
        assert_eq!(hinge_class_loss(&[0.5, 0.5], 1, 0.1), 0.0);
        assert_eq!(hinge_class_loss(&[0.5, 0.5], 0, 0.1), 0.0);
        assert!((hinge_class_loss(&[0.9, 0.1], 1, 0.1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn hinge_on_tape_matches_plain() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::from_rows(&[vec![0.3, 0.7], vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap());
        let h = hinge_rows(&mut tape, p, &[1, 1, 0], 0.1).unwrap();
        let v = tape.value(h).data().to_vec();
        assert!((v[0] + 0.1).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15 && v[2] == 0.0);
    }

    #[test]
    fn nearest_hand_values() {
        assert_eq!(nearest_loss(&[1.0, 2.0], &[1.0, 2.0], &[0.0, 0.0]), 0.0);
        assert_eq!(nearest_loss(&[3.0, 4.0, 0.0], &[0.0; 3], &[0.0]), 25.0);
        assert_eq!(nearest_loss(&[0.5], &[0.5], &[1.0, 1.0]), 2.0);
    }

    #[test]
    fn adversarial_at_half() {
        let dis = Discriminator {
            mlp: Mlp::zeros(4, 3, 1),
        };
        let z = Tensor::matrix(2, 4, vec![0.1; 8]).unwrap();
        let (m, d) = adversarial_losses(&dis, &z, &z).unwrap();
        assert!((m - 2f64.ln()).abs() < 1e-12);
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn adversarial_saturated_is_clamped() {
        let mut dis = Discriminator {
            mlp: Mlp::zeros(2, 3, 1),
        };
        dis.mlp.output.bias.data_mut()[0] = 1e3;
        let z = Tensor::matrix(1, 2, vec![0.0; 2]).unwrap();
        let (m, d) = adversarial_losses(&dis, &z, &z).unwrap();
        assert!((0.0..2e-7).contains(&m));
        assert!((d - (-(1e-7f64).ln())).abs() < 1e-6);
    }

    fn small_vae() -> CausalVae {
        CausalVae::new(3, &VaeTrainConfig::default(), &mut rng_from_seed(2)).unwrap()
    }

    #[test]
    fn zero_modulation_leaves_latent() {
        let vae = small_vae();
        let m = ModulationNet::zeros(3, 12, 8, 0.05);
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 1.0, 0.0, -1.0]).unwrap();
        let (z, z_cf, d) = perturb_latent(&m, &vae, &x, &[0, 1]).unwrap();
        assert_eq!(z, z_cf);
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_scales_delta_linearly() {
        let vae = small_vae();
        let mut m = ModulationNet::new(3, 12, 8, 0.05, &mut rng_from_seed(3));
        let x = Tensor::matrix(1, 3, vec![0.4, -0.2, 0.9]).unwrap();
        let (_, _, d1) = perturb_latent(&m, &vae, &x, &[1]).unwrap();
        m.gamma = 0.1;
        let (_, _, d2) = perturb_latent(&m, &vae, &x, &[1]).unwrap();
        for (a, b) in d1.data().iter().zip(d2.data()) {
            assert!((2.0 * a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn bad_config_rejected() {
        let c = CfTrainConfig {
            beta: 0.0,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = CfTrainConfig {
            alpha1: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
