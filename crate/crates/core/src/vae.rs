//! Stage-1 causal VAE: per-attribute encoder and decoder networks mixed
//! through a learnable adjacency matrix, trained under an acyclicity
//! constraint with an augmented Lagrangian.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{acyclicity_penalty, acyclicity_value, Adam, Tape, Tensor, Var};
use crate::datasets::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::nn::{Mlp, MlpVars};
use crate::rng::stage_rng;

/// Log-variance used where a deterministic encoding is wanted.
pub const DETERMINISTIC_LOGVAR: f64 = -20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeTrainConfig {
    pub latent_dim: usize,
    pub hidden_size: usize,
    /// Coefficient inside the acyclicity polynomial; `None` means `1/L`.
    pub alpha: Option<f64>,
    /// Epochs per outer round.
    pub epochs: usize,
    pub max_rounds: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub kl_weight: f64,
    pub lagrange_multiplier: f64,
    pub penalty_weight: f64,
    pub penalty_growth: f64,
    pub penalty_cap: f64,
    pub h_tolerance: f64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            hidden_size: 16,
            alpha: None,
            epochs: 30,
            max_rounds: 20,
            batch_size: 100,
            learning_rate: 3e-3,
            kl_weight: 0.1,
            lagrange_multiplier: 0.0,
            penalty_weight: 1.0,
            penalty_growth: 10.0,
            penalty_cap: 1e20,
            h_tolerance: 1e-8,
        }
    }
}

impl VaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.latent_dim == 0 || self.hidden_size == 0 {
            return bad("latent and hidden sizes must be positive");
        }
        if self.epochs == 0 || self.max_rounds == 0 || self.batch_size == 0 {
            return bad("epochs, rounds and batch size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.kl_weight >= 0.0) {
            return bad("KL weight must be non-negative");
        }
        if !(self.penalty_growth > 1.0) {
            return bad("penalty growth must exceed 1");
        }
        if !(self.h_tolerance > 0.0) || !(self.penalty_weight > 0.0) {
            return bad("h tolerance and penalty weight must be positive");
        }
        if matches!(self.alpha, Some(a) if !(a > 0.0)) {
            return bad("alpha must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub h: f64,
    pub reconstruction_mse: f64,
    pub mean_loss: f64,
    pub lagrange_multiplier: f64,
    pub penalty_weight: f64,
    pub skipped_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalVae {
    /// Raw adjacency; its diagonal is kept at zero.
    pub adjacency: Tensor,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
    pub alpha: f64,
    #[serde(default)]
    pub standardizer_id: String,
    pub config: VaeTrainConfig,
    #[serde(default)]
    pub seed: u64,
    pub final_h: f64,
    pub converged: bool,
    #[serde(default)]
    pub history: Vec<RoundRecord>,
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct VaeVars {
    pub adjacency: Var,
    pub encoder: MlpVars,
    pub decoder: MlpVars,
    /// `I − Aᵀ` with the diagonal mask applied.
    pub mixing: Var,
}

pub struct ElboTerms {
    pub loss: Var,
    pub reconstruction: Var,
    pub kl: Var,
    pub x_hat: Var,
}

impl CausalVae {
    pub fn new<R: Rng>(n_attrs: usize, config: &VaeTrainConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if n_attrs == 0 {
            return Err(shape_err("VAE needs at least one attribute"));
        }
        let d = config.latent_dim;
        Ok(Self {
            adjacency: Tensor::zeros(&[n_attrs, n_attrs]),
            encoder: Mlp::new(1, config.hidden_size, 2 * d, rng),
            decoder: Mlp::new(d, config.hidden_size, 1, rng),
            latent_dim: d,
            alpha: config.alpha.unwrap_or(1.0 / n_attrs as f64),
            standardizer_id: String::new(),
            config: config.clone(),
            seed: 0,
            final_h: 0.0,
            converged: false,
            history: Vec::new(),
        })
    }

    pub fn n_attrs(&self) -> usize {
        self.adjacency.rows()
    }

    /// Width of the flattened latent code, `L·d`.
    pub fn flat_latent_dim(&self) -> usize {
        self.n_attrs() * self.latent_dim
    }

    /// Adjacency with the diagonal forced to zero.
    pub fn masked_adjacency(&self) -> Tensor {
        let l = self.n_attrs();
        let mut a = self.adjacency.clone().with_requires_grad(false);
        for i in 0..l {
            a.data_mut()[i * l + i] = 0.0;
        }
        a
    }

    pub fn acyclicity(&self) -> Result<f64> {
        acyclicity_value(&self.masked_adjacency(), self.alpha)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<VaeVars> {
        let l = self.n_attrs();
        let adjacency = if trainable {
            tape.param(&self.adjacency)
        } else {
            tape.constant(self.adjacency.clone())
        };
        let mut mask = Tensor::eye(l);
        mask.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        let mask = tape.constant(mask);
        let masked = tape.hadamard(adjacency, mask)?;
        let at = tape.transpose(masked)?;
        let eye = tape.constant(Tensor::eye(l));
        let mixing = tape.sub(eye, at)?;
        Ok(VaeVars {
            adjacency,
            encoder: self.encoder.bind(tape, trainable),
            decoder: self.decoder.bind(tape, trainable),
            mixing,
        })
    }

    /// Masked adjacency as recorded on the tape (for the penalty).
    fn masked_var(&self, tape: &mut Tape, vars: &VaeVars) -> Result<Var> {
        let eye = tape.constant(Tensor::eye(self.n_attrs()));
        let at = tape.sub(eye, vars.mixing)?;
        tape.transpose(at)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.n_attrs() {
            return Err(shape_err(format!(
                "VAE expects rows of {} attributes, got shape {:?}",
                self.n_attrs(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Posterior mean and log-variance, each `(B·L) × d`.
    pub fn encode_vars(&self, tape: &mut Tape, vars: &VaeVars, x: Var) -> Result<(Var, Var)> {
        self.check_input(tape.value(x))?;
        let b = tape.value(x).rows();
        let col = tape.reshape(x, vec![b * self.n_attrs(), 1])?;
        let h = self.encoder.forward(tape, &vars.encoder, col)?;
        let mixed = tape.block_left_matmul(vars.mixing, h)?;
        let d = self.latent_dim;
        let mean = tape.slice_cols(mixed, 0, d)?;
        let logvar = tape.slice_cols(mixed, d, 2 * d)?;
        Ok((mean, logvar))
    }

    /// Decodes `(B·L) × d` latents into `B × L` reconstructions.
    pub fn decode_vars(&self, tape: &mut Tape, vars: &VaeVars, z: Var) -> Result<Var> {
        let zv = tape.value(z);
        let l = self.n_attrs();
        if zv.cols() != self.latent_dim || !zv.rows().is_multiple_of(l) {
            return Err(shape_err(format!(
                "latent of shape {:?} does not fit {l} attributes × {}",
                zv.shape(),
                self.latent_dim
            )));
        }
        let b = zv.rows() / l;
        let inv = tape.inverse(vars.mixing)?;
        let mixed = tape.block_left_matmul(inv, z)?;
        let out = self.decoder.forward(tape, &vars.decoder, mixed)?;
        tape.reshape(out, vec![b, l])
    }

    /// Negative ELBO averaged over the batch, with one reparameterized
    /// draw per datum from `noise` (`(B·L) × d`).
    pub fn elbo_terms(
        &self,
        tape: &mut Tape,
        vars: &VaeVars,
        x: Var,
        noise: &Tensor,
        kl_weight: f64,
    ) -> Result<ElboTerms> {
        let b = tape.value(x).rows();
        if b == 0 {
            return Err(Error::EmptyInput("ELBO over an empty batch".into()));
        }
        let (mean, logvar) = self.encode_vars(tape, vars, x)?;
        if noise.shape() != tape.value(mean).shape() {
            return Err(shape_err(format!(
                "noise shape {:?} does not match latent {:?}",
                noise.shape(),
                tape.value(mean).shape()
            )));
        }
        let half_lv = tape.scale(logvar, 0.5)?;
        let std = tape.exp(half_lv)?;
        let eps = tape.constant(noise.clone());
        let spread = tape.hadamard(std, eps)?;
        let z = tape.add(mean, spread)?;
        let x_hat = self.decode_vars(tape, vars, z)?;

        let inv_b = 1.0 / b as f64;
        let diff = tape.sub(x, x_hat)?;
        let sq = tape.l2_norm_sq(diff)?;
        let rec = tape.scale(sq, 0.5 * inv_b)?;
        let log_norm = 0.5 * self.n_attrs() as f64 * (2.0 * PI).ln();
        let reconstruction = tape.add_scalar(rec, log_norm)?;

        // 0.5 Σ (μ² + e^lv − 1 − lv)
        let mu2 = tape.square(mean)?;
        let var = tape.exp(logvar)?;
        let s = tape.add(mu2, var)?;
        let s = tape.sub(s, logvar)?;
        let s = tape.add_scalar(s, -1.0)?;
        let total = tape.sum(s)?;
        let kl = tape.scale(total, 0.5 * inv_b)?;

        let weighted = tape.scale(kl, kl_weight)?;
        let loss = tape.add(reconstruction, weighted)?;
        Ok(ElboTerms {
            loss,
            reconstruction,
            kl,
            x_hat,
        })
    }

    /// Flattened posterior mean and log-variance, each `B × (L·d)`.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let xv = tape.constant(x.clone());
        let (m, lv) = self.encode_vars(&mut tape, &vars, xv)?;
        let shape = vec![x.rows(), self.flat_latent_dim()];
        Ok((
            tape.value(m).clone().reshape(shape.clone())?,
            tape.value(lv).clone().reshape(shape)?,
        ))
    }

    /// Decodes flattened latents `B × (L·d)`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        if z.shape().len() != 2 || z.cols() != self.flat_latent_dim() {
            return Err(shape_err(format!(
                "expected latents of width {}, got shape {:?}",
                self.flat_latent_dim(),
                z.shape()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let zv = tape.constant(z.clone().reshape(vec![z.rows() * self.n_attrs(), self.latent_dim])?);
        let out = self.decode_vars(&mut tape, &vars, zv)?;
        Ok(tape.value(out).clone())
    }

    /// Decode of the posterior mean.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let (mean, _) = self.encode(x)?;
        self.decode(&mean)
    }

    pub fn reconstruction_mse(&self, x: &Tensor) -> Result<f64> {
        let r = self.reconstruct(x)?;
        let n = x.numel().max(1) as f64;
        Ok(x.data().iter().zip(r.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
    }

    /// Negative ELBO of `x` for a given noise draw.
    pub fn elbo_loss(&self, x: &Tensor, noise: &Tensor, kl_weight: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let xv = tape.constant(x.clone());
        let t = self.elbo_terms(&mut tape, &vars, xv, noise, kl_weight)?;
        Ok(tape.value(t.loss).item())
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.adjacency];
        v.extend(self.encoder.params_mut());
        v.extend(self.decoder.params_mut());
        v
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.adjacency];
        v.extend(self.encoder.params());
        v.extend(self.decoder.params());
        v
    }

    fn zero_diagonal(&mut self) {
        let l = self.n_attrs();
        for i in 0..l {
            self.adjacency.data_mut()[i * l + i] = 0.0;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn normal_noise<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("consistent shape")
}

enum StepOutcome {
    Loss(f64),
    Singular,
}

fn train_step<R: Rng>(
    vae: &mut CausalVae,
    opt: &mut Adam,
    x: &Tensor,
    lambda: f64,
    c: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let vars = vae.bind(&mut tape, true)?;
    let xv = tape.constant(x.clone());
    let noise = normal_noise(x.rows() * vae.n_attrs(), vae.latent_dim, rng);
    let terms = match vae.elbo_terms(&mut tape, &vars, xv, &noise, vae.config.kl_weight) {
        Ok(t) => t,
        Err(Error::Singular { .. }) => return Ok(StepOutcome::Singular),
        Err(e) => return Err(e),
    };
    let a = vae.masked_var(&mut tape, &vars)?;
    let h = acyclicity_penalty(&mut tape, a, vae.alpha)?;
    let lin = tape.scale(h, lambda)?;
    let h2 = tape.square(h)?;
    let quad = tape.scale(h2, 0.5 * c)?;
    let pen = tape.add(lin, quad)?;
    let loss = tape.add(terms.loss, pen)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Divergence(format!("VAE loss became {value}")));
    }
    let grads = tape.backward(loss)?;
    grads.accumulate_into(vars.adjacency, &mut vae.adjacency);
    vae.encoder.accumulate_grads(&grads, &vars.encoder);
    vae.decoder.accumulate_grads(&grads, &vars.decoder);
    opt.step(&mut vae.params_mut())?;
    vae.zero_diagonal();
    Ok(StepOutcome::Loss(value))
}

/// Trains on standardized rows `x` (`N × L`).
pub fn train_vae_on(x: &Tensor, config: &VaeTrainConfig, seed: u64) -> Result<CausalVae> {
    config.validate()?;
    if x.shape().len() != 2 || x.rows() == 0 {
        return Err(Error::EmptyInput("VAE training data is empty".into()));
    }
    if !x.is_finite() {
        return Err(Error::DegenerateData("non-finite training value".into()));
    }
    let (n, l) = (x.rows(), x.cols());
    let mut init_rng = stage_rng(seed, "vae-init");
    let mut rng = stage_rng(seed, "vae-train");
    let mut vae = CausalVae::new(l, config, &mut init_rng)?;
    vae.seed = seed;
    let mut opt = Adam::new(&vae.params(), config.learning_rate);

    let mut lambda = config.lagrange_multiplier;
    let mut c = config.penalty_weight;
    let mut h_prev = f64::INFINITY;
    let mut order: Vec<usize> = (0..n).collect();
    let mut buf = Vec::with_capacity(config.batch_size * l);
    for round in 0..config.max_rounds {
        let mut skipped = 0;
        let mut total = 0.0;
        let mut steps = 0;
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                buf.clear();
                for &i in chunk {
                    buf.extend_from_slice(x.row_slice(i));
                }
                let batch = Tensor::matrix(chunk.len(), l, buf.clone())?;
                match train_step(&mut vae, &mut opt, &batch, lambda, c, &mut rng)? {
                    StepOutcome::Loss(v) => {
                        total += v;
                        steps += 1;
                    }
                    StepOutcome::Singular => {
                        skipped += 1;
                        for p in vae.params_mut() {
                            p.clear_grad();
                        }
                        c = (c * config.penalty_growth).min(config.penalty_cap);
                    }
                }
            }
        }
        let h = vae.acyclicity()?;
        let mse = vae.reconstruction_mse(x)?;
        vae.history.push(RoundRecord {
            round,
            h,
            reconstruction_mse: mse,
            mean_loss: if steps > 0 { total / steps as f64 } else { f64::NAN },
            lagrange_multiplier: lambda,
            penalty_weight: c,
            skipped_steps: skipped,
        });
        vae.final_h = h;
        if h < config.h_tolerance {
            vae.converged = true;
            break;
        }
        lambda += c * h;
        if h > 0.25 * h_prev {
            c = (c * config.penalty_growth).min(config.penalty_cap);
        }
        h_prev = h;
    }
    Ok(vae)
}

/// Trains on the dataset's training split.
pub fn train_vae(data: &Dataset, config: &VaeTrainConfig, seed: u64) -> Result<CausalVae> {
    let x = data.batch(&data.train_indices())?;
    let mut vae = train_vae_on(&x, config, seed)?;
    vae.standardizer_id = data.standardizer().id();
    Ok(vae)
}
