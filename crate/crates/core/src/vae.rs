//! Variational autoencoder over normalized conductivity images.
//!
//! Encoder trunk (strided convs) feeds a mean head and a log-variance head; the
//! decoder maps a latent vector back to an image through transposed convs and tanh.
//! Decoded images are multiplied by the domain mask.

use std::path::Path;

use diffkit::checkpoint;
use diffkit::{derive_seed, sample_gaussian, seeded_rng, Adam, Cache, Gradients, LayerSpec, Mode, Network, ParameterSet, Scalar, Tensor, BN_MOMENTUM};
use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{check_len, invalid, EitError, Result};
use crate::frame::frame_len;
use crate::hash::Fingerprint;

pub const DEFAULT_LATENT: usize = 16;
pub const ENCODER_CHANNELS: [usize; 4] = [16, 32, 32, 32];
pub const CONV_KERNEL: usize = 3;
pub const TCONV_KERNEL: usize = 4;
/// Total downsampling of the encoder trunk.
pub const GRID_FACTOR: usize = 16;
pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_LR: f64 = 1e-3;
const EVAL_CHUNK: usize = 256;
const MASK: &str = "vae.mask";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlFormula {
    /// `½ Σ (μ² + σ² − ln σ² − 1)`, the divergence from N(0, I).
    Standard,
    /// `½ Σ (μ² + σ² − ln σ − 1)`, kept for comparison; its minimum is not at σ = 1.
    LogSigma,
}

impl std::str::FromStr for KlFormula {
    type Err = EitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(KlFormula::Standard),
            "log-sigma" => Ok(KlFormula::LogSigma),
            other => Err(invalid("kl formula", format!("expected standard or log-sigma, got {other:?}"))),
        }
    }
}

impl KlFormula {
    /// Per-coordinate value and derivative with respect to the log-variance.
    fn term(self, mu: f64, logvar: f64) -> (f64, f64) {
        let var = logvar.exp();
        match self {
            KlFormula::Standard => (0.5 * (mu * mu + var - logvar - 1.0), 0.5 * (var - 1.0)),
            KlFormula::LogSigma => (0.5 * (mu * mu + var - 0.5 * logvar - 1.0), 0.5 * (var - 0.5)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub grid: usize,
    pub electrodes: usize,
    pub kl_formula: KlFormula,
    pub init_seed: u64,
}

impl VaeConfig {
    pub fn new(latent_dim: usize, grid: usize, electrodes: usize) -> Self {
        Self {
            latent_dim,
            grid,
            electrodes,
            kl_formula: KlFormula::Standard,
            init_seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let limit = frame_len(self.electrodes) / 2;
        if self.latent_dim == 0 || self.latent_dim >= limit {
            return Err(invalid("latent dimension", format!("must lie in 1..{limit} for {} electrodes, got {}", self.electrodes, self.latent_dim)));
        }
        if self.grid == 0 || self.grid % GRID_FACTOR != 0 {
            return Err(invalid("vae grid", format!("must be a positive multiple of {GRID_FACTOR}, got {}", self.grid)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch: DEFAULT_BATCH,
            lr: DEFAULT_LR,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch < 2 || !(self.lr > 0.0) {
            return Err(invalid("training config", format!("need epochs ≥ 1, batch ≥ 2, lr > 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Per-epoch mean losses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss: Vec<f64>,
    pub recon: Vec<f64>,
    pub kl: Vec<f64>,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Closed-form KL term of one distribution.
pub fn kl_loss(dist: &LatentDistribution, formula: KlFormula) -> Result<f64> {
    check_len("sigma", dist.mu.len(), dist.sigma.len())?;
    let mut total = 0.0;
    for (&m, &s) in dist.mu.iter().zip(&dist.sigma) {
        if !(s > 0.0 && s.is_finite() && m.is_finite()) {
            return Err(invalid("latent distribution", format!("needs finite μ and σ > 0, got μ={m}, σ={s}")));
        }
        total += formula.term(m, 2.0 * s.ln()).0;
    }
    Ok(total)
}

/// `h = μ + σ ⊙ z` with seeded standard normal `z`.
pub fn reparameterize(dist: &LatentDistribution, seed: u64) -> Vec<f64> {
    let z = sample_gaussian::<f64>(&[dist.mu.len()], seed);
    dist.mu.iter().zip(&dist.sigma).zip(z.data()).map(|((m, s), z)| m + s * z).collect()
}

/// Loss components averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VaeManifest {
    pub config: VaeConfig,
    pub c_norm: f64,
    pub dataset_hash: String,
    pub workbench_fingerprint: String,
    pub history: TrainReport,
}

#[derive(Clone, Debug)]
pub struct VaeModel {
    config: VaeConfig,
    encoder: Network,
    mean_head: Network,
    logvar_head: Network,
    decoder: Network,
    params: ParameterSet<f32>,
    c_norm: f64,
    dataset_hash: String,
    workbench_fingerprint: String,
    history: TrainReport,
}

struct Caches<T> {
    encoder: Cache<T>,
    decoder: Cache<T>,
}

fn architecture(cfg: &VaeConfig) -> Result<[Network; 4]> {
    let g = cfg.grid;
    let mut enc = Vec::new();
    let mut c_in = 1;
    for &c in &ENCODER_CHANNELS {
        enc.push(LayerSpec::Conv {
            in_channels: c_in,
            out_channels: c,
            kernel: CONV_KERNEL,
            stride: 2,
        });
        enc.push(LayerSpec::Batchnorm { features: c });
        enc.push(LayerSpec::Relu);
        c_in = c;
    }
    let side = g / GRID_FACTOR;
    let flat = c_in * side * side;
    enc.push(LayerSpec::Reshape { shape: vec![flat] });
    let encoder = Network::new("encoder", &[1, g, g], enc)?;
    let k = cfg.latent_dim;
    let mean_head = Network::new("mean_head", &[flat], vec![LayerSpec::Dense { inputs: flat, outputs: k }])?;
    let logvar_head = Network::new("logvar_head", &[flat], vec![LayerSpec::Dense { inputs: flat, outputs: k }])?;
    let mut dec = vec![
        LayerSpec::Dense { inputs: k, outputs: flat },
        LayerSpec::Relu,
        LayerSpec::Reshape {
            shape: vec![c_in, side, side],
        },
    ];
    let mut channels: Vec<usize> = ENCODER_CHANNELS.iter().rev().copied().collect();
    channels.push(1);
    for w in channels.windows(2) {
        dec.push(LayerSpec::Tconv {
            in_channels: w[0],
            out_channels: w[1],
            kernel: TCONV_KERNEL,
            stride: 2,
        });
        if w[1] != 1 {
            dec.push(LayerSpec::Relu);
        }
    }
    dec.push(LayerSpec::Tanh);
    let decoder = Network::new("decoder", &[k], dec)?;
    Ok([encoder, mean_head, logvar_head, decoder])
}

impl VaeModel {
    /// Fresh model with initialized weights; `mask` marks pixels inside the domain.
    pub fn new(config: VaeConfig, mask: &[bool]) -> Result<Self> {
        config.validate()?;
        check_len("mask", config.grid * config.grid, mask.len())?;
        let [encoder, mean_head, logvar_head, decoder] = architecture(&config)?;
        let mut params = ParameterSet::new();
        for (i, net) in [&encoder, &mean_head, &logvar_head, &decoder].into_iter().enumerate() {
            net.init_params(&mut params, derive_seed(config.init_seed, "vae-init", i as u64));
        }
        let m: Vec<f32> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        params.insert(MASK, Tensor::from_vec(&[mask.len()], m)?, false);
        Ok(Self {
            config,
            encoder,
            mean_head,
            logvar_head,
            decoder,
            params,
            c_norm: 1.0,
            dataset_hash: String::new(),
            workbench_fingerprint: String::new(),
            history: TrainReport::default(),
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn image_len(&self) -> usize {
        self.config.grid * self.config.grid
    }

    pub fn c_norm(&self) -> f64 {
        self.c_norm
    }

    pub fn dataset_hash(&self) -> &str {
        &self.dataset_hash
    }

    pub fn workbench_fingerprint(&self) -> &str {
        &self.workbench_fingerprint
    }

    pub fn history(&self) -> &TrainReport {
        &self.history
    }

    pub fn params(&self) -> &ParameterSet<f32> {
        &self.params
    }

    pub fn networks(&self) -> [&Network; 4] {
        [&self.encoder, &self.mean_head, &self.logvar_head, &self.decoder]
    }

    pub fn mask(&self) -> Vec<bool> {
        self.params.get(MASK).expect("mask is always present").data().iter().map(|&v| v > 0.5).collect()
    }

    /// Binds the model to a dataset's normalization and provenance.
    pub fn attach(&mut self, ds: &Dataset) -> Result<()> {
        let g = ds.manifest().grid;
        if g.width != self.config.grid || g.height != self.config.grid {
            return Err(EitError::Incompatible {
                artifact: "dataset grid".into(),
                expected: format!("{0}x{0}", self.config.grid),
                found: format!("{}x{}", g.width, g.height),
            });
        }
        if ds.manifest().electrodes != self.config.electrodes {
            return Err(EitError::Incompatible {
                artifact: "dataset electrodes".into(),
                expected: self.config.electrodes.to_string(),
                found: ds.manifest().electrodes.to_string(),
            });
        }
        self.c_norm = ds.c_norm();
        self.dataset_hash = ds.hash();
        self.workbench_fingerprint = ds.manifest().workbench_fingerprint.clone();
        Ok(())
    }

    /// Mean objective `(1/B) Σ [‖mask ⊙ Ψ(μ + σ⊙z) − x‖² + KL]` and its gradients,
    /// with batch statistics in every batchnorm.
    pub fn loss_and_gradients<T: Scalar>(&self, params: &ParameterSet<T>, images: &Tensor<T>, noise: &Tensor<T>) -> Result<(LossParts, Gradients<T>)> {
        let (parts, grads, _) = self.objective(params, images, noise)?;
        Ok((parts, grads))
    }

    fn objective<T: Scalar>(&self, params: &ParameterSet<T>, images: &Tensor<T>, noise: &Tensor<T>) -> Result<(LossParts, Gradients<T>, Caches<T>)> {
        let b = images.batch();
        let k = self.config.latent_dim;
        check_len("latent noise", b * k, noise.len())?;
        let (feat, c_enc) = self.encoder.forward(params, images, Mode::Train)?;
        let (mu, c_mu) = self.mean_head.forward(params, &feat, Mode::Train)?;
        let (lv, c_lv) = self.logvar_head.forward(params, &feat, Mode::Train)?;
        let mut h = Tensor::zeros(&[b, k]);
        for i in 0..b * k {
            let s = (lv.data()[i] * T::lit(0.5)).exp();
            h.data_mut()[i] = mu.data()[i] + s * noise.data()[i];
        }
        let (y, c_dec) = self.decoder.forward(params, &h, Mode::Train)?;
        let mask = params.get(MASK)?.data();
        let n = self.image_len();
        let inv_b = 1.0 / b as f64;
        let mut recon = 0.0;
        let mut dy = Tensor::zeros(y.shape());
        for s in 0..b {
            for p in 0..n {
                let i = s * n + p;
                let r = y.data()[i] * mask[p] - images.data()[i];
                recon += r.to_f64().unwrap_or(f64::NAN).powi(2);
                dy.data_mut()[i] = T::lit(2.0 * inv_b) * r * mask[p];
            }
        }
        let (dh, mut grads) = self.decoder.backward(params, &c_dec, &dy)?;
        let mut dmu = Tensor::zeros(&[b, k]);
        let mut dlv = Tensor::zeros(&[b, k]);
        let mut kl = 0.0;
        for i in 0..b * k {
            let (m, l) = (mu.data()[i].to_f64().unwrap_or(f64::NAN), lv.data()[i].to_f64().unwrap_or(f64::NAN));
            let (val, dl) = self.config.kl_formula.term(m, l);
            kl += val;
            let s = (lv.data()[i] * T::lit(0.5)).exp();
            dmu.data_mut()[i] = dh.data()[i] + T::lit(m * inv_b);
            dlv.data_mut()[i] = dh.data()[i] * noise.data()[i] * s * T::lit(0.5) + T::lit(dl * inv_b);
        }
        let (df_mu, g_mu) = self.mean_head.backward(params, &c_mu, &dmu)?;
        let (df_lv, g_lv) = self.logvar_head.backward(params, &c_lv, &dlv)?;
        let mut df = df_mu;
        df.add_assign(&df_lv);
        let (_, g_enc) = self.encoder.backward(params, &c_enc, &df)?;
        for g in [g_mu, g_lv, g_enc] {
            diffkit::accumulate(&mut grads, g);
        }
        let parts = LossParts {
            total: (recon + kl) * inv_b,
            recon: recon * inv_b,
            kl: kl * inv_b,
        };
        let caches = Caches {
            encoder: c_enc,
            decoder: c_dec,
        };
        Ok((parts, grads, caches))
    }

    fn image_tensor(&self, images: &[f32]) -> Result<Tensor<f32>> {
        let n = self.image_len();
        if images.len() % n != 0 {
            return Err(invalid("image batch", format!("{} values is not a multiple of {n}", images.len())));
        }
        let g = self.config.grid;
        Ok(Tensor::from_vec(&[images.len() / n, 1, g, g], images.to_vec())?)
    }

    /// Mean and log-variance head outputs (eval mode) for a flat batch of images.
    pub fn encode_raw(&self, images: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        let mut mu = Vec::new();
        let mut lv = Vec::new();
        for chunk in images.chunks(EVAL_CHUNK * self.image_len()) {
            let x = self.image_tensor(chunk)?;
            let (feat, _) = self.encoder.forward(&self.params, &x, Mode::Eval)?;
            mu.extend(self.mean_head.forward(&self.params, &feat, Mode::Eval)?.0.into_vec());
            lv.extend(self.logvar_head.forward(&self.params, &feat, Mode::Eval)?.0.into_vec());
        }
        Ok((mu, lv))
    }

    /// Latent distributions, one per image, in input order.
    pub fn encode(&self, images: &[f32]) -> Result<Vec<LatentDistribution>> {
        let (mu, lv) = self.encode_raw(images)?;
        let k = self.config.latent_dim;
        Ok(mu
            .chunks(k)
            .zip(lv.chunks(k))
            .map(|(m, l)| LatentDistribution {
                mu: m.iter().map(|&v| v as f64).collect(),
                sigma: l.iter().map(|&v| (0.5 * v as f64).exp()).collect(),
            })
            .collect())
    }

    /// Mean-head outputs, flat `[n, k]`.
    pub fn encode_mean(&self, images: &[f32]) -> Result<Vec<f32>> {
        Ok(self.encode_raw(images)?.0)
    }

    /// Masked decoder output (eval mode) for a flat batch of latent vectors.
    pub fn decode(&self, latents: &[f32]) -> Result<Vec<f32>> {
        let k = self.config.latent_dim;
        if latents.len() % k != 0 {
            return Err(invalid("latent batch", format!("{} values is not a multiple of {k}", latents.len())));
        }
        let mask = self.params.get(MASK)?.data().to_vec();
        let mut out = Vec::with_capacity(latents.len() / k * self.image_len());
        for chunk in latents.chunks(EVAL_CHUNK * k) {
            let h = Tensor::from_vec(&[chunk.len() / k, k], chunk.to_vec())?;
            let (y, _) = self.decoder.forward(&self.params, &h, Mode::Eval)?;
            for img in y.data().chunks(self.image_len()) {
                out.extend(img.iter().zip(&mask).map(|(v, m)| v * m));
            }
        }
        Ok(out)
    }

    /// `decode(encode_mean(x))`.
    pub fn reconstruct(&self, images: &[f32]) -> Result<Vec<f32>> {
        self.decode(&self.encode_mean(images)?)
    }

    /// Identifies the trained weights and their provenance.
    pub fn hash(&self) -> String {
        let mut fp = Fingerprint::new()
            .str(&serde_json::to_string(&self.config).unwrap_or_default())
            .f64s(&[self.c_norm])
            .str(&self.dataset_hash);
        for (name, p) in self.params.iter() {
            fp = fp.str(name).f32s(p.value.data());
        }
        fp.hex()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = VaeManifest {
            config: self.config,
            c_norm: self.c_norm,
            dataset_hash: self.dataset_hash.clone(),
            workbench_fingerprint: self.workbench_fingerprint.clone(),
            history: self.history.clone(),
        };
        let extra = serde_json::json!({ "vae": manifest, "model_hash": self.hash() });
        checkpoint::save(dir, &self.networks(), &self.params, self.config.init_seed, extra)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, params) = checkpoint::load::<f32>(dir)?;
        let vae: VaeManifest = serde_json::from_value(manifest.extra.get("vae").cloned().ok_or_else(|| EitError::Format("checkpoint has no vae manifest".into()))?)?;
        let mut model = Self::new(vae.config, &vec![true; vae.config.grid * vae.config.grid])?;
        for (net, stored) in model.networks().into_iter().zip(&manifest.networks) {
            if net.layers() != stored.layers() || net.name() != stored.name() {
                return Err(EitError::Incompatible {
                    artifact: "vae architecture".into(),
                    expected: net.name().into(),
                    found: stored.name().into(),
                });
            }
        }
        model.params = params;
        model.params.get(MASK)?;
        model.c_norm = vae.c_norm;
        model.dataset_hash = vae.dataset_hash;
        model.workbench_fingerprint = vae.workbench_fingerprint;
        model.history = vae.history;
        if let Some(stored) = manifest.extra.get("model_hash").and_then(|v| v.as_str()) {
            let found = model.hash();
            if stored != found {
                return Err(EitError::Incompatible {
                    artifact: "vae weights".into(),
                    expected: stored.into(),
                    found,
                });
            }
        }
        Ok(model)
    }
}

/// Stage 1: minibatch Adam on the VAE objective over the training split.
///
/// An epoch visits every training pair once, so each base image appears once per
/// noise replicate. On a non-finite loss the weights from the last completed epoch
/// are restored and a divergence error is returned.
pub fn train_stage1(model: &mut VaeModel, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    model.attach(ds)?;
    let pool: Vec<usize> = ds.pairs_in(Split::Train).iter().map(|&p| ds.base_of(p)).collect();
    if pool.len() < 2 {
        return Err(invalid("training split", "needs at least two pairs"));
    }
    let adam = Adam::new(cfg.lr);
    let g = model.config.grid;
    let k = model.config.latent_dim;
    let mut report = TrainReport::default();
    let mut last_good = model.params.clone();
    for epoch in 0..cfg.epochs {
        let mut order = pool.clone();
        order.shuffle(&mut seeded_rng(derive_seed(cfg.seed, "vae-shuffle", epoch as u64)));
        let (mut sum, mut sum_r, mut sum_k, mut count) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch).filter(|c| c.len() >= 2) {
            let samples: Vec<&[f32]> = batch.iter().map(|&b| ds.image(b)).collect();
            let x = Tensor::stack(&samples, &[1, g, g])?;
            let z = sample_gaussian::<f32>(&[batch.len(), k], derive_seed(cfg.seed, "vae-noise", model.params.step));
            let (parts, grads, caches) = model.objective(&model.params, &x, &z)?;
            if !parts.total.is_finite() {
                model.params = last_good;
                return Err(EitError::Divergence(format!("vae loss became {} at epoch {epoch}", parts.total)));
            }
            adam.step(&mut model.params, &grads);
            model.encoder.update_running_stats(&mut model.params, &caches.encoder, BN_MOMENTUM)?;
            model.decoder.update_running_stats(&mut model.params, &caches.decoder, BN_MOMENTUM)?;
            let w = batch.len() as f64;
            sum += parts.total * w;
            sum_r += parts.recon * w;
            sum_k += parts.kl * w;
            count += batch.len();
        }
        let n = count as f64;
        report.loss.push(sum / n);
        report.recon.push(sum_r / n);
        report.kl.push(sum_k / n);
        info!("vae epoch {epoch}: loss {:.4} recon {:.4} kl {:.4}", sum / n, sum_r / n, sum_k / n);
        last_good = model.params.clone();
    }
    report.steps = model.params.step;
    let mut history = std::mem::take(&mut model.history);
    history.loss.extend(&report.loss);
    history.recon.extend(&report.recon);
    history.kl.extend(&report.kl);
    history.steps = report.steps;
    model.history = history;
    Ok(report)
}
