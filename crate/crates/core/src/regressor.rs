//! Regression from filtered measurement frames to VAE latent means.

use std::path::Path;

use diffkit::checkpoint;
use diffkit::{derive_seed, seeded_rng, Adam, Gradients, LayerSpec, Mode, Network, ParameterSet, Scalar, Tensor};
use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{check_len, invalid, EitError, Result};
use crate::frame::frame_len;
use crate::hash::Fingerprint;
use crate::vae::{TrainConfig, VaeModel};

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 256];
pub const DEFAULT_EPOCHS: usize = 200;
const INPUT_MEAN: &str = "regressor.input_mean";
const INPUT_SCALE: &str = "regressor.input_scale";
const EVAL_CHUNK: usize = 1024;

/// Mean-head targets `h_b = Φ_me(image_b)`, one per base phantom.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrainingSet {
    latent_dim: usize,
    n_noise: usize,
    targets: Vec<f32>,
    vae_hash: String,
    dataset_hash: String,
}

impl LatentTrainingSet {
    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn vae_hash(&self) -> &str {
        &self.vae_hash
    }

    /// Target of base phantom `b`.
    pub fn base_target(&self, b: usize) -> &[f32] {
        &self.targets[b * self.latent_dim..(b + 1) * self.latent_dim]
    }

    /// Target of pair `n`; noise replicates share their base target.
    pub fn target(&self, pair: usize) -> &[f32] {
        self.base_target(pair / self.n_noise)
    }
}

/// Encodes every base image with the mean head (eval mode, no sampling).
pub fn build_targets(vae: &VaeModel, ds: &Dataset) -> Result<LatentTrainingSet> {
    let g = ds.manifest().grid;
    if g.width != vae.config().grid || g.height != vae.config().grid {
        return Err(EitError::Incompatible {
            artifact: "vae grid".into(),
            expected: format!("{}x{}", g.width, g.height),
            found: format!("{0}x{0}", vae.config().grid),
        });
    }
    if vae.c_norm() != ds.c_norm() {
        return Err(EitError::Incompatible {
            artifact: "vae normalization".into(),
            expected: ds.c_norm().to_string(),
            found: vae.c_norm().to_string(),
        });
    }
    Ok(LatentTrainingSet {
        latent_dim: vae.latent_dim(),
        n_noise: ds.n_noise(),
        targets: vae.encode_mean(ds.images())?,
        vae_hash: vae.hash(),
        dataset_hash: ds.hash(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub electrodes: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub init_seed: u64,
}

impl RegressorConfig {
    pub fn new(electrodes: usize, latent_dim: usize) -> Self {
        Self {
            electrodes,
            latent_dim,
            hidden: DEFAULT_HIDDEN.to_vec(),
            init_seed: 2,
        }
    }

    pub fn input_len(&self) -> usize {
        frame_len(self.electrodes)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressorReport {
    pub loss: Vec<f64>,
    pub steps: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegressorManifest {
    pub config: RegressorConfig,
    pub vae_hash: String,
    pub dataset_hash: String,
    pub history: RegressorReport,
}

#[derive(Clone, Debug)]
pub struct RegressorModel {
    config: RegressorConfig,
    network: Network,
    params: ParameterSet<f32>,
    vae_hash: String,
    dataset_hash: String,
    history: RegressorReport,
}

fn architecture(cfg: &RegressorConfig) -> Result<Network> {
    let mut layers = Vec::new();
    let mut width = cfg.input_len();
    for &h in &cfg.hidden {
        layers.push(LayerSpec::Dense { inputs: width, outputs: h });
        layers.push(LayerSpec::Relu);
        width = h;
    }
    layers.push(LayerSpec::Dense {
        inputs: width,
        outputs: cfg.latent_dim,
    });
    Ok(Network::new("regressor", &[cfg.input_len()], layers)?)
}

impl RegressorModel {
    /// Fresh model with identity input standardization.
    pub fn new(config: RegressorConfig) -> Result<Self> {
        if config.latent_dim == 0 || config.hidden.iter().any(|&h| h == 0) {
            return Err(invalid("regressor widths", format!("must be positive, got {:?} -> {}", config.hidden, config.latent_dim)));
        }
        let network = architecture(&config)?;
        let mut params = ParameterSet::new();
        network.init_params(&mut params, config.init_seed);
        let n = config.input_len();
        params.insert(INPUT_MEAN, Tensor::zeros(&[n]), false);
        params.insert(INPUT_SCALE, Tensor::full(&[n], 1.0), false);
        Ok(Self {
            config,
            network,
            params,
            vae_hash: String::new(),
            dataset_hash: String::new(),
            history: RegressorReport::default(),
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &ParameterSet<f32> {
        &self.params
    }

    pub fn vae_hash(&self) -> &str {
        &self.vae_hash
    }

    pub fn history(&self) -> &RegressorReport {
        &self.history
    }

    /// Sets per-component mean and standard deviation from the given frames.
    pub fn fit_standardization(&mut self, frames: &[&[f32]]) -> Result<()> {
        let n = self.config.input_len();
        if frames.is_empty() {
            return Err(invalid("standardization", "no frames"));
        }
        let mut mean = vec![0.0f64; n];
        for f in frames {
            check_len("frame", n, f.len())?;
            mean.iter_mut().zip(*f).for_each(|(m, &v)| *m += v as f64);
        }
        mean.iter_mut().for_each(|m| *m /= frames.len() as f64);
        let mut var = vec![0.0f64; n];
        for f in frames {
            var.iter_mut().zip(*f).zip(&mean).for_each(|((s, &v), m)| *s += (v as f64 - m).powi(2));
        }
        let scale: Vec<f32> = var
            .iter()
            .map(|s| {
                let sd = (s / frames.len() as f64).sqrt();
                if sd > 0.0 { sd as f32 } else { 1.0 }
            })
            .collect();
        *self.params.get_mut(INPUT_MEAN)? = Tensor::from_vec(&[n], mean.iter().map(|&m| m as f32).collect())?;
        *self.params.get_mut(INPUT_SCALE)? = Tensor::from_vec(&[n], scale)?;
        Ok(())
    }

    fn standardize<T: Scalar>(&self, params: &ParameterSet<T>, frames: &[T]) -> Result<Tensor<T>> {
        let n = self.config.input_len();
        if frames.len() % n != 0 {
            return Err(invalid("frame batch", format!("{} values is not a multiple of {n}", frames.len())));
        }
        let (mean, scale) = (params.get(INPUT_MEAN)?.data(), params.get(INPUT_SCALE)?.data());
        let data = frames.chunks(n).flat_map(|f| f.iter().zip(mean).zip(scale).map(|((&v, &m), &s)| (v - m) / s)).collect();
        Ok(Tensor::from_vec(&[frames.len() / n, n], data)?)
    }

    /// `(1/B) Σ ‖f(V̇_b) − h_b‖²` and its gradients.
    pub fn loss_and_gradients<T: Scalar>(&self, params: &ParameterSet<T>, frames: &[T], targets: &[T]) -> Result<(f64, Gradients<T>)> {
        let x = self.standardize(params, frames)?;
        let (y, cache) = self.network.forward(params, &x, Mode::Train)?;
        check_len("targets", y.len(), targets.len())?;
        let b = x.batch() as f64;
        let mut loss = 0.0;
        let mut dy = Tensor::zeros(y.shape());
        for (i, (&p, &t)) in y.data().iter().zip(targets).enumerate() {
            let r = p - t;
            loss += r.to_f64().unwrap_or(f64::NAN).powi(2);
            dy.data_mut()[i] = T::lit(2.0 / b) * r;
        }
        let (_, grads) = self.network.backward(params, &cache, &dy)?;
        Ok((loss / b, grads))
    }

    /// Latent predictions for a flat batch of filtered frames, `[n, k]`.
    pub fn predict_batch(&self, frames: &[f32]) -> Result<Vec<f32>> {
        let n = self.config.input_len();
        let mut out = Vec::with_capacity(frames.len() / n.max(1) * self.config.latent_dim);
        for chunk in frames.chunks(EVAL_CHUNK * n) {
            let x = self.standardize(&self.params, chunk)?;
            out.extend(self.network.forward(&self.params, &x, Mode::Eval)?.0.into_vec());
        }
        Ok(out)
    }

    /// Latent prediction for one filtered frame.
    pub fn predict(&self, frame: &[f64]) -> Result<Vec<f32>> {
        check_len("frame", self.config.input_len(), frame.len())?;
        let f: Vec<f32> = frame.iter().map(|&v| v as f32).collect();
        self.predict_batch(&f)
    }

    pub fn hash(&self) -> String {
        let mut fp = Fingerprint::new()
            .str(&serde_json::to_string(&self.config).unwrap_or_default())
            .str(&self.vae_hash);
        for (name, p) in self.params.iter() {
            fp = fp.str(name).f32s(p.value.data());
        }
        fp.hex()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = RegressorManifest {
            config: self.config.clone(),
            vae_hash: self.vae_hash.clone(),
            dataset_hash: self.dataset_hash.clone(),
            history: self.history.clone(),
        };
        let extra = serde_json::json!({ "regressor": manifest, "model_hash": self.hash() });
        checkpoint::save(dir, &[&self.network], &self.params, self.config.init_seed, extra)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, params) = checkpoint::load::<f32>(dir)?;
        let reg: RegressorManifest = serde_json::from_value(
            manifest
                .extra
                .get("regressor")
                .cloned()
                .ok_or_else(|| EitError::Format("checkpoint has no regressor manifest".into()))?,
        )?;
        let mut model = Self::new(reg.config)?;
        if manifest.networks.first().map(|n| n.layers()) != Some(model.network.layers()) {
            return Err(EitError::Format("regressor architecture does not match its manifest".into()));
        }
        model.params = params;
        model.params.get(INPUT_MEAN)?;
        model.params.get(INPUT_SCALE)?;
        model.vae_hash = reg.vae_hash;
        model.dataset_hash = reg.dataset_hash;
        model.history = reg.history;
        if let Some(stored) = manifest.extra.get("model_hash").and_then(|v| v.as_str()) {
            let found = model.hash();
            if stored != found {
                return Err(EitError::Incompatible {
                    artifact: "regressor weights".into(),
                    expected: stored.into(),
                    found,
                });
            }
        }
        Ok(model)
    }
}

/// Stage 2: minibatch Adam on the latent regression loss over the training pairs.
///
/// Input standardization is fitted on the training frames first. On a non-finite
/// loss the weights from the last completed epoch are restored.
pub fn train_stage2(model: &mut RegressorModel, set: &LatentTrainingSet, ds: &Dataset, cfg: &TrainConfig) -> Result<RegressorReport> {
    cfg.validate()?;
    if set.latent_dim != model.config.latent_dim {
        return Err(EitError::Incompatible {
            artifact: "latent dimension".into(),
            expected: model.config.latent_dim.to_string(),
            found: set.latent_dim.to_string(),
        });
    }
    if set.dataset_hash != ds.hash() {
        return Err(EitError::Incompatible {
            artifact: "latent targets dataset".into(),
            expected: ds.hash(),
            found: set.dataset_hash.clone(),
        });
    }
    let pool = ds.pairs_in(Split::Train);
    if pool.len() < 2 {
        return Err(invalid("training split", "needs at least two pairs"));
    }
    let frames: Vec<&[f32]> = pool.iter().map(|&n| ds.frame(n)).collect();
    model.fit_standardization(&frames)?;
    model.vae_hash = set.vae_hash.clone();
    model.dataset_hash = set.dataset_hash.clone();
    let adam = Adam::new(cfg.lr);
    let mut report = RegressorReport::default();
    let mut last_good = model.params.clone();
    for epoch in 0..cfg.epochs {
        let mut order = pool.clone();
        order.shuffle(&mut seeded_rng(derive_seed(cfg.seed, "regressor-shuffle", epoch as u64)));
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch) {
            let x: Vec<f32> = batch.iter().flat_map(|&n| ds.frame(n).iter().copied()).collect();
            let t: Vec<f32> = batch.iter().flat_map(|&n| set.target(n).iter().copied()).collect();
            let (loss, grads) = model.loss_and_gradients(&model.params, &x, &t)?;
            if !loss.is_finite() {
                model.params = last_good;
                return Err(EitError::Divergence(format!("regressor loss became {loss} at epoch {epoch}")));
            }
            adam.step(&mut model.params, &grads);
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        report.loss.push(sum / count as f64);
        info!("regressor epoch {epoch}: loss {:.5}", sum / count as f64);
        last_good = model.params.clone();
    }
    report.steps = model.params.step;
    model.history.loss.extend(&report.loss);
    model.history.steps = report.steps;
    Ok(report)
}
