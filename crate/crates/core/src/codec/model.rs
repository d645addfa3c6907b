use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VaeConfig;
use crate::error::{arg_err, dim_err, Result};
use crate::numerics::{ParamId, ParamStore, Tensor2};
use crate::types::ActionProfile;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub convs: Vec<LayerIds>,
    pub head: LayerIds,
    pub decoder: Vec<LayerIds>,
}

/// One epoch of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub steps: u64,
    /// Loss over the whole training set after the last epoch (or at
    /// initialization when no epoch ran).
    pub final_loss: Option<f64>,
    pub curve: Vec<EpochStats>,
}

/// Trained (or freshly initialized) VAE: parameters, normalization statistics
/// and the profile of the chunks it was built for.
#[derive(Debug, Clone)]
pub struct VaeModel {
    pub(crate) config: VaeConfig,
    pub(crate) profile: Arc<ActionProfile>,
    pub(crate) params: ParamStore,
    pub(crate) layout: Layout,
    pub(crate) norm_mean: Vec<f64>,
    pub(crate) norm_std: Vec<f64>,
    pub(crate) train_meta: TrainMeta,
}

impl VaeModel {
    /// Fan-in scaled uniform weights `U(−1/√fan_in, 1/√fan_in)`, zero biases,
    /// identity normalization.
    pub fn new(config: VaeConfig, profile: Arc<ActionProfile>) -> Result<Self> {
        config.validate()?;
        if profile.channel_count() != config.channels {
            return dim_err(format!(
                "config has {} channels but profile has {}",
                config.channels,
                profile.channel_count()
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let mut layer = |params: &mut ParamStore, name: &str, rows: usize, cols: usize| -> Result<LayerIds> {
            let bound = 1.0 / (cols as f64).sqrt();
            let w = Tensor2::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound));
            Ok(LayerIds {
                weight: params.add(format!("{name}.weight"), w)?,
                bias: params.add(format!("{name}.bias"), Tensor2::zeros(1, rows))?,
            })
        };
        let mut convs = Vec::new();
        for (i, g) in config.conv_geometries().iter().enumerate() {
            let (r, c) = g.weight_shape();
            convs.push(layer(&mut params, &format!("encoder.conv{i}"), r, c)?);
        }
        let head = layer(&mut params, "encoder.head", 2 * config.latent_dim, config.encoder_hidden)?;
        let mut decoder = Vec::new();
        for (i, (fan_in, fan_out)) in config.decoder_dims().into_iter().enumerate() {
            decoder.push(layer(&mut params, &format!("decoder.fc{i}"), fan_out, fan_in)?);
        }
        let c = config.channels;
        Ok(Self {
            train_meta: TrainMeta { seed: config.seed, ..TrainMeta::default() },
            config,
            profile,
            params,
            layout: Layout { convs, head, decoder },
            norm_mean: vec![0.0; c],
            norm_std: vec![1.0; c],
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn profile(&self) -> &Arc<ActionProfile> {
        &self.profile
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn norm_mean(&self) -> &[f64] {
        &self.norm_mean
    }

    pub fn norm_std(&self) -> &[f64] {
        &self.norm_std
    }

    pub fn train_meta(&self) -> &TrainMeta {
        &self.train_meta
    }

    pub fn set_normalization(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        let c = self.config.channels;
        if mean.len() != c || std.len() != c {
            return dim_err(format!("normalization of {}/{} values for {c} channels", mean.len(), std.len()));
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return arg_err("normalization std must be positive and finite");
        }
        self.norm_mean = mean;
        self.norm_std = std;
        Ok(())
    }

    /// Rows of `data` mapped to per-channel z-scores.
    pub(crate) fn normalize(&self, data: &Tensor2) -> Tensor2 {
        let mut out = data.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.norm_mean[c]) / self.norm_std[c];
            }
        }
        out
    }

    pub(crate) fn denormalize(&self, data: &Tensor2) -> Tensor2 {
        let mut out = data.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.norm_std[c] + self.norm_mean[c];
            }
        }
        out
    }
}

/// Per-channel mean and standard deviation over every row of every block.
/// Channels with (near) zero spread get std 1 so they pass through unscaled.
pub fn channel_statistics<'a>(blocks: impl IntoIterator<Item = &'a Tensor2>, channels: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; channels];
    let mut sq = vec![0.0; channels];
    let mut n = 0usize;
    let blocks: Vec<&Tensor2> = blocks.into_iter().collect();
    for b in &blocks {
        for r in 0..b.rows() {
            for (c, v) in b.row(r).iter().enumerate() {
                sum[c] += v;
            }
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    for b in &blocks {
        for r in 0..b.rows() {
            for (c, v) in b.row(r).iter().enumerate() {
                sq[c] += (v - mean[c]).powi(2);
            }
        }
    }
    let std = sq.iter().map(|s| (s / n).sqrt()).map(|s| if s > 1e-6 { s } else { 1.0 }).collect();
    (mean, std)
}
