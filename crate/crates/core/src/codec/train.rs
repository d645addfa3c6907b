use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{channel_statistics, EpochStats, TrainMeta};
use super::{fill_standard_normal, net, VaeConfig, VaeModel};
use crate::error::{arg_err, dim_err, Result};
use crate::numerics::gradcheck::{numeric_gradient, relative_error};
use crate::numerics::{AdamW, LrSchedule, Tensor2};
use crate::types::{ActionChunk, ActionProfile};

const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Capped at a tenth of the total step count for short runs.
    pub warmup_steps: u64,
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 300,
            lr: 1e-3,
            weight_decay: 1e-4,
            warmup_steps: 100,
            final_lr_fraction: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return arg_err("batch_size must be positive");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return arg_err("lr and weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return arg_err("betas must lie in [0, 1) and eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return arg_err("final_lr_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamW {
        AdamW { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gather(x: &Tensor2, order: &[usize], horizon: usize) -> Tensor2 {
    let c = x.cols();
    let mut data = Vec::with_capacity(order.len() * horizon * c);
    for &i in order {
        data.extend_from_slice(&x.as_slice()[i * horizon * c..(i + 1) * horizon * c]);
    }
    Tensor2::from_vec(order.len() * horizon, c, data).expect("gathered rows match")
}

/// Mean loss over the whole set in order, with noise from a fixed stream.
fn dataset_loss(model: &VaeModel, x: &Tensor2, n: usize, batch_size: usize) -> Result<net::LossParts> {
    let cfg = model.config();
    let mut rng = stream_rng(cfg.seed, EVAL_STREAM);
    let order: Vec<usize> = (0..n).collect();
    let mut acc = net::LossParts::default();
    for idx in order.chunks(batch_size) {
        let noise = fill_standard_normal(idx.len() * cfg.latent_horizon(), cfg.latent_dim, &mut rng);
        let l = net::batch_loss(model, &gather(x, idx, cfg.horizon), idx.len(), &noise)?;
        let w = idx.len() as f64 / n as f64;
        acc.total += w * l.total;
        acc.recon += w * l.recon;
        acc.kl += w * l.kl;
    }
    Ok(acc)
}

/// Trains a fresh model on `dataset`; see [`train_with_progress`].
pub fn train(config: &VaeConfig, dataset: &[ActionChunk], hyper: &TrainHyper) -> Result<VaeModel> {
    train_with_progress(config, dataset, hyper, |_| {})
}

/// Normalization statistics come from the dataset; `config.seed` drives
/// initialization, shuffling and reparameterization noise.
pub fn train_with_progress(
    config: &VaeConfig,
    dataset: &[ActionChunk],
    hyper: &TrainHyper,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<VaeModel> {
    hyper.validate()?;
    let first = dataset.first().ok_or_else(|| crate::Error::InvalidArgument("training set is empty".into()))?;
    for c in dataset {
        first.ensure_compatible(c)?;
        if c.horizon() != config.horizon {
            return dim_err(format!("chunk horizon {} differs from config horizon {}", c.horizon(), config.horizon));
        }
    }
    let mut model = VaeModel::new(config.clone(), first.profile().clone())?;
    let (mean, std) = channel_statistics(dataset.iter().map(|c| c.data()), config.channels);
    model.set_normalization(mean, std)?;

    let n = dataset.len();
    let normalized: Vec<Tensor2> = dataset.iter().map(|c| model.normalize(c.data())).collect();
    let x = Tensor2::vstack(&normalized.iter().collect::<Vec<_>>())?;

    let steps_per_epoch = n.div_ceil(hyper.batch_size) as u64;
    let total = steps_per_epoch * hyper.epochs as u64;
    let opt = hyper.optimizer();
    let mut curve = Vec::with_capacity(hyper.epochs);
    if total > 0 {
        let warmup = hyper.warmup_steps.min(total / 10);
        let schedule = LrSchedule::new(hyper.lr, warmup, total, hyper.final_lr_fraction)?;
        let mut shuffle = stream_rng(config.seed, SHUFFLE_STREAM);
        let mut noise_rng = stream_rng(config.seed, NOISE_STREAM);
        let mut order: Vec<usize> = (0..n).collect();
        let mut step = 0u64;
        for epoch in 0..hyper.epochs {
            order.shuffle(&mut shuffle);
            let mut stats = EpochStats { epoch, total: 0.0, recon: 0.0, kl: 0.0, lr: schedule.lr_at(step) };
            for idx in order.chunks(hyper.batch_size) {
                let noise = fill_standard_normal(idx.len() * config.latent_horizon(), config.latent_dim, &mut noise_rng);
                let xb = gather(&x, idx, config.horizon);
                let l = net::batch_loss_and_grad(&mut model, &xb, idx.len(), &noise)?;
                opt.step(&mut model.params, schedule.lr_at(step))?;
                step += 1;
                let w = idx.len() as f64 / n as f64;
                stats.total += w * l.total;
                stats.recon += w * l.recon;
                stats.kl += w * l.kl;
            }
            on_epoch(&stats);
            curve.push(stats);
        }
    }
    let final_loss = dataset_loss(&model, &x, n, hyper.batch_size)?;
    model.train_meta = TrainMeta {
        seed: config.seed,
        epochs: hyper.epochs,
        steps: total,
        final_loss: Some(final_loss.total),
        curve,
    };
    Ok(model)
}

/// Outcome of a whole-model finite-difference gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares the analytic gradient of the batch loss with central differences
/// (step `h`) for every scalar parameter of a model built from `config` with
/// seed `seed`, on a random normalized batch.
pub fn gradient_check(config: &VaeConfig, profile: std::sync::Arc<ActionProfile>, seed: u64, batch: usize, h: f64) -> Result<GradCheckReport> {
    let cfg = VaeConfig { seed, ..config.clone() };
    let mut model = VaeModel::new(cfg.clone(), profile)?;
    let mut rng = stream_rng(seed, EVAL_STREAM);
    let x = fill_standard_normal(batch * cfg.horizon, cfg.channels, &mut rng);
    let noise = fill_standard_normal(batch * cfg.latent_horizon(), cfg.latent_dim, &mut rng);
    // Random biases move pre-activations off the ReLU kink at zero.
    let ids: Vec<_> = model.params.ids().collect();
    for &id in &ids {
        if model.params.name(id).ends_with(".bias") {
            let (r, c) = model.params.value(id).shape();
            *model.params.value_mut(id) = fill_standard_normal(r, c, &mut rng).map(|v| 0.1 * v);
        }
    }
    model.params.zero_grad();
    net::batch_loss_and_grad(&mut model, &x, batch, &noise)?;

    let mut report = GradCheckReport { seed, max_relative_error: 0.0, worst_parameter: String::new(), worst_index: 0, checked: 0 };
    for &id in &ids {
        let analytic = model.params.grad(id).as_slice().to_vec();
        let base = model.params.value(id).as_slice().to_vec();
        let mut probe = model.clone();
        let numeric = numeric_gradient(&base, h, |v| {
            probe.params.value_mut(id).as_mut_slice().copy_from_slice(v);
            net::batch_loss(&probe, &x, batch, &noise).map(|l| l.total).unwrap_or(f64::NAN)
        });
        for (i, (a, nm)) in analytic.iter().zip(&numeric).enumerate() {
            let e = relative_error(*a, *nm);
            if !(e <= report.max_relative_error) {
                report.max_relative_error = e;
                report.worst_parameter = model.params.name(id).to_string();
                report.worst_index = i;
            }
        }
        report.checked += analytic.len();
    }
    Ok(report)
}
