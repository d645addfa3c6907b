//! Forward and backward passes of the VAE on normalized batches.
//!
//! A batch of `B` chunks is stored sample-major as a `(B·H) × c` matrix. The
//! latent of the batch is `(B·h) × d`, which reinterpreted as `B × (h·d)` is
//! the flattened decoder input.

use serde::{Deserialize, Serialize};

use super::VaeModel;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{affine_forward, conv1d_forward, relu_forward, Affine, Conv1d, Relu, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    /// Mean squared error in normalized units.
    pub recon: f64,
    /// Mean KL divergence per latent entry to the unit Gaussian.
    pub kl: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.recon.is_finite() && self.kl.is_finite()
    }
}

fn bias(model: &VaeModel, id: crate::numerics::ParamId) -> &[f64] {
    model.params.value(id).as_slice()
}

fn check_batch(model: &VaeModel, x: &Tensor2, batch: usize) -> Result<()> {
    let cfg = &model.config;
    if x.shape() != (batch * cfg.horizon, cfg.channels) {
        return dim_err(format!(
            "batch of {batch} chunks needs {}x{} input, got {:?}",
            batch * cfg.horizon,
            cfg.channels,
            x.shape()
        ));
    }
    Ok(())
}

/// Posterior mean and log-variance, each `(B·h) × d`.
pub(crate) fn encode_batch(model: &VaeModel, x: &Tensor2, batch: usize) -> Result<(Tensor2, Tensor2)> {
    check_batch(model, x, batch)?;
    let mut a = x.clone();
    for (ids, geom) in model.layout.convs.iter().zip(model.config.conv_geometries()) {
        a = conv1d_forward(&a, batch, model.params.value(ids.weight), bias(model, ids.bias), &geom)?;
        a = relu_forward(&a);
    }
    let head = affine_forward(&a, model.params.value(model.layout.head.weight), bias(model, model.layout.head.bias))?;
    Ok(split_head(&head, model.config.latent_dim))
}

fn split_head(head: &Tensor2, d: usize) -> (Tensor2, Tensor2) {
    let mean = Tensor2::from_fn(head.rows(), d, |r, c| head.get(r, c));
    let logvar = Tensor2::from_fn(head.rows(), d, |r, c| head.get(r, d + c));
    (mean, logvar)
}

/// Decoder output `(B·H) × c` in normalized units for `z` of `(B·h) × d`.
pub(crate) fn decode_batch(model: &VaeModel, z: &Tensor2, batch: usize) -> Result<Tensor2> {
    let cfg = &model.config;
    if z.shape() != (batch * cfg.latent_horizon(), cfg.latent_dim) {
        return dim_err(format!(
            "latent batch must be {}x{}, got {:?}",
            batch * cfg.latent_horizon(),
            cfg.latent_dim,
            z.shape()
        ));
    }
    let mut u = z.clone().reshape(batch, cfg.latent_size())?;
    let last = model.layout.decoder.len() - 1;
    for (i, ids) in model.layout.decoder.iter().enumerate() {
        u = affine_forward(&u, model.params.value(ids.weight), bias(model, ids.bias))?;
        if i < last {
            u = relu_forward(&u);
        }
    }
    u.reshape(batch * cfg.horizon, cfg.channels)
}

fn kl_terms(mean: &Tensor2, logvar: &Tensor2) -> f64 {
    let n = mean.len().max(1) as f64;
    mean.as_slice()
        .iter()
        .zip(logvar.as_slice())
        .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum::<f64>()
        / n
}

fn reparameterize(mean: &Tensor2, logvar: &Tensor2, noise: &Tensor2) -> Result<Tensor2> {
    if noise.shape() != mean.shape() {
        return dim_err(format!("noise {:?} for latent {:?}", noise.shape(), mean.shape()));
    }
    let data = mean
        .as_slice()
        .iter()
        .zip(logvar.as_slice())
        .zip(noise.as_slice())
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    Tensor2::from_vec(mean.rows(), mean.cols(), data)
}

fn recon_mse(out: &Tensor2, target: &Tensor2) -> f64 {
    let n = target.len().max(1) as f64;
    out.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n
}

/// Loss of a normalized batch with the given standard-normal `noise`
/// (`(B·h) × d`), forward only.
pub(crate) fn batch_loss(model: &VaeModel, x: &Tensor2, batch: usize, noise: &Tensor2) -> Result<LossParts> {
    let (mean, logvar) = encode_batch(model, x, batch)?;
    let z = reparameterize(&mean, &logvar, noise)?;
    let out = decode_batch(model, &z, batch)?;
    let recon = recon_mse(&out, x);
    let kl = kl_terms(&mean, &logvar);
    Ok(LossParts { total: recon + model.config.kl_weight * kl, recon, kl })
}

/// Forward and backward pass over one batch; gradients are added to the
/// model's accumulators.
pub(crate) fn batch_loss_and_grad(model: &mut VaeModel, x: &Tensor2, batch: usize, noise: &Tensor2) -> Result<LossParts> {
    check_batch(model, x, batch)?;
    let cfg = model.config.clone();
    let layout = model.layout.clone();
    let params = &mut model.params;

    // encoder
    let mut convs: Vec<Conv1d> = cfg.conv_geometries().into_iter().map(Conv1d::new).collect();
    let mut conv_acts: Vec<Relu> = vec![Relu::new(); convs.len()];
    let mut a = x.clone();
    for ((layer, act), ids) in convs.iter_mut().zip(conv_acts.iter_mut()).zip(&layout.convs) {
        a = layer.forward(&a, batch, params.value(ids.weight), params.value(ids.bias).as_slice())?;
        a = act.forward(&a);
    }
    let mut head = Affine::new();
    let h = head.forward(&a, params.value(layout.head.weight), params.value(layout.head.bias).as_slice())?;
    let d = cfg.latent_dim;
    let (mean, logvar) = split_head(&h, d);
    let z = reparameterize(&mean, &logvar, noise)?;

    // decoder
    let mut dec: Vec<Affine> = vec![Affine::new(); layout.decoder.len()];
    let mut dec_acts: Vec<Relu> = vec![Relu::new(); layout.decoder.len() - 1];
    let mut u = z.reshape(batch, cfg.latent_size())?;
    for (i, ids) in layout.decoder.iter().enumerate() {
        u = dec[i].forward(&u, params.value(ids.weight), params.value(ids.bias).as_slice())?;
        if i < dec_acts.len() {
            u = dec_acts[i].forward(&u);
        }
    }
    let out = u.reshape(batch * cfg.horizon, cfg.channels)?;

    let recon = recon_mse(&out, x);
    let kl = kl_terms(&mean, &logvar);
    let beta = cfg.kl_weight;
    let loss = LossParts { total: recon + beta * kl, recon, kl };
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (recon {}, kl {}) at optimizer step {}",
            recon,
            kl,
            params.step_count()
        )));
    }

    // backward: decoder
    let scale = 2.0 / x.len() as f64;
    let grad_out: Vec<f64> = out.as_slice().iter().zip(x.as_slice()).map(|(a, b)| scale * (a - b)).collect();
    let mut g = Tensor2::from_vec(batch, cfg.horizon * cfg.channels, grad_out)?;
    for i in (0..layout.decoder.len()).rev() {
        if i < dec_acts.len() {
            g = dec_acts[i].backward(&g)?;
        }
        let ids = layout.decoder[i];
        let grads = dec[i].backward(&g, params.value(ids.weight))?;
        params.accumulate_grad(ids.weight, &grads.weight)?;
        params.accumulate_grad_slice(ids.bias, &grads.bias)?;
        g = grads.input;
    }
    let grad_z = g.reshape(batch * cfg.latent_horizon(), d)?;

    // backward: reparameterization and KL
    let m = mean.len() as f64;
    let mut grad_head = Tensor2::zeros(h.rows(), 2 * d);
    for r in 0..h.rows() {
        for c in 0..d {
            let (mu, lv, e, gz) = (mean.get(r, c), logvar.get(r, c), noise.get(r, c), grad_z.get(r, c));
            let sigma = (0.5 * lv).exp();
            grad_head.set(r, c, gz + beta * mu / m);
            grad_head.set(r, d + c, gz * e * 0.5 * sigma + beta * 0.5 * (lv.exp() - 1.0) / m);
        }
    }

    // backward: encoder
    let grads = head.backward(&grad_head, params.value(layout.head.weight))?;
    params.accumulate_grad(layout.head.weight, &grads.weight)?;
    params.accumulate_grad_slice(layout.head.bias, &grads.bias)?;
    let mut g = grads.input;
    for i in (0..convs.len()).rev() {
        g = conv_acts[i].backward(&g)?;
        let ids = layout.convs[i];
        let grads = convs[i].backward(&g, params.value(ids.weight))?;
        params.accumulate_grad(ids.weight, &grads.weight)?;
        params.accumulate_grad_slice(ids.bias, &grads.bias)?;
        g = grads.input;
    }
    Ok(loss)
}
