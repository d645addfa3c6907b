//! Variational autoencoder over action chunks.
//!
//! ```text
//! chunk (H×c) ─z-score─▶ conv/ReLU ×n ─▶ head ─▶ (μ, log σ²) (h×d)
//!                                                   │ z = μ + σ⊙ε
//! chunk (H×c) ◀─denorm── fc ◀─ ReLU ◀─ fc ◀─────────┘ (flattened h·d)
//! ```
//!
//! Training minimizes `mse + β·kl` in z-scored units with AdamW and a
//! warmup + cosine schedule. Inference ([`roundtrip`]) uses the posterior
//! mean and is fully deterministic.

mod config;
mod model;
mod net;
mod persist;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use config::VaeConfig;
pub use model::{channel_statistics, EpochStats, TrainMeta, VaeModel};
pub use net::LossParts;
pub use persist::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use train::{gradient_check, train, train_with_progress, GradCheckReport, TrainHyper};

use crate::error::{dim_err, Result};
use crate::numerics::Tensor2;
use crate::types::{ActionChunk, LatentChunk};

/// Diagonal Gaussian posterior over an h×d latent.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    pub mean: Tensor2,
    pub log_variance: Tensor2,
    pub compression: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SampleMode {
    Mean,
    Reparameterized { seed: u64 },
}

/// `rows × cols` standard-normal draws from a seeded stream, row-major.
pub fn standard_normal(rows: usize, cols: usize, seed: u64) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fill_standard_normal(rows, cols, &mut rng)
}

pub(crate) fn fill_standard_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn check_chunk(model: &VaeModel, chunk: &ActionChunk) -> Result<()> {
    let cfg = model.config();
    if chunk.horizon() != cfg.horizon || chunk.channels() != cfg.channels {
        return dim_err(format!(
            "model expects {}x{} chunks, got {}x{}",
            cfg.horizon,
            cfg.channels,
            chunk.horizon(),
            chunk.channels()
        ));
    }
    Ok(())
}

/// Posterior parameters of `chunk`; `H / f` latent rows.
pub fn encode(model: &VaeModel, chunk: &ActionChunk) -> Result<GaussianLatent> {
    check_chunk(model, chunk)?;
    let x = model.normalize(chunk.data());
    let (mean, log_variance) = net::encode_batch(model, &x, 1)?;
    Ok(GaussianLatent { mean, log_variance, compression: model.config().compression })
}

pub fn sample(latent: &GaussianLatent, mode: SampleMode) -> Result<LatentChunk> {
    match mode {
        SampleMode::Mean => LatentChunk::new(latent.mean.clone(), latent.compression),
        SampleMode::Reparameterized { seed } => {
            let eps = standard_normal(latent.mean.rows(), latent.mean.cols(), seed);
            let data = latent
                .mean
                .as_slice()
                .iter()
                .zip(latent.log_variance.as_slice())
                .zip(eps.as_slice())
                .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
                .collect();
            LatentChunk::new(Tensor2::from_vec(latent.mean.rows(), latent.mean.cols(), data)?, latent.compression)
        }
    }
}

/// Denormalized H×c chunk starting at tick 0.
pub fn decode(model: &VaeModel, z: &LatentChunk) -> Result<ActionChunk> {
    let cfg = model.config();
    if z.data().shape() != (cfg.latent_horizon(), cfg.latent_dim) || z.compression() != cfg.compression {
        return dim_err(format!(
            "model expects {}x{} latents with f = {}, got {:?} with f = {}",
            cfg.latent_horizon(),
            cfg.latent_dim,
            cfg.compression,
            z.data().shape(),
            z.compression()
        ));
    }
    let out = net::decode_batch(model, z.data(), 1)?;
    ActionChunk::new(model.denormalize(&out), model.profile().clone(), 0)
}

/// `decode(mean(encode(chunk)))`, keeping the chunk's start tick.
pub fn roundtrip(model: &VaeModel, chunk: &ActionChunk) -> Result<ActionChunk> {
    let latent = encode(model, chunk)?;
    let z = sample(&latent, SampleMode::Mean)?;
    Ok(decode(model, &z)?.with_start_tick(chunk.start_tick()))
}

/// Round trip of many chunks in one batched pass.
pub fn roundtrip_many(model: &VaeModel, chunks: &[ActionChunk]) -> Result<Vec<ActionChunk>> {
    if chunks.is_empty() {
        return Ok(Vec::new());
    }
    for c in chunks {
        check_chunk(model, c)?;
    }
    let normalized: Vec<Tensor2> = chunks.iter().map(|c| model.normalize(c.data())).collect();
    let refs: Vec<&Tensor2> = normalized.iter().collect();
    let x = Tensor2::vstack(&refs)?;
    let (mean, _) = net::encode_batch(model, &x, chunks.len())?;
    let out = model.denormalize(&net::decode_batch(model, &mean, chunks.len())?);
    let h = model.config().horizon;
    chunks
        .iter()
        .enumerate()
        .map(|(i, c)| ActionChunk::new(out.slice_rows(i * h, (i + 1) * h), model.profile().clone(), c.start_tick()))
        .collect()
}

/// Training objective of a single chunk with reparameterization noise drawn
/// from `seed`.
pub fn loss(model: &VaeModel, chunk: &ActionChunk, seed: u64) -> Result<LossParts> {
    check_chunk(model, chunk)?;
    let x = model.normalize(chunk.data());
    let cfg = model.config();
    let noise = standard_normal(cfg.latent_horizon(), cfg.latent_dim, seed);
    net::batch_loss(model, &x, 1, &noise)
}

/// Closed-form `KL(N(μ, e^lv) ‖ N(0, 1))` averaged over entries.
pub fn kl_to_unit(mean: &Tensor2, log_variance: &Tensor2) -> f64 {
    let n = mean.len().max(1) as f64;
    mean.as_slice()
        .iter()
        .zip(log_variance.as_slice())
        .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::types::ActionProfile;

    fn profile() -> Arc<ActionProfile> {
        Arc::new(ActionProfile::default())
    }

    fn wavy_chunk(phase: f64) -> ActionChunk {
        ActionChunk::new(
            Tensor2::from_fn(48, 7, |r, c| ((r as f64) * 0.1 + phase + c as f64).sin() * 10.0),
            profile(),
            0,
        )
        .unwrap()
    }

    #[test]
    fn shape_law_for_every_compression() {
        for f in [1, 2, 4, 8, 16] {
            let cfg = VaeConfig { compression: f, decoder_hidden: 16, ..VaeConfig::default() };
            let model = VaeModel::new(cfg, profile()).unwrap();
            let lat = encode(&model, &wavy_chunk(0.0)).unwrap();
            assert_eq!(lat.mean.shape(), (48 / f, 10));
            assert_eq!(lat.log_variance.shape(), (48 / f, 10));
            let out = decode(&model, &sample(&lat, SampleMode::Mean).unwrap()).unwrap();
            assert_eq!(out.data().shape(), (48, 7));
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let model = VaeModel::new(VaeConfig { decoder_hidden: 16, ..VaeConfig::default() }, profile()).unwrap();
        let a = encode(&model, &wavy_chunk(0.3)).unwrap();
        let b = encode(&model, &wavy_chunk(0.3)).unwrap();
        assert_eq!(a, b);
        let ra = roundtrip(&model, &wavy_chunk(0.3)).unwrap();
        let rb = roundtrip(&model, &wavy_chunk(0.3)).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn batched_roundtrip_matches_single() {
        let model = VaeModel::new(VaeConfig { decoder_hidden: 16, ..VaeConfig::default() }, profile()).unwrap();
        let chunks: Vec<ActionChunk> = (0..3).map(|i| wavy_chunk(i as f64).with_start_tick(i * 10)).collect();
        let many = roundtrip_many(&model, &chunks).unwrap();
        for (c, m) in chunks.iter().zip(&many) {
            let single = roundtrip(&model, c).unwrap();
            assert_eq!(single.start_tick(), m.start_tick());
            for (a, b) in single.data().as_slice().iter().zip(m.data().as_slice()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_wrong_shapes() {
        let model = VaeModel::new(VaeConfig { decoder_hidden: 16, ..VaeConfig::default() }, profile()).unwrap();
        let short = ActionChunk::new(Tensor2::zeros(40, 7), profile(), 0).unwrap();
        assert!(encode(&model, &short).is_err());
        let z = LatentChunk::new(Tensor2::zeros(6, 10), 8).unwrap();
        assert!(decode(&model, &z).is_err());
    }

    #[test]
    fn zero_decoder_outputs_channel_means() {
        let mut model = VaeModel::new(VaeConfig { decoder_hidden: 16, ..VaeConfig::default() }, profile()).unwrap();
        let mean: Vec<f64> = (0..7).map(|c| c as f64 * 3.0 - 1.0).collect();
        model.set_normalization(mean.clone(), vec![2.0; 7]).unwrap();
        let ids: Vec<_> = model.params().ids().filter(|&id| model.params().name(id).starts_with("decoder")).collect();
        for id in ids {
            model.params_mut().value_mut(id).fill(0.0);
        }
        let out = roundtrip(&model, &wavy_chunk(1.0)).unwrap();
        for r in 0..48 {
            assert_eq!(out.row(r), mean.as_slice());
        }
    }

    #[test]
    fn sampling_modes() {
        let lat = GaussianLatent {
            mean: Tensor2::from_fn(3, 2, |r, c| (r + c) as f64),
            log_variance: Tensor2::filled(3, 2, -50.0),
            compression: 4,
        };
        let s = sample(&lat, SampleMode::Reparameterized { seed: 9 }).unwrap();
        for (a, b) in s.data().as_slice().iter().zip(lat.mean.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(sample(&lat, SampleMode::Mean).unwrap().data(), &lat.mean);

        let unit = GaussianLatent { mean: Tensor2::zeros(3, 2), log_variance: Tensor2::zeros(3, 2), compression: 4 };
        let s = sample(&unit, SampleMode::Reparameterized { seed: 42 }).unwrap();
        assert_eq!(s.data(), &standard_normal(3, 2, 42));
    }

    #[test]
    fn reparameterized_samples_have_unit_spread() {
        let unit = GaussianLatent { mean: Tensor2::zeros(100_000, 1), log_variance: Tensor2::zeros(100_000, 1), compression: 1 };
        let s = sample(&unit, SampleMode::Reparameterized { seed: 2024 }).unwrap();
        let v = s.data().as_slice();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!((0.99..=1.01).contains(&std), "{std}");
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(kl_to_unit(&Tensor2::zeros(2, 2), &Tensor2::zeros(2, 2)), 0.0);
        assert!((kl_to_unit(&Tensor2::filled(1, 1, 1.0), &Tensor2::zeros(1, 1)) - 0.5).abs() < 1e-15);
    }
}
