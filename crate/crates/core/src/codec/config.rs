use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::numerics::Conv1dGeometry;

/// Architecture of the action-chunk VAE.
///
/// The encoder is a stack of 1D convolutions (kernel 5, zero padding 2) of
/// which the first `log2(compression)` have stride 2, so each halves the
/// horizon. A per-step linear head produces the mean and log-variance of a
/// diagonal Gaussian with `latent_dim` entries per latent step. The decoder
/// is an MLP from the flattened latent to the flattened chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    /// Chunk length H.
    pub horizon: usize,
    /// Action channels c.
    pub channels: usize,
    /// Temporal compression factor f = H / h.
    pub compression: usize,
    /// Latent entries per latent step d.
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    /// Minimum number of conv layers; more are added when `compression` needs
    /// more stride-2 layers.
    pub encoder_layers: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Affine layers in the decoder, counting the output layer.
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    /// β in `recon + β·kl`.
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            horizon: 48,
            channels: 7,
            compression: 4,
            latent_dim: 10,
            encoder_hidden: 32,
            encoder_layers: 2,
            kernel: 5,
            stride: 2,
            decoder_layers: 2,
            decoder_hidden: 512,
            kl_weight: 1e-6,
            seed: 0,
        }
    }
}

impl VaeConfig {
    /// The small configuration used for whole-model gradient checks. Its KL
    /// weight is large so the prior term shows up in the gradients.
    pub fn tiny(channels: usize) -> Self {
        Self {
            horizon: 8,
            channels,
            compression: 2,
            latent_dim: 2,
            encoder_hidden: 4,
            decoder_hidden: 4,
            kl_weight: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("compression", self.compression),
            ("latent_dim", self.latent_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_layers", self.encoder_layers),
            ("kernel", self.kernel),
            ("decoder_layers", self.decoder_layers),
            ("decoder_hidden", self.decoder_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return arg_err(format!("vae config: {name} must be positive"));
        }
        if self.stride < 2 {
            return arg_err("vae config: stride must be at least 2");
        }
        if self.kernel % 2 == 0 {
            return arg_err("vae config: kernel must be odd for symmetric padding");
        }
        if self.strided_layers().is_none() {
            return arg_err(format!(
                "vae config: compression {} is not a power of stride {}",
                self.compression, self.stride
            ));
        }
        if self.horizon % self.compression != 0 {
            return arg_err(format!(
                "vae config: horizon {} not divisible by compression {}",
                self.horizon, self.compression
            ));
        }
        if !(self.kl_weight.is_finite() && self.kl_weight >= 0.0) {
            return arg_err("vae config: kl_weight must be non-negative");
        }
        Ok(())
    }

    /// Number of stride-2 layers, if `compression` is a power of `stride`.
    pub fn strided_layers(&self) -> Option<usize> {
        let mut f = self.compression;
        let mut n = 0;
        while f > 1 {
            if f % self.stride != 0 {
                return None;
            }
            f /= self.stride;
            n += 1;
        }
        Some(n)
    }

    pub fn latent_horizon(&self) -> usize {
        self.horizon / self.compression
    }

    pub fn latent_size(&self) -> usize {
        self.latent_horizon() * self.latent_dim
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn conv_geometries(&self) -> Vec<Conv1dGeometry> {
        let strided = self.strided_layers().unwrap_or(0);
        let n = self.encoder_layers.max(strided);
        (0..n)
            .map(|i| Conv1dGeometry {
                in_channels: if i == 0 { self.channels } else { self.encoder_hidden },
                out_channels: self.encoder_hidden,
                kernel: self.kernel,
                stride: if i < strided { self.stride } else { 1 },
                padding: self.padding(),
            })
            .collect()
    }

    /// `(in, out)` of each decoder affine layer.
    pub fn decoder_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.decoder_layers);
        let mut width = self.latent_size();
        for _ in 1..self.decoder_layers {
            dims.push((width, self.decoder_hidden));
            width = self.decoder_hidden;
        }
        dims.push((width, self.horizon * self.channels));
        dims
    }
}
