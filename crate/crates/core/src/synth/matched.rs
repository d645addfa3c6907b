use serde::Serialize;

use super::noise::{emulate_policy, NoiseModel};
use crate::codec::VaeModel;
use crate::error::{Error, Result};
use crate::metrics::deviation;
use crate::types::ActionChunk;

/// Allowed relative mismatch between the two deviations.
pub const MATCH_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct MatchedPair {
    #[serde(skip)]
    pub action_noised: ActionChunk,
    #[serde(skip)]
    pub latent_noised: ActionChunk,
    pub latent_sigma: f64,
    pub action_deviation_xyz: f64,
    pub latent_deviation_xyz: f64,
}

/// Action-space noise of σ `sigma_action` mm, and latent noise calibrated by
/// bisection so both outputs have the same xyz deviation from `truth`.
/// Both sides draw from `seed`; the latent draw is fixed while σ_z varies.
pub fn matched_energy_pair(truth: &ActionChunk, sigma_action: f64, model: &VaeModel, seed: u64) -> Result<MatchedPair> {
    let action_noised = emulate_policy(truth, &NoiseModel::gaussian(sigma_action, seed), None)?;
    let target = deviation(&action_noised, truth)?.xyz;
    let latent_at = |sigma: f64| -> Result<(ActionChunk, f64)> {
        let out = emulate_policy(truth, &NoiseModel::latent(sigma, seed), Some(model))?;
        let d = deviation(&out, truth)?.xyz;
        Ok((out, d))
    };
    let (base, base_dev) = latent_at(0.0)?;
    if sigma_action == 0.0 {
        return Ok(MatchedPair {
            action_noised,
            latent_noised: base,
            latent_sigma: 0.0,
            action_deviation_xyz: target,
            latent_deviation_xyz: base_dev,
        });
    }
    if base_dev >= target * (1.0 + MATCH_TOLERANCE) {
        return Err(Error::Calibration(format!(
            "reconstruction error {base_dev:.4} mm already exceeds the action-noise deviation {target:.4} mm"
        )));
    }
    let (mut lo, mut hi) = (0.0, 0.05);
    let mut best = (base, base_dev, 0.0);
    let mut bracketed = false;
    for _ in 0..40 {
        let (out, d) = latent_at(hi)?;
        if d >= target {
            best = (out, d, hi);
            bracketed = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !bracketed {
        return Err(Error::Calibration(format!(
            "latent noise up to σ = {hi} did not reach deviation {target:.4} mm"
        )));
    }
    for _ in 0..60 {
        if (best.1 - target).abs() <= 0.5 * MATCH_TOLERANCE * target {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (out, d) = latent_at(mid)?;
        if (d - target).abs() < (best.1 - target).abs() {
            best = (out.clone(), d, mid);
        }
        if d < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - target).abs() > MATCH_TOLERANCE * target {
        return Err(Error::Calibration(format!(
            "bisection ended at deviation {:.4} mm for target {target:.4} mm",
            best.1
        )));
    }
    Ok(MatchedPair {
        action_noised,
        latent_noised: best.0,
        latent_sigma: best.2,
        action_deviation_xyz: target,
        latent_deviation_xyz: best.1,
    })
}
