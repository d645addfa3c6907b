use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{self, SampleMode, VaeModel};
use crate::error::{arg_err, Error, Result};
use crate::numerics::Tensor2;
use crate::types::{ActionChunk, LatentChunk};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    /// White noise on the action entries; magnitude is σ in mm.
    GaussianAction,
    /// Snap to a grid; magnitude is the bin width in mm.
    Quantize,
    /// White noise on the posterior mean; magnitude is σ in latent units.
    LatentGaussian,
    /// Subsample, perturb and re-interpolate; magnitude is the source rate
    /// in Hz.
    LowfreqInterp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    #[default]
    Linear,
    /// Natural cubic spline through the knots.
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub magnitude: f64,
    pub interp: Interp,
    pub seed: u64,
    /// Orientation scale in degrees per mm of position magnitude.
    pub rpy_per_mm: f64,
    /// Position noise σ (mm) added at the source rate by `LowfreqInterp`.
    pub lowfreq_sigma_mm: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { kind: NoiseKind::None, magnitude: 0.0, interp: Interp::Linear, seed: 0, rpy_per_mm: 0.25, lowfreq_sigma_mm: 0.0 }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn gaussian(sigma_mm: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::GaussianAction, magnitude: sigma_mm, seed, ..Self::default() }
    }

    pub fn quantize(bin_mm: f64) -> Self {
        Self { kind: NoiseKind::Quantize, magnitude: bin_mm, ..Self::default() }
    }

    pub fn latent(sigma: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::LatentGaussian, magnitude: sigma, seed, ..Self::default() }
    }

    pub fn lowfreq(source_hz: f64, interp: Interp, sigma_mm: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::LowfreqInterp, magnitude: source_hz, interp, seed, lowfreq_sigma_mm: sigma_mm, ..Self::default() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0) {
            return arg_err(format!("noise magnitude must be non-negative, got {}", self.magnitude));
        }
        if !(self.rpy_per_mm.is_finite() && self.rpy_per_mm >= 0.0) || !(self.lowfreq_sigma_mm.is_finite() && self.lowfreq_sigma_mm >= 0.0) {
            return arg_err("noise scales must be non-negative");
        }
        if self.kind == NoiseKind::Quantize && self.magnitude == 0.0 {
            return arg_err("quantization bin must be positive");
        }
        Ok(())
    }
}

/// Adds position noise σ and orientation noise `ratio·σ` to `data`;
/// gripper channels are untouched.
fn perturb(data: &mut Tensor2, chunk: &ActionChunk, sigma_mm: f64, ratio: f64, rng: &mut ChaCha8Rng) {
    if sigma_mm == 0.0 {
        return;
    }
    let p = chunk.profile();
    let pos = Normal::new(0.0, sigma_mm).expect("valid sigma");
    let rot = Normal::new(0.0, sigma_mm * ratio).expect("valid sigma");
    for r in 0..data.rows() {
        let row = data.row_mut(r);
        for &i in p.position_indices() {
            row[i] += pos.sample(rng);
        }
        for &i in p.orientation_indices() {
            row[i] += rot.sample(rng);
        }
    }
}

/// Snaps every entry to a grid: `bin` mm for position and gripper channels,
/// `bin·rpy_per_mm` degrees for orientation channels.
pub fn quantize(chunk: &ActionChunk, bin_mm: f64, rpy_per_mm: f64) -> Result<ActionChunk> {
    if !(bin_mm.is_finite() && bin_mm > 0.0) {
        return arg_err("quantization bin must be positive");
    }
    let p = chunk.profile().clone();
    let mut data = chunk.data().clone();
    let bins: Vec<f64> = (0..p.channel_count())
        .map(|c| if p.is_orientation(c) && rpy_per_mm > 0.0 { bin_mm * rpy_per_mm } else { bin_mm })
        .collect();
    for r in 0..data.rows() {
        for (c, v) in data.row_mut(r).iter_mut().enumerate() {
            *v = (*v / bins[c]).round() * bins[c];
        }
    }
    ActionChunk::new(data, p, chunk.start_tick())
}

/// Second derivatives of the natural cubic spline through `(xs, ys)`.
fn natural_spline_moments(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut lower = vec![0.0; k];
    for i in 1..n - 1 {
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        lower[i - 1] = h0;
        diag[i - 1] = 2.0 * (h0 + h1);
        upper[i - 1] = h1;
        rhs[i - 1] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
    }
    for i in 1..k {
        let w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for i in (0..k - 1).rev() {
        m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
    }
    m
}

/// Interpolates knot values `ys` at integer positions `xs` onto `0..len`.
/// Past the last knot the end segment is continued linearly (with the end
/// slope for cubic splines).
pub fn interpolate_knots(xs: &[f64], ys: &[f64], len: usize, interp: Interp) -> Vec<f64> {
    let n = xs.len();
    if n == 1 {
        return vec![ys[0]; len];
    }
    let moments = match interp {
        Interp::Linear => vec![0.0; n],
        Interp::Cubic => natural_spline_moments(xs, ys),
    };
    let slope_at = |i: usize, at_end: bool| -> f64 {
        let h = xs[i + 1] - xs[i];
        let lin = (ys[i + 1] - ys[i]) / h;
        if at_end {
            lin + h * (2.0 * moments[i + 1] + moments[i]) / 6.0
        } else {
            lin - h * (2.0 * moments[i] + moments[i + 1]) / 6.0
        }
    };
    (0..len)
        .map(|t| {
            let x = t as f64;
            if x >= xs[n - 1] {
                return ys[n - 1] + slope_at(n - 2, true) * (x - xs[n - 1]);
            }
            if x <= xs[0] {
                return ys[0] + slope_at(0, false) * (x - xs[0]);
            }
            let i = xs.partition_point(|&k| k <= x) - 1;
            let h = xs[i + 1] - xs[i];
            let a = (xs[i + 1] - x) / h;
            let b = (x - xs[i]) / h;
            a * ys[i] + b * ys[i + 1] + ((a.powi(3) - a) * moments[i] + (b.powi(3) - b) * moments[i + 1]) * h * h / 6.0
        })
        .collect()
}

fn lowfreq(chunk: &ActionChunk, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> Result<ActionChunk> {
    let hz = chunk.profile().control_frequency_hz();
    let rate = noise.magnitude;
    let ratio = hz / rate;
    if !(rate > 0.0 && rate <= hz && (ratio - ratio.round()).abs() < 1e-9) {
        return arg_err(format!("source rate {rate} Hz must divide the control rate {hz} Hz"));
    }
    let step = ratio.round() as usize;
    let h = chunk.horizon();
    let knot_rows: Vec<usize> = (0..h).step_by(step).collect();
    let mut knots = Tensor2::from_fn(knot_rows.len(), chunk.channels(), |r, c| chunk.data().get(knot_rows[r], c));
    perturb(&mut knots, chunk, noise.lowfreq_sigma_mm, noise.rpy_per_mm, rng);
    let xs: Vec<f64> = knot_rows.iter().map(|&r| r as f64).collect();
    let mut out = Tensor2::zeros(h, chunk.channels());
    for c in 0..chunk.channels() {
        let values = interpolate_knots(&xs, &knots.column(c), h, noise.interp);
        for (r, v) in values.into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    ActionChunk::new(out, chunk.profile().clone(), chunk.start_tick())
}

fn latent_noised(truth: &ActionChunk, sigma: f64, model: &VaeModel, rng: &mut ChaCha8Rng) -> Result<ActionChunk> {
    let latent = codec::encode(model, truth)?;
    let mut z = codec::sample(&latent, SampleMode::Mean)?.data().clone();
    if sigma > 0.0 {
        let dist = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in z.as_mut_slice() {
            *v += dist.sample(rng);
        }
    }
    let out = codec::decode(model, &LatentChunk::new(z, latent.compression)?)?;
    Ok(out.with_start_tick(truth.start_tick()))
}

/// Emulated policy output for the ground-truth chunk `truth`.
pub fn emulate_policy(truth: &ActionChunk, noise: &NoiseModel, model: Option<&VaeModel>) -> Result<ActionChunk> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    match noise.kind {
        NoiseKind::None => Ok(truth.clone()),
        NoiseKind::GaussianAction => {
            let mut data = truth.data().clone();
            perturb(&mut data, truth, noise.magnitude, noise.rpy_per_mm, &mut rng);
            ActionChunk::new(data, truth.profile().clone(), truth.start_tick())
        }
        NoiseKind::Quantize => quantize(truth, noise.magnitude, noise.rpy_per_mm),
        NoiseKind::LatentGaussian => {
            let model = model.ok_or_else(|| Error::InvalidArgument("latent noise needs a trained model".into()))?;
            latent_noised(truth, noise.magnitude, model, &mut rng)
        }
        NoiseKind::LowfreqInterp => lowfreq(truth, noise, &mut rng),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::metrics::{deviation, jerk, mean_row_norm, ChannelSet, TimeUnit};
    use crate::synth::{generate_trajectory, TaskKind, TaskSpec};
    use crate::types::ActionProfile;

    fn ramp(step: f64) -> ActionChunk {
        let p = Arc::new(ActionProfile::default());
        ActionChunk::new(Tensor2::from_fn(48, 7, |r, c| if c == 0 { 0.25 + step * r as f64 } else { 0.0 }), p, 0).unwrap()
    }

    fn smooth_chunk() -> ActionChunk {
        generate_trajectory(&TaskSpec::new(TaskKind::WipeArc, 4.0, 2)).unwrap().window(30, 48).unwrap()
    }

    #[test]
    fn none_is_identity() {
        let c = smooth_chunk();
        assert_eq!(emulate_policy(&c, &NoiseModel::none(), None).unwrap(), c);
    }

    #[test]
    fn quantized_ramp_is_a_staircase() {
        let clean = ramp(0.5);
        let q = emulate_policy(&clean, &NoiseModel::quantize(2.0), None).unwrap();
        let x = q.data().column(0);
        let mut rises = Vec::new();
        for t in 1..48 {
            let d = x[t] - x[t - 1];
            if d != 0.0 {
                assert!((d - 2.0).abs() < 1e-12);
                rises.push(t);
            }
        }
        assert!(rises.windows(2).all(|w| w[1] - w[0] == 4), "{rises:?}");
        let jq = mean_row_norm(&jerk(&q, &ChannelSet::Position, TimeUnit::Step).unwrap());
        let jc = mean_row_norm(&jerk(&clean, &ChannelSet::Position, TimeUnit::Step).unwrap());
        assert!(jc < 1e-12 && jq > jc);
    }

    #[test]
    fn quantize_is_idempotent() {
        let c = smooth_chunk();
        let once = quantize(&c, 2.0, 0.25).unwrap();
        assert_eq!(quantize(&once, 2.0, 0.25).unwrap(), once);
    }

    #[test]
    fn gaussian_noise_statistics() {
        let c = smooth_chunk();
        let n = emulate_policy(&c, &NoiseModel::gaussian(0.5, 7), None).unwrap();
        assert_eq!(n.data().shape(), c.data().shape());
        let d = deviation(&n, &c).unwrap();
        // E|N(0, σ²)| = σ·sqrt(2/π)
        assert!((d.xyz - 0.5 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.06, "{d:?}");
        assert!((d.rpy - 0.125 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.02, "{d:?}");
        assert_eq!(n.data().column(6), c.data().column(6));
        let again = emulate_policy(&c, &NoiseModel::gaussian(0.5, 7), None).unwrap();
        assert_eq!(n, again);
    }

    #[test]
    fn lowfreq_linear_hits_knots_and_is_piecewise_linear() {
        let c = smooth_chunk();
        let out = emulate_policy(&c, &NoiseModel::lowfreq(15.0, Interp::Linear, 0.0, 0), None).unwrap();
        for r in (0..48).step_by(4) {
            assert_eq!(out.row(r), c.row(r));
        }
        let dev = deviation(&out, &c).unwrap();
        assert!(dev.xyz > 0.0);
        // second differences vanish strictly inside each 4-step span
        let x = out.data().column(0);
        for t in 1..44 {
            if t % 4 != 0 {
                assert!((x[t + 1] - 2.0 * x[t] + x[t - 1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cubic_spline_reproduces_cubic_interior_and_knots() {
        let xs: Vec<f64> = (0..12).map(|i| (i * 4) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let v = interpolate_knots(&xs, &ys, 48, Interp::Cubic);
        for (t, y) in v.iter().enumerate() {
            assert!((y - (3.0 * t as f64 - 1.0)).abs() < 1e-9);
        }
        let ys: Vec<f64> = xs.iter().map(|x| (x * 0.2).sin()).collect();
        let v = interpolate_knots(&xs, &ys, 48, Interp::Cubic);
        for (x, y) in xs.iter().zip(&ys) {
            assert!((v[*x as usize] - y).abs() < 1e-12);
        }
    }

    #[test]
    fn lowfreq_rejects_non_divisor_rate() {
        let c = smooth_chunk();
        assert!(emulate_policy(&c, &NoiseModel::lowfreq(7.0, Interp::Linear, 0.0, 0), None).is_err());
    }

    #[test]
    fn latent_noise_needs_model() {
        assert!(emulate_policy(&smooth_chunk(), &NoiseModel::latent(0.1, 0), None).is_err());
    }
}
