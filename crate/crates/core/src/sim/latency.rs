use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run, SimConfig};
use crate::codec::VaeModel;
use crate::error::{arg_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Jitter {
    #[default]
    None,
    /// Each component scaled by `1 + u`, `u ~ U(−percent/100, percent/100)`.
    Uniform { percent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub network_ms: f64,
    pub policy_ms: f64,
    pub vae_ms: f64,
    pub jitter: Jitter,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self { network_ms: 86.87, policy_ms: 215.72, vae_ms: 2.30, jitter: Jitter::None }
    }
}

impl LatencyModel {
    pub fn zero() -> Self {
        Self { network_ms: 0.0, policy_ms: 0.0, vae_ms: 0.0, jitter: Jitter::None }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.network_ms, self.policy_ms, self.vae_ms];
        if parts.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return arg_err("latency components must be non-negative");
        }
        if let Jitter::Uniform { percent } = self.jitter {
            if !(0.0..=100.0).contains(&percent) {
                return arg_err(format!("jitter of {percent}% must lie in [0, 100]"));
            }
        }
        Ok(())
    }

    pub fn nominal_total_ms(&self) -> f64 {
        self.network_ms + self.policy_ms + self.vae_ms
    }

    pub fn max_total_ms(&self) -> f64 {
        match self.jitter {
            Jitter::None => self.nominal_total_ms(),
            Jitter::Uniform { percent } => self.nominal_total_ms() * (1.0 + percent / 100.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub network_ms: f64,
    pub policy_ms: f64,
    pub vae_ms: f64,
}

impl LatencySample {
    pub fn total_ms(&self) -> f64 {
        self.network_ms + self.policy_ms + self.vae_ms
    }
}

pub(crate) fn sample(model: &LatencyModel, rng: &mut ChaCha8Rng) -> LatencySample {
    let mut draw = |v: f64| match model.jitter {
        Jitter::None => v,
        Jitter::Uniform { percent } if percent > 0.0 => {
            let p = percent / 100.0;
            v * (1.0 + rng.random_range(-p..=p))
        }
        Jitter::Uniform { .. } => v,
    };
    LatencySample { network_ms: draw(model.network_ms), policy_ms: draw(model.policy_ms), vae_ms: draw(model.vae_ms) }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyBreakdown {
    pub draws: usize,
    pub network_ms: f64,
    pub policy_ms: f64,
    pub vae_ms: f64,
    pub total_ms: f64,
    /// Mean wall time from inference start to chunk switch in one simulated
    /// run, after rounding up to whole ticks.
    pub realized_switch_delay_ms: Option<f64>,
}

/// Mean component latencies over `draws` samples and, when `simulate` is
/// set, the realized switch delay of one run of `config`.
pub fn latency_breakdown(config: &SimConfig, draws: usize, simulate: bool, model: Option<&VaeModel>) -> Result<LatencyBreakdown> {
    config.latency.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(7);
    let n = draws.max(1);
    let (mut net, mut pol, mut vae) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let s = sample(&config.latency, &mut rng);
        net += s.network_ms;
        pol += s.policy_ms;
        vae += s.vae_ms;
    }
    let n_f = n as f64;
    let (mut net, mut pol, mut vae) = (net / n_f, pol / n_f, vae / n_f);
    if config.latency.jitter == Jitter::None {
        let l = &config.latency;
        (net, pol, vae) = (l.network_ms, l.policy_ms, l.vae_ms);
    }
    let realized = if simulate {
        let trace = run(config, model)?;
        let d = &trace.totals.switch_delays_ticks;
        (!d.is_empty()).then(|| d.iter().sum::<u64>() as f64 / d.len() as f64 * 1000.0 / config.control_hz)
    } else {
        None
    };
    Ok(LatencyBreakdown {
        draws: n,
        network_ms: net,
        policy_ms: pol,
        vae_ms: vae,
        total_ms: net + pol + vae,
        realized_switch_delay_ms: realized,
    })
}
