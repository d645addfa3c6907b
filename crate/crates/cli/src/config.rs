use std::path::{Path, PathBuf};

use latact::sim::{ExecutorModel, SimConfig};
use latact::synth::Interp;
use latact::{NoiseModel, Strategy, TaskKind, TaskSpec, TrainHyper, VaeConfig};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, io_err, CliResult};

/// Which protocol an evaluation entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Per-chunk deviation and smoothness of an emulated policy.
    Policy,
    /// Open-loop chunk-to-chunk continuity.
    Continuity,
    /// Closed-loop simulation.
    Simulate,
}

/// One row of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    pub name: String,
    pub protocol: Protocol,
    #[serde(default)]
    pub emulator: NoiseModel,
    #[serde(default)]
    pub strategy: Strategy,
    /// Policy protocol: pass the emulator output through the codec.
    #[serde(default)]
    pub refine: bool,
    /// Policy protocol: replace the output with the latent side of a
    /// matched-energy pair whose action side is the gaussian emulator.
    #[serde(default)]
    pub matched: bool,
    /// Simulate protocol: executor override.
    #[serde(default)]
    pub executor: Option<ExecutorModel>,
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub repetitions: usize,
}

fn one() -> usize {
    1
}

impl EvaluationSpec {
    pub fn new(name: &str, protocol: Protocol, emulator: NoiseModel, seeds: Vec<u64>) -> Self {
        Self {
            name: name.to_string(),
            protocol,
            emulator,
            strategy: Strategy::Naive,
            refine: false,
            matched: false,
            executor: None,
            seeds,
            repetitions: 1,
        }
    }

    pub fn needs_model(&self) -> bool {
        self.refine || self.matched || self.strategy.needs_model() || self.emulator.kind == latact::NoiseKind::LatentGaussian
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuityProtocol {
    pub latency_steps: usize,
    pub max_transitions: Option<usize>,
}

impl Default for ContinuityProtocol {
    fn default() -> Self {
        Self { latency_steps: 24, max_transitions: Some(200) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub factors: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { factors: vec![1, 2, 4, 8, 16] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seeds: u64,
    pub batch: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seeds: 20, batch: 3, step: 1e-4, tolerance: 1e-4 }
    }
}

/// The whole benchmark, as one JSON document. Every field has a default, so
/// `{}` runs the reference pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    /// Demonstrations: training data and the continuity protocol's source.
    pub corpus: Vec<TaskSpec>,
    /// Held-out trajectories for reconstruction, policy and ablation tables.
    pub eval_corpus: Vec<TaskSpec>,
    pub train_chunks: usize,
    pub train_stride: usize,
    pub vae: VaeConfig,
    pub hyper: TrainHyper,
    /// Trained model for the evaluation subcommands.
    pub model_path: Option<PathBuf>,
    pub recon_gate_mm: f64,
    pub continuity: ContinuityProtocol,
    pub sim: SimConfig,
    pub ablation: AblationConfig,
    pub gradcheck: GradcheckConfig,
    pub evaluations: Vec<EvaluationSpec>,
    pub output_dir: Option<PathBuf>,
}

fn task_grid(first_seed: u64, seeds: u64, duration_s: f64) -> Vec<TaskSpec> {
    (0..seeds).flat_map(|s| TaskKind::ALL.map(|k| TaskSpec::new(k, duration_s, first_seed + s))).collect()
}

pub fn default_evaluations() -> Vec<EvaluationSpec> {
    use Protocol::*;
    let policy_seeds: Vec<u64> = (0..100).collect();
    let sim_seeds: Vec<u64> = (0..20).collect();
    let gauss = NoiseModel::gaussian(0.5, 0);
    let mut out = vec![
        EvaluationSpec::new("truth", Policy, NoiseModel::none(), policy_seeds.clone()),
        EvaluationSpec::new("gaussian", Policy, gauss.clone(), policy_seeds.clone()),
        EvaluationSpec { matched: true, ..EvaluationSpec::new("latent_matched", Policy, gauss.clone(), policy_seeds.clone()) },
        EvaluationSpec::new("quantize", Policy, NoiseModel::quantize(2.0), policy_seeds.clone()),
        EvaluationSpec { refine: true, ..EvaluationSpec::new("quantize_refined", Policy, NoiseModel::quantize(2.0), policy_seeds.clone()) },
        EvaluationSpec::new("lowfreq_linear", Policy, NoiseModel::lowfreq(15.0, Interp::Linear, 0.5, 0), policy_seeds.clone()),
        EvaluationSpec::new("lowfreq_cubic", Policy, NoiseModel::lowfreq(15.0, Interp::Cubic, 0.5, 0), policy_seeds),
    ];
    for strategy in [Strategy::Naive, Strategy::Roundtrip, Strategy::Rtr, Strategy::Crossfade { blend_steps: 4 }] {
        out.push(EvaluationSpec { strategy, ..EvaluationSpec::new(&strategy.label(), Continuity, gauss.clone(), vec![0]) });
    }
    for (name, strategy) in [("naive", Strategy::Naive), ("rtr", Strategy::Rtr)] {
        out.push(EvaluationSpec { strategy, ..EvaluationSpec::new(&format!("{name}_stream60"), Simulate, gauss.clone(), sim_seeds.clone()) });
    }
    out.push(EvaluationSpec {
        executor: Some(ExecutorModel::point_to_point(15.0)),
        ..EvaluationSpec::new("naive_p2p15", Simulate, gauss, sim_seeds)
    });
    out
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: task_grid(100, 60, 8.0),
            eval_corpus: task_grid(900, 10, 8.0),
            train_chunks: 2000,
            train_stride: 4,
            vae: VaeConfig::default(),
            hyper: TrainHyper::default(),
            model_path: None,
            recon_gate_mm: 1.0,
            continuity: ContinuityProtocol::default(),
            sim: SimConfig { emulator: NoiseModel::gaussian(0.5, 0), ..SimConfig::default() },
            ablation: AblationConfig::default(),
            gradcheck: GradcheckConfig::default(),
            evaluations: default_evaluations(),
            output_dir: None,
        }
    }
}

impl BenchConfig {
    /// Reads a config file; an empty file means all defaults.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Parses a config document. A run manifest is accepted too, and its
    /// resolved config is used.
    pub fn parse(text: &str) -> CliResult<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let mut value: serde_json::Value = serde_json::from_str(text).or_else(|e| config_err(format!("config: {e}")))?;
        if let Some(obj) = value.as_object_mut() {
            if obj.contains_key("tool") && obj.contains_key("outputs") {
                value = obj.remove("config").unwrap_or_default();
            }
        }
        serde_json::from_value(value).or_else(|e| config_err(format!("config: {e}")))
    }

    pub fn validate(&self) -> CliResult<()> {
        let core = |r: latact::Result<()>| r.or_else(|e| config_err(e.to_string()));
        core(self.vae.validate())?;
        core(self.hyper.validate())?;
        for spec in self.corpus.iter().chain(&self.eval_corpus) {
            core(spec.validate(self.sim.control_hz))?;
        }
        if self.train_stride == 0 {
            return config_err("train_stride must be positive");
        }
        if !(self.recon_gate_mm > 0.0) {
            return config_err("recon_gate_mm must be positive");
        }
        self.sim.validate().or_else(|e| config_err(e.to_string()))?;
        if self.sim.horizon != self.vae.horizon {
            return config_err(format!("sim horizon {} differs from codec horizon {}", self.sim.horizon, self.vae.horizon));
        }
        let l = self.continuity.latency_steps;
        if l == 0 || 2 * l > self.vae.horizon {
            return config_err(format!("continuity latency_steps {l} must lie in 1..={}", self.vae.horizon / 2));
        }
        if self.ablation.factors.is_empty() {
            return config_err("ablation needs at least one factor");
        }
        for &f in &self.ablation.factors {
            core(VaeConfig { compression: f, ..self.vae.clone() }.validate())?;
        }
        let mut names = std::collections::BTreeSet::new();
        for e in &self.evaluations {
            if !names.insert((e.protocol as u8, e.name.as_str())) {
                return config_err(format!("duplicate evaluation name {:?}", e.name));
            }
            if e.seeds.is_empty() || e.repetitions == 0 {
                return config_err(format!("evaluation {:?} needs explicit seeds and at least one repetition", e.name));
            }
            core(e.emulator.validate())?;
            if e.matched && e.emulator.kind != latact::NoiseKind::GaussianAction {
                return config_err(format!("evaluation {:?}: matched pairs need a gaussian_action emulator", e.name));
            }
            if e.executor.is_some() && e.protocol != Protocol::Simulate {
                return config_err(format!("evaluation {:?}: executor applies to simulate only", e.name));
            }
        }
        if let Some(p) = &self.model_path {
            if !p.is_file() {
                return config_err(format!("model_path {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn evaluations_for(&self, protocol: Protocol) -> Vec<&EvaluationSpec> {
        self.evaluations.iter().filter(|e| e.protocol == protocol).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_bare_object_mean_defaults() {
        assert_eq!(BenchConfig::parse("").unwrap(), BenchConfig::default());
        assert_eq!(BenchConfig::parse("{}").unwrap(), BenchConfig::default());
        BenchConfig::default().validate().unwrap();
    }

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = BenchConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(BenchConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(BenchConfig::parse(r#"{"sede": 3}"#), Err(crate::CliError::Config(_))));
        assert!(BenchConfig::parse("{").is_err());
    }

    #[test]
    fn manifest_documents_yield_their_config() {
        let cfg = BenchConfig { seed: 9, ..BenchConfig::default() };
        let doc = serde_json::json!({ "tool": "latact-cli", "outputs": [], "config": cfg });
        assert_eq!(BenchConfig::parse(&doc.to_string()).unwrap(), cfg);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let bad = [
            BenchConfig { train_stride: 0, ..BenchConfig::default() },
            BenchConfig { continuity: ContinuityProtocol { latency_steps: 30, max_transitions: None }, ..BenchConfig::default() },
            BenchConfig { ablation: AblationConfig { factors: vec![5] }, ..BenchConfig::default() },
            BenchConfig { model_path: Some(PathBuf::from("/nonexistent/model.json")), ..BenchConfig::default() },
            BenchConfig { evaluations: vec![EvaluationSpec::new("x", Protocol::Policy, NoiseModel::none(), vec![])], ..BenchConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(crate::CliError::Config(_))));
        }
        let mut dup = BenchConfig::default();
        dup.evaluations.push(dup.evaluations[0].clone());
        assert!(dup.validate().is_err());
    }

    #[test]
    fn default_evaluations_cover_each_protocol() {
        let cfg = BenchConfig::default();
        assert_eq!(cfg.evaluations_for(Protocol::Policy).len(), 7);
        assert_eq!(cfg.evaluations_for(Protocol::Continuity).len(), 4);
        assert_eq!(cfg.evaluations_for(Protocol::Simulate).len(), 3);
        assert!(cfg.evaluations.iter().all(|e| !e.seeds.is_empty()));
    }
}
