//! The evaluation protocols behind each subcommand. Every function here is
//! deterministic in the config and model; file output lives in `commands`.

use std::sync::Arc;

use latact::codec::{self, GradCheckReport, VaeModel};
use latact::continuity::evaluate_continuity;
use latact::metrics::{deviation, deviation_per_channel, exceed_count, smoothness, TimeUnit, DEFAULT_SPEED_LIMIT_MM_S};
use latact::sim::{self, ExecutionTrace, SimConfig};
use latact::synth::{build_chunk_set, emulate_policy, generate_trajectory, matched_energy_pair};
use latact::{ActionChunk, ActionProfile, Error, TaskKind, TaskSpec, Trajectory, VaeConfig};
use serde_json::json;

use crate::config::{BenchConfig, EvaluationSpec, Protocol};
use crate::tables::{Record, Table};

/// Chunks tried per seed when a matched pair cannot be calibrated.
const MATCH_ATTEMPTS: u64 = 8;

/// SplitMix64 finalizer over the config seed, the evaluation seed and the
/// repetition index.
pub fn derive_seed(base: u64, seed: u64, repetition: usize) -> u64 {
    let mut z = base ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (repetition as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn seeds_of(spec: &EvaluationSpec) -> impl Iterator<Item = (u64, usize)> + '_ {
    spec.seeds.iter().flat_map(move |&s| (0..spec.repetitions).map(move |r| (s, r)))
}

/// Held-out chunks at half-horizon stride.
pub fn eval_chunks(config: &BenchConfig) -> latact::Result<Vec<ActionChunk>> {
    let h = config.vae.horizon;
    build_chunk_set(&config.eval_corpus, h, (h / 2).max(1), None)
}

pub fn training_set(config: &BenchConfig) -> latact::Result<Vec<ActionChunk>> {
    build_chunk_set(&config.corpus, config.vae.horizon, config.train_stride, Some(config.train_chunks))
}

pub fn vae_for(config: &BenchConfig, compression: usize) -> VaeConfig {
    VaeConfig { compression, ..config.vae.clone() }
}

pub fn train_model(config: &BenchConfig, vae: &VaeConfig) -> latact::Result<VaeModel> {
    codec::train(vae, &training_set(config)?, &config.hyper)
}

/// Whether `model` is what training `vae` under `config` would produce, as far
/// as the persisted metadata can tell.
pub fn model_matches(model: &VaeModel, vae: &VaeConfig, config: &BenchConfig) -> bool {
    model.config() == vae && model.train_meta().epochs == config.hyper.epochs
}

fn record(seed: u64, repetition: usize, derived_seed: u64, values: Vec<Option<f64>>, extra: serde_json::Value) -> Record {
    Record { seed, repetition, derived_seed, values, extra }
}

fn axis_names(profile: &ActionProfile) -> Vec<String> {
    profile.channel_names().iter().map(|n| format!("deviation_{n}")).collect()
}

pub const RECON_COLUMNS_TAIL: [&str; 2] = ["deviation_xyz", "deviation_rpy"];

/// Per-channel reconstruction MAE on the held-out chunks; one record per
/// chunk.
pub fn recon_table(config: &BenchConfig, model: &VaeModel) -> latact::Result<Table> {
    let profile = model.profile().clone();
    let mut cols = axis_names(&profile);
    cols.extend(RECON_COLUMNS_TAIL.map(String::from));
    let mut table = Table::new("recon", &cols.iter().map(String::as_str).collect::<Vec<_>>());
    let chunks = eval_chunks(config)?;
    let outs = codec::roundtrip_many(model, &chunks)?;
    let mut records = Vec::with_capacity(chunks.len());
    for (i, (out, truth)) in outs.iter().zip(&chunks).enumerate() {
        let mut values: Vec<Option<f64>> = deviation_per_channel(out, truth)?.into_iter().map(Some).collect();
        let d = deviation(out, truth)?;
        values.extend([Some(d.xyz), Some(d.rpy)]);
        records.push(record(i as u64, 0, truth.start_tick(), values, serde_json::Value::Null));
    }
    table.push_row("recon", records, None);
    Ok(table)
}

pub const POLICY_COLUMNS: [&str; 7] = ["deviation_xyz", "deviation_rpy", "accel_xyz", "jerk_xyz", "accel_rpy", "jerk_rpy", "exceed_count"];

fn chunk_metrics(out: &ActionChunk, truth: &ActionChunk) -> latact::Result<Vec<Option<f64>>> {
    let d = deviation(out, truth)?;
    let s = smoothness(out, TimeUnit::Step)?;
    let limit = DEFAULT_SPEED_LIMIT_MM_S;
    Ok([d.xyz, d.rpy, s.accel_xyz, s.jerk_xyz, s.accel_rpy, s.jerk_rpy, exceed_count(out, limit) as f64].map(Some).to_vec())
}

fn need_model<'a>(spec: &EvaluationSpec, model: Option<&'a VaeModel>) -> latact::Result<Option<&'a VaeModel>> {
    if spec.needs_model() && model.is_none() {
        return Err(Error::InvalidArgument(format!("evaluation {:?} needs a trained model", spec.name)));
    }
    Ok(model)
}

fn policy_records(spec: &EvaluationSpec, config: &BenchConfig, chunks: &[ActionChunk], model: Option<&VaeModel>) -> latact::Result<Vec<Record>> {
    let model = need_model(spec, model)?;
    if chunks.is_empty() {
        return Err(Error::InvalidArgument("eval corpus yields no chunks".into()));
    }
    let mut out = Vec::new();
    for (seed, rep) in seeds_of(spec) {
        let derived = derive_seed(config.seed, seed, rep);
        let first = (derived % chunks.len() as u64) as usize;
        if spec.matched {
            let model = model.expect("checked by need_model");
            let mut attempt = 0;
            let (index, pair) = loop {
                let index = (first + attempt as usize) % chunks.len();
                match matched_energy_pair(&chunks[index], spec.emulator.magnitude, model, derived) {
                    Ok(p) => break (index, p),
                    Err(Error::Calibration(_)) if attempt + 1 < MATCH_ATTEMPTS => attempt += 1,
                    Err(e) => return Err(e),
                }
            };
            let action_jerk = smoothness(&pair.action_noised, TimeUnit::Step)?.jerk_xyz;
            let extra = json!({
                "chunk_index": index,
                "skipped_chunks": attempt,
                "latent_sigma": pair.latent_sigma,
                "action_deviation_xyz": pair.action_deviation_xyz,
                "action_jerk_xyz": action_jerk,
            });
            out.push(record(seed, rep, derived, chunk_metrics(&pair.latent_noised, &chunks[index])?, extra));
            continue;
        }
        let truth = &chunks[first];
        let mut pred = emulate_policy(truth, &spec.emulator.with_seed(derived), model)?;
        if spec.refine {
            pred = codec::roundtrip(model.expect("checked by need_model"), &pred)?;
        }
        out.push(record(seed, rep, derived, chunk_metrics(&pred, truth)?, json!({ "chunk_index": first })));
    }
    Ok(out)
}

fn fill_rows<F>(table: &mut Table, specs: &[&EvaluationSpec], mut run: F)
where
    F: FnMut(&EvaluationSpec) -> latact::Result<Vec<Record>>,
{
    for spec in specs {
        match run(spec) {
            Ok(records) => table.push_row(&spec.name, records, None),
            Err(e) => table.push_row(&spec.name, Vec::new(), Some(e.to_string())),
        }
    }
}

/// Deviation and smoothness of emulated policy outputs on held-out chunks.
pub fn policy_table(config: &BenchConfig, model: Option<&VaeModel>) -> latact::Result<Table> {
    let mut table = Table::new("policy", &POLICY_COLUMNS);
    let specs = config.evaluations_for(Protocol::Policy);
    if specs.is_empty() {
        return Ok(table);
    }
    let chunks = eval_chunks(config)?;
    fill_rows(&mut table, &specs, |spec| policy_records(spec, config, &chunks, model));
    Ok(table)
}

pub const CONTINUITY_COLUMNS: [&str; 11] = [
    "overlap_diff_xyz",
    "overlap_diff_rpy",
    "boundary_gap_xyz",
    "boundary_gap_rpy",
    "deviation_xyz",
    "deviation_rpy",
    "deviation_x",
    "deviation_y",
    "deviation_z",
    "prefix_drift_xyz",
    "transitions",
];

pub fn corpus_trajectories(specs: &[TaskSpec]) -> latact::Result<Vec<Trajectory>> {
    specs.iter().map(generate_trajectory).collect()
}

fn continuity_records(spec: &EvaluationSpec, config: &BenchConfig, trajs: &[Trajectory], model: Option<&VaeModel>) -> latact::Result<Vec<Record>> {
    let model = need_model(spec, model)?;
    let mut out = Vec::new();
    for (seed, rep) in seeds_of(spec) {
        let derived = derive_seed(config.seed, seed, rep);
        let c = &config.continuity;
        let report = evaluate_continuity(
            trajs,
            config.vae.horizon,
            c.latency_steps,
            &spec.emulator.with_seed(derived),
            spec.strategy,
            model,
            c.max_transitions,
        )?;
        let m = &report.report;
        let pos = trajs[0].profile().position_indices().to_vec();
        let axis = |k: usize| pos.get(k).and_then(|&i| report.deviation_per_channel.get(i).copied());
        let n = report.transitions.len() as f64;
        let drift = report.transitions.iter().map(|t| t.prefix_drift_xyz).sum::<f64>() / n;
        let values = vec![
            m.overlap_diff_xyz,
            m.overlap_diff_rpy,
            m.boundary_gap_xyz,
            m.boundary_gap_rpy,
            m.deviation_xyz,
            m.deviation_rpy,
            axis(0),
            axis(1),
            axis(2),
            Some(drift),
            Some(n),
        ];
        out.push(record(seed, rep, derived, values, json!({ "transitions": report.transitions })));
    }
    Ok(out)
}

/// Chunk-switching continuity over the demonstration corpus.
pub fn continuity_table(config: &BenchConfig, model: Option<&VaeModel>) -> latact::Result<Table> {
    let mut table = Table::new("continuity", &CONTINUITY_COLUMNS);
    let specs = config.evaluations_for(Protocol::Continuity);
    if specs.is_empty() {
        return Ok(table);
    }
    let trajs = corpus_trajectories(&config.corpus)?;
    if trajs.is_empty() {
        return Err(Error::InvalidArgument("continuity needs a non-empty corpus".into()));
    }
    fill_rows(&mut table, &specs, |spec| continuity_records(spec, config, &trajs, model));
    Ok(table)
}

pub const SIMULATE_COLUMNS: [&str; 8] = [
    "deviation_xyz",
    "deviation_rpy",
    "accel_xyz",
    "jerk_xyz",
    "exceed_count",
    "end_to_end_latency_s",
    "starvation_events",
    "stall_ticks",
];

/// Simulator config for one seed of `spec`. The task kind and geometry depend
/// only on the derived seed, so evaluations sharing seeds share geometry.
pub fn sim_config(config: &BenchConfig, spec: &EvaluationSpec, derived: u64) -> SimConfig {
    let kind = TaskKind::ALL[(derived % TaskKind::ALL.len() as u64) as usize];
    SimConfig {
        strategy: spec.strategy,
        emulator: spec.emulator.with_seed(derived),
        executor: spec.executor.clone().unwrap_or_else(|| config.sim.executor.clone()),
        task: TaskSpec { kind, seed: derived, ..config.sim.task.clone() },
        seed: derived,
        ..config.sim.clone()
    }
}

/// Closed-loop simulation; also returns the first trace of each evaluation.
pub fn simulate_table(config: &BenchConfig, model: Option<&VaeModel>) -> latact::Result<(Table, Vec<(String, ExecutionTrace)>)> {
    let mut table = Table::new("simulate", &SIMULATE_COLUMNS);
    let mut traces = Vec::new();
    let specs = config.evaluations_for(Protocol::Simulate);
    fill_rows(&mut table, &specs, |spec| {
        let model = need_model(spec, model)?;
        let mut out = Vec::new();
        for (seed, rep) in seeds_of(spec) {
            let derived = derive_seed(config.seed, seed, rep);
            let cfg = sim_config(config, spec, derived);
            let truth = generate_trajectory(&cfg.task)?;
            let trace = sim::run_on(&cfg, &truth, model)?;
            let m = sim::trace_metrics(&trace, &truth)?;
            let t = &trace.totals;
            let values = vec![
                m.deviation_xyz,
                m.deviation_rpy,
                m.accel_xyz,
                m.jerk_xyz,
                m.exceed_count.map(|v| v as f64),
                m.end_to_end_latency_s,
                Some(t.starvation_events as f64),
                Some(t.stall_ticks as f64),
            ];
            let extra = json!({ "task": cfg.task, "transitions": t.transitions });
            out.push(record(seed, rep, derived, values, extra));
            if out.len() == 1 {
                traces.push((spec.name.clone(), trace));
            }
        }
        Ok(out)
    });
    Ok((table, traces))
}

pub const ABLATION_COLUMNS: [&str; 9] = [
    "latent_horizon",
    "deviation_x",
    "deviation_y",
    "deviation_z",
    "deviation_xyz",
    "deviation_rpy",
    "accel_xyz",
    "jerk_xyz",
    "truth_jerk_xyz",
];

/// Reconstruction quality and smoothness of decoded chunks for each trained
/// compression factor; one record per held-out chunk.
pub fn ablation_table(config: &BenchConfig, models: &[(usize, VaeModel)]) -> latact::Result<Table> {
    let mut table = Table::new("ablation", &ABLATION_COLUMNS);
    let chunks = eval_chunks(config)?;
    for (f, model) in models {
        let outs = codec::roundtrip_many(model, &chunks)?;
        let pos = model.profile().position_indices().to_vec();
        let mut records = Vec::with_capacity(chunks.len());
        for (i, (out, truth)) in outs.iter().zip(&chunks).enumerate() {
            let per = deviation_per_channel(out, truth)?;
            let d = deviation(out, truth)?;
            let s = smoothness(out, TimeUnit::Step)?;
            let st = smoothness(truth, TimeUnit::Step)?;
            let axis = |k: usize| pos.get(k).map(|&c| per[c]);
            let values = vec![
                Some(model.config().latent_horizon() as f64),
                axis(0),
                axis(1),
                axis(2),
                Some(d.xyz),
                Some(d.rpy),
                Some(s.accel_xyz),
                Some(s.jerk_xyz),
                Some(st.jerk_xyz),
            ];
            records.push(record(i as u64, 0, truth.start_tick(), values, serde_json::Value::Null));
        }
        table.push_row(&format!("f{f}"), records, None);
    }
    Ok(table)
}

pub const GRADCHECK_COLUMNS: [&str; 2] = ["max_relative_error", "checked"];

/// Whole-model gradient checks of the tiny config, one per seed.
pub fn gradcheck(config: &BenchConfig) -> latact::Result<(Table, Vec<GradCheckReport>)> {
    let g = &config.gradcheck;
    let tiny = VaeConfig::tiny(config.vae.channels);
    let profile = Arc::new(ActionProfile::default());
    let mut reports = Vec::new();
    let mut records = Vec::new();
    for i in 0..g.seeds {
        let seed = config.seed.wrapping_add(i);
        let r = codec::gradient_check(&tiny, profile.clone(), seed, g.batch, g.step)?;
        let extra = json!({ "worst_parameter": r.worst_parameter, "worst_index": r.worst_index });
        records.push(record(i, 0, seed, vec![Some(r.max_relative_error), Some(r.checked as f64)], extra));
        reports.push(r);
    }
    let mut table = Table::new("gradcheck", &GRADCHECK_COLUMNS);
    if !records.is_empty() {
        table.push_row("tiny", records, None);
    }
    Ok((table, reports))
}
