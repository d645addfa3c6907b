//! Chunk-transition strategies applied when an asynchronous inference
//! completes, and the open-loop continuity protocol.
//!
//! Timeline of one transition: inference starts at tick `s`, which is row
//! `exec_cursor` of the previous chunk. It completes `L` ticks later, so the
//! first `L` rows of the new chunk (ticks `s..s+L`) are already outdated.

use serde::{Deserialize, Serialize};

use crate::codec::{self, VaeModel};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::metrics::{boundary_gap, deviation, deviation_per_channel, overlap_diff, MetricReport};
use crate::numerics::Tensor2;
use crate::synth::{chunk_dataset, emulate_policy, NoiseModel};
use crate::types::{ActionChunk, Trajectory};

#[derive(Debug, Clone)]
pub struct TransitionContext {
    pub prev_chunk: ActionChunk,
    pub exec_cursor: usize,
    pub latency_steps: usize,
    pub new_chunk: ActionChunk,
}

impl TransitionContext {
    pub fn new(prev_chunk: ActionChunk, exec_cursor: usize, latency_steps: usize, new_chunk: ActionChunk) -> Result<Self> {
        let ctx = Self { prev_chunk, exec_cursor, latency_steps, new_chunk };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        self.prev_chunk.ensure_compatible(&self.new_chunk)?;
        let h = self.new_chunk.horizon();
        if self.latency_steps == 0 || self.latency_steps >= h {
            return arg_err(format!("latency of {} steps must lie in 1..{h}", self.latency_steps));
        }
        if self.exec_cursor + self.latency_steps > self.prev_chunk.horizon() {
            return arg_err(format!(
                "cursor {} + latency {} runs past the previous chunk ({} rows)",
                self.exec_cursor,
                self.latency_steps,
                self.prev_chunk.horizon()
            ));
        }
        let s = self.prev_chunk.start_tick() + self.exec_cursor as u64;
        if self.new_chunk.start_tick() != s {
            return arg_err(format!("new chunk starts at tick {}, inference started at {s}", self.new_chunk.start_tick()));
        }
        Ok(())
    }

    /// Tick at which inference started.
    pub fn inference_tick(&self) -> u64 {
        self.new_chunk.start_tick()
    }

    /// Rows of the previous chunk executed while inference was running.
    pub fn reused(&self) -> Result<ActionChunk> {
        self.prev_chunk.slice_rows(self.exec_cursor, self.exec_cursor + self.latency_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    #[default]
    Naive,
    /// Naive switching of the codec round trip of each new chunk: a latent
    /// policy without Reuse-then-Refine.
    Roundtrip,
    Rtr,
    Crossfade { blend_steps: usize },
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Naive => "naive".into(),
            Strategy::Roundtrip => "roundtrip".into(),
            Strategy::Rtr => "rtr".into(),
            Strategy::Crossfade { blend_steps } => format!("crossfade{blend_steps}"),
        }
    }

    pub fn needs_model(&self) -> bool {
        matches!(self, Strategy::Rtr | Strategy::Roundtrip)
    }
}

/// Result of a transition: the whole post-strategy chunk (starting at the
/// inference tick) and the part that will execute.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub full: ActionChunk,
    pub executable: ActionChunk,
}

/// Drops the outdated rows and executes the rest of the new chunk.
pub fn naive_switch(ctx: &TransitionContext) -> Result<ActionChunk> {
    ctx.validate()?;
    ctx.new_chunk.slice_rows(ctx.latency_steps, ctx.new_chunk.horizon())
}

/// `reused ++ new[L..H)`, the chunk fed to the codec by Reuse-then-Refine.
pub fn rtr_concat(ctx: &TransitionContext) -> Result<ActionChunk> {
    ctx.validate()?;
    let reused = ctx.reused()?;
    let fresh = ctx.new_chunk.data().slice_rows(ctx.latency_steps, ctx.new_chunk.horizon());
    let data = Tensor2::vstack(&[reused.data(), &fresh])?;
    if data.rows() != ctx.new_chunk.horizon() {
        return dim_err(format!("concatenation has {} rows, expected {}", data.rows(), ctx.new_chunk.horizon()));
    }
    ActionChunk::new(data, ctx.new_chunk.profile().clone(), ctx.inference_tick())
}

/// Round trip of [`rtr_concat`] through the codec. The whole refined chunk
/// starts at the inference tick; rows `L..H` are the executable part.
pub fn reuse_then_refine(ctx: &TransitionContext, model: &VaeModel) -> Result<ActionChunk> {
    let concat = rtr_concat(ctx)?;
    if model.config().horizon != concat.horizon() {
        return dim_err(format!("model horizon {} differs from chunk horizon {}", model.config().horizon, concat.horizon()));
    }
    codec::roundtrip(model, &concat)
}

/// Executable rows of the new chunk blended linearly from the previous
/// chunk over `blend_steps` rows: row `i` takes weight `(i+1)/(k+1)` from
/// the new chunk. Where the previous chunk has no row at that tick its last
/// row is held.
pub fn crossfade_switch(ctx: &TransitionContext, blend_steps: usize) -> Result<ActionChunk> {
    ctx.validate()?;
    let l = ctx.latency_steps;
    let h = ctx.new_chunk.horizon();
    if blend_steps > h - l {
        return arg_err(format!("blend of {blend_steps} steps exceeds the {} executable rows", h - l));
    }
    let mut out = ctx.new_chunk.slice_rows(l, h)?.into_data();
    let prev = &ctx.prev_chunk;
    for i in 0..blend_steps {
        let prev_row = (ctx.exec_cursor + l + i).min(prev.horizon() - 1);
        let w = (i + 1) as f64 / (blend_steps + 1) as f64;
        let tail = prev.row(prev_row);
        for (v, p) in out.row_mut(i).iter_mut().zip(tail) {
            *v = (1.0 - w) * p + w * *v;
        }
    }
    ActionChunk::new(out, ctx.new_chunk.profile().clone(), ctx.inference_tick() + l as u64)
}

pub fn apply_strategy(ctx: &TransitionContext, strategy: Strategy, model: Option<&VaeModel>) -> Result<Transition> {
    let l = ctx.latency_steps;
    let h = ctx.new_chunk.horizon();
    match strategy {
        Strategy::Naive => Ok(Transition { full: ctx.new_chunk.clone(), executable: naive_switch(ctx)? }),
        Strategy::Rtr | Strategy::Roundtrip => {
            let model = model.ok_or_else(|| Error::InvalidArgument(format!("strategy {} needs a trained model", strategy.label())))?;
            let full = if strategy == Strategy::Rtr {
                reuse_then_refine(ctx, model)?
            } else {
                ctx.validate()?;
                codec::roundtrip(model, &ctx.new_chunk)?
            };
            let executable = full.slice_rows(l, h)?;
            Ok(Transition { full, executable })
        }
        Strategy::Crossfade { blend_steps } => {
            let executable = crossfade_switch(ctx, blend_steps)?;
            let head = ctx.new_chunk.data().slice_rows(0, l);
            let full = ActionChunk::new(Tensor2::vstack(&[&head, executable.data()])?, ctx.new_chunk.profile().clone(), ctx.inference_tick())?;
            Ok(Transition { full, executable })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub trajectory: usize,
    pub index: usize,
    pub inference_tick: u64,
    pub overlap_diff_xyz: f64,
    pub overlap_diff_rpy: f64,
    pub boundary_gap_xyz: f64,
    pub boundary_gap_rpy: f64,
    /// Executable rows against ground truth.
    pub deviation_xyz: f64,
    pub deviation_rpy: f64,
    /// Mean |full[0..L) − reused| over position channels.
    pub prefix_drift_xyz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub strategy: Strategy,
    pub report: MetricReport,
    /// Mean |executed − truth| per channel.
    pub deviation_per_channel: Vec<f64>,
    pub transitions: Vec<TransitionRecord>,
}

/// Per-transition seed of the emulated policy.
pub fn transition_seed(base: u64, trajectory: usize, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((trajectory as u64) << 32) ^ index as u64
}

/// Open-loop continuity protocol. Each trajectory is chunked with stride
/// `L`; every chunk is predicted independently by the emulator; chunk `i`
/// replaces chunk `i−1` with inference starting at row `L` of the previous
/// (post-strategy) chunk. `max_transitions` caps the total count.
pub fn evaluate_continuity(
    trajectories: &[Trajectory],
    horizon: usize,
    latency_steps: usize,
    emulator: &NoiseModel,
    strategy: Strategy,
    model: Option<&VaeModel>,
    max_transitions: Option<usize>,
) -> Result<ContinuityReport> {
    if latency_steps == 0 || 2 * latency_steps > horizon {
        return arg_err(format!("latency {latency_steps} must lie in 1..={}", horizon / 2));
    }
    let limit = max_transitions.unwrap_or(usize::MAX);
    let mut records = Vec::new();
    let mut dev_sum: Vec<f64> = Vec::new();
    let mut dev_rows = 0usize;
    'outer: for (ti, traj) in trajectories.iter().enumerate() {
        let truth = chunk_dataset(traj, horizon, latency_steps)?;
        if truth.len() < 2 {
            continue;
        }
        let predict = |i: usize| emulate_policy(&truth[i], &emulator.with_seed(transition_seed(emulator.seed, ti, i)), model);
        let mut prev = predict(0)?;
        for i in 1..truth.len() {
            if records.len() >= limit {
                break 'outer;
            }
            let ctx = TransitionContext::new(prev.clone(), latency_steps, latency_steps, predict(i)?)?;
            let t = apply_strategy(&ctx, strategy, model)?;
            let od = overlap_diff(&prev, &t.full)?;
            let bg = boundary_gap(&prev, &t.executable)?;
            let truth_exec = truth[i].slice_rows(latency_steps, horizon)?;
            let dev = deviation(&t.executable, &truth_exec)?;
            let per = deviation_per_channel(&t.executable, &truth_exec)?;
            if dev_sum.is_empty() {
                dev_sum = vec![0.0; per.len()];
            }
            for (s, v) in dev_sum.iter_mut().zip(&per) {
                *s += v;
            }
            dev_rows += 1;
            let reused = ctx.reused()?;
            let head = t.full.slice_rows(0, latency_steps)?;
            let drift = deviation(&head, &reused.with_start_tick(head.start_tick()))?;
            records.push(TransitionRecord {
                trajectory: ti,
                index: i,
                inference_tick: ctx.inference_tick(),
                overlap_diff_xyz: od.xyz,
                overlap_diff_rpy: od.rpy,
                boundary_gap_xyz: bg.xyz,
                boundary_gap_rpy: bg.rpy,
                deviation_xyz: dev.xyz,
                deviation_rpy: dev.rpy,
                prefix_drift_xyz: drift.xyz,
            });
            prev = t.full;
        }
    }
    if records.is_empty() {
        return arg_err("continuity evaluation needs at least two chunks in some trajectory");
    }
    let n = records.len() as f64;
    let mean = |f: fn(&TransitionRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let report = MetricReport {
        deviation_xyz: Some(mean(|r| r.deviation_xyz)),
        deviation_rpy: Some(mean(|r| r.deviation_rpy)),
        overlap_diff_xyz: Some(mean(|r| r.overlap_diff_xyz)),
        overlap_diff_rpy: Some(mean(|r| r.overlap_diff_rpy)),
        boundary_gap_xyz: Some(mean(|r| r.boundary_gap_xyz)),
        boundary_gap_rpy: Some(mean(|r| r.boundary_gap_rpy)),
        ..MetricReport::default()
    };
    Ok(ContinuityReport {
        strategy,
        report,
        deviation_per_channel: dev_sum.iter().map(|s| s / dev_rows as f64).collect(),
        transitions: records,
    })
}
