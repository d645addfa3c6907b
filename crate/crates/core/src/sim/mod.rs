//! Tick-level simulation of chunked execution with asynchronous inference.
//!
//! Two clocks are involved. The wall clock advances one tick per control
//! period. Task progress is the index into the ground-truth trajectory of
//! the next action to execute; it stalls while the governor slows a
//! command down or while the executor waits for a chunk.

mod export;
mod latency;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use export::{summary_json, write_trace_csv, TraceSummary};
pub use latency::{latency_breakdown, Jitter, LatencyBreakdown, LatencyModel, LatencySample};

use crate::codec::{self, VaeModel};
use crate::continuity::{apply_strategy, transition_seed, Strategy, TransitionContext};
use crate::error::{arg_err, Error, Result};
use crate::metrics::{deviation, smoothness, MetricReport, TimeUnit, DEFAULT_SPEED_LIMIT_MM_S};
use crate::numerics::Tensor2;
use crate::synth::{emulate_policy, generate_trajectory, NoiseModel, TaskSpec};
use crate::types::{ActionChunk, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorMode {
    /// One command per control tick, velocity carried across commands.
    #[default]
    Streaming,
    /// Rest-to-rest trapezoidal moves between waypoints sent at
    /// `command_hz`.
    PointToPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorModel {
    pub mode: ExecutorMode,
    pub max_speed_mm_s: f64,
    pub max_accel_mm_s2: f64,
    /// Waypoint rate of the point-to-point executor.
    pub command_hz: f64,
    /// Point-to-point moves end at rest before the next waypoint starts.
    pub settle: bool,
    /// Time-dilate commands faster than `max_speed_mm_s`.
    pub governed: bool,
}

impl Default for ExecutorModel {
    fn default() -> Self {
        Self {
            mode: ExecutorMode::Streaming,
            max_speed_mm_s: DEFAULT_SPEED_LIMIT_MM_S,
            max_accel_mm_s2: 1000.0,
            command_hz: 15.0,
            settle: true,
            governed: true,
        }
    }
}

impl ExecutorModel {
    pub fn point_to_point(command_hz: f64) -> Self {
        Self { mode: ExecutorMode::PointToPoint, command_hz, ..Self::default() }
    }

    fn validate(&self, control_hz: f64) -> Result<usize> {
        if !(self.max_speed_mm_s > 0.0 && self.max_accel_mm_s2 > 0.0 && self.command_hz > 0.0) {
            return arg_err("executor limits and command rate must be positive");
        }
        match self.mode {
            ExecutorMode::Streaming => Ok(1),
            ExecutorMode::PointToPoint => {
                let ratio = control_hz / self.command_hz;
                if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
                    return arg_err(format!("command rate {} Hz must divide {control_hz} Hz", self.command_hz));
                }
                Ok(ratio.round() as usize)
            }
        }
    }

    /// Ticks of a rest-to-rest trapezoidal move over `distance` mm.
    pub fn trapezoid_ticks(&self, distance: f64, control_hz: f64) -> usize {
        let (v, a) = (self.max_speed_mm_s, self.max_accel_mm_s2);
        let t = if distance >= v * v / a { distance / v + v / a } else { 2.0 * (distance / a).sqrt() };
        ((t * control_hz - 1e-9).ceil() as usize).max(1)
    }

    /// Fraction of a trapezoidal move of `distance` mm completed after
    /// `t` seconds.
    fn trapezoid_fraction(&self, distance: f64, t: f64) -> f64 {
        if distance <= 0.0 {
            return 1.0;
        }
        let (v, a) = (self.max_speed_mm_s, self.max_accel_mm_s2);
        let (t_acc, v_peak, total) = if distance >= v * v / a {
            (v / a, v, distance / v + v / a)
        } else {
            let ta = (distance / a).sqrt();
            (ta, a * ta, 2.0 * ta)
        };
        let t = t.clamp(0.0, total);
        let s = if t <= t_acc {
            0.5 * a * t * t
        } else if t <= total - t_acc {
            0.5 * a * t_acc * t_acc + v_peak * (t - t_acc)
        } else {
            let r = total - t;
            distance - 0.5 * a * r * r
        };
        (s / distance).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub horizon: usize,
    /// Actions of a chunk executed before the next inference starts.
    pub window: usize,
    pub control_hz: f64,
    pub latency: LatencyModel,
    pub executor: ExecutorModel,
    pub strategy: Strategy,
    pub emulator: NoiseModel,
    pub task: TaskSpec,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 48,
            window: 24,
            control_hz: 60.0,
            latency: LatencyModel::default(),
            executor: ExecutorModel::default(),
            strategy: Strategy::Naive,
            emulator: NoiseModel::none(),
            task: TaskSpec::new(crate::synth::TaskKind::LineWrite, 20.0, 0),
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Rejects unusable configs; returns warnings for ones that will starve.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.window == 0 || self.window >= self.horizon {
            return arg_err(format!("window {} must lie in 1..{}", self.window, self.horizon));
        }
        if !(self.control_hz > 0.0) {
            return arg_err("control rate must be positive");
        }
        self.latency.validate()?;
        self.emulator.validate()?;
        let step = self.executor.validate(self.control_hz)?;
        if step > 1 && (self.horizon % step != 0 || self.window % step != 0) {
            return arg_err(format!("horizon and window must be multiples of the waypoint spacing {step}"));
        }
        let mut warnings = Vec::new();
        let budget = (self.horizon - self.window) as f64 / self.control_hz;
        if self.latency.max_total_ms() / 1000.0 > budget {
            warnings.push(format!(
                "worst-case latency {:.1} ms exceeds the {:.1} ms left in a chunk; expect starvation",
                self.latency.max_total_ms(),
                budget * 1000.0
            ));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    None,
    InferenceStart,
    ChunkSwitch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub tick: u64,
    /// Index into the ground truth of the action being executed.
    pub progress: usize,
    pub commanded: Vec<f64>,
    pub executed: Vec<f64>,
    pub speed_mm_s: f64,
    pub stalled: bool,
    pub starved: bool,
    /// First tick of a new command.
    pub new_command: bool,
    pub chunk_id: usize,
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TraceTotals {
    pub end_to_end_latency_s: f64,
    pub exceed_count: u64,
    pub stall_ticks: u64,
    pub starvation_ticks: u64,
    pub starvation_events: u64,
    pub transitions: u64,
    /// Wall ticks between each inference start and its chunk switch.
    pub switch_delays_ticks: Vec<u64>,
    /// Actions executed during each inference.
    pub latency_steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionTrace {
    pub control_hz: f64,
    pub channel_names: Vec<String>,
    pub position_indices: Vec<usize>,
    pub ticks: Vec<TickRecord>,
    pub totals: TraceTotals,
}

impl ExecutionTrace {
    /// Commands in the order they were issued, with the progress index each
    /// one targets.
    pub fn command_log(&self) -> Vec<(usize, &[f64])> {
        self.ticks.iter().filter(|t| t.new_command).map(|t| (t.progress, t.commanded.as_slice())).collect()
    }
}

struct Pending {
    ready_tick: u64,
    start_tick: u64,
    cursor: usize,
    executed_since: usize,
    chunk: ActionChunk,
}

fn xyz_distance(a: &[f64], b: &[f64], pos: &[usize]) -> f64 {
    pos.iter().map(|&c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt()
}

fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
}

/// Runs the closed loop on the task's ground truth.
pub fn run(config: &SimConfig, model: Option<&VaeModel>) -> Result<ExecutionTrace> {
    let truth = generate_trajectory(&config.task)?;
    run_on(config, &truth, model)
}

/// Runs the closed loop on a given ground-truth trajectory.
pub fn run_on(config: &SimConfig, truth: &Trajectory, model: Option<&VaeModel>) -> Result<ExecutionTrace> {
    config.validate()?;
    if config.strategy.needs_model() || config.emulator.kind == crate::synth::NoiseKind::LatentGaussian {
        let m = model.ok_or_else(|| Error::InvalidArgument("this configuration needs a trained model".into()))?;
        if m.config().horizon != config.horizon {
            return arg_err(format!("model horizon {} differs from sim horizon {}", m.config().horizon, config.horizon));
        }
    }
    let profile = truth.profile().with_control_frequency(config.control_hz)?;
    let profile = std::sync::Arc::new(profile);
    let truth = Trajectory::new(truth.samples().clone(), profile.clone())?;
    let pos = profile.position_indices().to_vec();
    let hz = config.control_hz;
    let h = config.horizon;
    let step = config.executor.validate(hz)?;
    let ex = &config.executor;
    let limit_step = ex.max_speed_mm_s / hz;
    let total = truth.len();
    let mut latency_rng = ChaCha8Rng::seed_from_u64(config.seed);
    latency_rng.set_stream(7);
    let emulator_seed = config.emulator.seed ^ config.seed.rotate_left(17);

    let mut inference_count = 0usize;
    let mut predict = |snapshot: usize| -> Result<ActionChunk> {
        let window = truth.window(snapshot, h)?.with_start_tick(snapshot as u64);
        let noise = config.emulator.with_seed(transition_seed(emulator_seed, 0, inference_count));
        inference_count += 1;
        emulate_policy(&window, &noise, model)
    };

    // Codec-based strategies start from a decoded chunk and switch to one
    // when no step elapsed during inference.
    let project = |chunk: ActionChunk| -> Result<ActionChunk> {
        match (config.strategy, model) {
            (Strategy::Rtr | Strategy::Roundtrip, Some(m)) => codec::roundtrip(m, &chunk),
            _ => Ok(chunk),
        }
    };
    let mut active = project(predict(0)?)?;
    let mut row = 0usize;
    let mut chunk_id = 0usize;
    let mut executed: Vec<f64> = truth.samples().row(0).to_vec();
    let mut last_command: Option<Vec<f64>> = None;
    let mut pending: Option<Pending> = None;
    let mut ticks = Vec::new();
    let mut totals = TraceTotals::default();
    let mut tick: u64 = 0;
    let mut starving = false;
    let max_ticks = (total as u64 + 10) * 1000;

    // State of the command currently being executed.
    let mut move_from: Vec<f64> = executed.clone();
    let mut move_target: Option<Vec<f64>> = None;
    let mut move_ticks = 0usize;
    let mut move_done = 0usize;
    let mut move_rows = 0usize;

    let progress_of = |active: &ActionChunk, row: usize| active.start_tick() as usize + row;

    while progress_of(&active, row) < total || move_target.is_some() {
        if tick > max_ticks {
            return Err(Error::InvalidArgument("simulation did not terminate".into()));
        }
        let mut event = TraceEvent::None;

        // Inference completion: switch chunks.
        if let Some(p) = pending.as_ref() {
            if p.ready_tick <= tick && move_target.is_none() {
                let p = pending.take().expect("checked");
                let l = p.executed_since;
                let (next, next_row) = if l == 0 {
                    (project(p.chunk)?, 0)
                } else {
                    let ctx = TransitionContext::new(active.clone(), p.cursor, l, p.chunk)?;
                    (apply_strategy(&ctx, config.strategy, model)?.full, l)
                };
                active = next;
                row = next_row;
                chunk_id += 1;
                totals.transitions += 1;
                totals.switch_delays_ticks.push(tick - p.start_tick);
                totals.latency_steps.push(l);
                event = TraceEvent::ChunkSwitch;
                starving = false;
                if progress_of(&active, row) >= total {
                    break;
                }
            }
        }

        // Inference trigger after `window` actions of the active chunk.
        if pending.is_none() && row >= config.window && move_target.is_none() {
            let snapshot = progress_of(&active, row);
            if snapshot < total {
                let s = latency::sample(&config.latency, &mut latency_rng);
                let delay = (s.total_ms() * hz / 1000.0 - 1e-9).ceil().max(0.0) as u64;
                let chunk = predict(snapshot)?;
                pending = Some(Pending { ready_tick: tick + delay, start_tick: tick, cursor: row, executed_since: 0, chunk });
                if event == TraceEvent::None {
                    event = TraceEvent::InferenceStart;
                }
                if delay == 0 {
                    continue;
                }
            }
        }

        // Start the next command if idle.
        let mut new_command = false;
        if move_target.is_none() {
            if row < h && progress_of(&active, row) < total {
                let rows = step.min(h - row).min(total - progress_of(&active, row));
                let target = active.row(row + rows - 1).to_vec();
                let d = xyz_distance(&target, &executed, &pos);
                move_ticks = match ex.mode {
                    ExecutorMode::Streaming => {
                        if ex.governed && d > limit_step {
                            ((d / limit_step) - 1e-9).ceil() as usize
                        } else {
                            1
                        }
                    }
                    ExecutorMode::PointToPoint => ex.trapezoid_ticks(d, hz).max(rows),
                };
                if let Some(prev) = &last_command {
                    if xyz_distance(&target, prev, &pos) * hz / rows as f64 > DEFAULT_SPEED_LIMIT_MM_S {
                        totals.exceed_count += 1;
                    }
                }
                last_command = Some(target.clone());
                move_from = executed.clone();
                move_target = Some(target);
                move_done = 0;
                move_rows = rows;
                new_command = true;
            } else {
                // Chunk exhausted before the next one arrived.
                if !starving {
                    totals.starvation_events += 1;
                    starving = true;
                }
                totals.starvation_ticks += 1;
                ticks.push(TickRecord {
                    tick,
                    progress: progress_of(&active, row).min(total - 1),
                    commanded: last_command.clone().unwrap_or_else(|| executed.clone()),
                    executed: executed.clone(),
                    speed_mm_s: 0.0,
                    stalled: true,
                    starved: true,
                    new_command: false,
                    chunk_id,
                    event,
                });
                tick += 1;
                continue;
            }
        }

        // Advance the current command by one tick.
        let target = move_target.clone().expect("command in flight");
        move_done += 1;
        let w = match ex.mode {
            ExecutorMode::Streaming => move_done as f64 / move_ticks as f64,
            ExecutorMode::PointToPoint => {
                let d = xyz_distance(&target, &move_from, &pos);
                if move_done >= move_ticks {
                    1.0
                } else {
                    ex.trapezoid_fraction(d, move_done as f64 / hz)
                }
            }
        };
        let next_pose = if move_done >= move_ticks { target.clone() } else { lerp(&move_from, &target, w) };
        let speed = xyz_distance(&next_pose, &executed, &pos) * hz;
        let nominal = match ex.mode {
            ExecutorMode::Streaming => 1,
            ExecutorMode::PointToPoint => move_rows,
        };
        let stalled = move_done > nominal;
        if stalled {
            totals.stall_ticks += 1;
        }
        ticks.push(TickRecord {
            tick,
            progress: progress_of(&active, row),
            commanded: target,
            executed: next_pose.clone(),
            speed_mm_s: speed,
            stalled,
            starved: false,
            new_command,
            chunk_id,
            event,
        });
        executed = next_pose;
        tick += 1;
        if move_done >= move_ticks {
            move_target = None;
            row += move_rows;
            if let Some(p) = pending.as_mut() {
                p.executed_since += move_rows;
            }
        }
    }
    totals.end_to_end_latency_s = ticks.len() as f64 / hz;
    Ok(ExecutionTrace {
        control_hz: hz,
        channel_names: profile.channel_names().to_vec(),
        position_indices: pos,
        ticks,
        totals,
    })
}

/// Metrics of a closed-loop run: deviation of the command log from the
/// ground truth at the same progress index, smoothness of the executed
/// poses, exceed count of the commands, and wall-clock duration.
pub fn trace_metrics(trace: &ExecutionTrace, truth: &Trajectory) -> Result<MetricReport> {
    if trace.ticks.is_empty() {
        return arg_err("empty trace");
    }
    let profile = std::sync::Arc::new(truth.profile().with_control_frequency(trace.control_hz)?);
    let log = trace.command_log();
    let cmd = Tensor2::from_fn(log.len(), profile.channel_count(), |r, c| log[r].1[c]);
    let ref_rows = Tensor2::from_fn(log.len(), profile.channel_count(), |r, c| truth.samples().get(log[r].0.min(truth.len() - 1), c));
    let mut report = MetricReport::default();
    report.set_deviation(deviation(&ActionChunk::new(cmd, profile.clone(), 0)?, &ActionChunk::new(ref_rows, profile.clone(), 0)?)?);
    let exec = Tensor2::from_fn(trace.ticks.len(), profile.channel_count(), |r, c| trace.ticks[r].executed[c]);
    let exec = ActionChunk::new(exec, profile, 0)?;
    if exec.horizon() >= 4 {
        report.set_smoothness(smoothness(&exec, TimeUnit::Step)?);
    }
    report.exceed_count = Some(trace.totals.exceed_count);
    report.end_to_end_latency_s = Some(trace.totals.end_to_end_latency_s);
    Ok(report)
}
