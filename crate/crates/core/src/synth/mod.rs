//! Synthetic demonstrations and policy emulators.
//!
//! Trajectories are chains of quintic Hermite segments between task
//! keyframes. Every segment starts and ends with zero acceleration, so
//! position, velocity and acceleration are continuous across keyframes.

mod corpus;
mod matched;
mod noise;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use corpus::{build_chunk_set, export_corpus, CorpusEntry, CorpusManifest, CORPUS_MANIFEST_FILE};
pub use matched::{matched_energy_pair, MatchedPair, MATCH_TOLERANCE};
pub use noise::{emulate_policy, interpolate_knots, quantize, Interp, NoiseKind, NoiseModel};

use crate::error::{arg_err, Result};
use crate::numerics::Tensor2;
use crate::types::{ActionChunk, ActionProfile, Trajectory};

/// Horizon used when checking that a task is long enough to be chunked.
pub const DEFAULT_HORIZON: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// A long straight stroke with slight lateral waviness and pen lifts.
    LineWrite,
    /// Back-and-forth sweeps along a circular arc.
    WipeArc,
    /// Repeated press-draw-lift strokes along one axis.
    PeelStroke,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::LineWrite, TaskKind::WipeArc, TaskKind::PeelStroke];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::LineWrite => "line_write",
            TaskKind::WipeArc => "wipe_arc",
            TaskKind::PeelStroke => "peel_stroke",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub duration_s: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude_mm: f64,
    #[serde(default = "default_speed")]
    pub base_speed_mm_s: f64,
    pub seed: u64,
}

fn default_amplitude() -> f64 {
    40.0
}

fn default_speed() -> f64 {
    12.0
}

impl TaskSpec {
    pub fn new(kind: TaskKind, duration_s: f64, seed: u64) -> Self {
        Self { kind, duration_s, amplitude_mm: default_amplitude(), base_speed_mm_s: default_speed(), seed }
    }

    pub fn validate(&self, control_hz: f64) -> Result<()> {
        if !(self.amplitude_mm.is_finite() && self.amplitude_mm > 0.0) {
            return arg_err(format!("task amplitude must be positive, got {}", self.amplitude_mm));
        }
        if !(self.base_speed_mm_s.is_finite() && self.base_speed_mm_s > 0.0) {
            return arg_err(format!("task speed must be positive, got {}", self.base_speed_mm_s));
        }
        if !(self.duration_s.is_finite() && self.duration_s * control_hz >= DEFAULT_HORIZON as f64) {
            return arg_err(format!(
                "task duration {} s is shorter than one {DEFAULT_HORIZON}-step chunk at {control_hz} Hz",
                self.duration_s
            ));
        }
        Ok(())
    }

    pub fn samples(&self, control_hz: f64) -> usize {
        (self.duration_s * control_hz).round() as usize
    }
}

/// Pose at a keyframe: x, y, z (mm), roll, pitch, yaw (degrees), grip (mm).
type Pose = [f64; 7];

struct Keyframe {
    pose: Pose,
    /// Forces zero velocity (stroke ends, turnarounds, lifts).
    stop: bool,
}

fn kf(pose: Pose, stop: bool) -> Keyframe {
    Keyframe { pose, stop }
}

fn keyframes(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Vec<Keyframe> {
    let a = spec.amplitude_mm;
    let origin = [
        300.0 + rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
        150.0 + rng.random_range(-5.0..5.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-10.0..10.0),
        rng.random_range(20.0..30.0),
    ];
    let at = |dx: f64, dy: f64, dz: f64, dr: [f64; 3], grip: f64| -> Pose {
        [
            origin[0] + dx,
            origin[1] + dy,
            origin[2] + dz,
            origin[3] + dr[0],
            origin[4] + dr[1],
            origin[5] + dr[2],
            origin[6] + grip,
        ]
    };
    // Enough keyframes to cover the duration; trimmed by the caller.
    let budget = spec.duration_s * spec.base_speed_mm_s * 2.0 + 4.0 * a;
    let mut out = vec![kf(at(0.0, 0.0, 0.0, [0.0; 3], 0.0), true)];
    let mut travelled = 0.0;
    match spec.kind {
        TaskKind::LineWrite => {
            let mut y0 = 0.0;
            while travelled < budget {
                let pieces = rng.random_range(4..7);
                for i in 1..=pieces {
                    let x = a * i as f64 / pieces as f64;
                    let wobble = rng.random_range(-0.05..0.05) * a;
                    let tilt = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0)];
                    out.push(kf(at(x, y0 + wobble, rng.random_range(-0.5..0.5), tilt, 0.0), i == pieces));
                }
                out.push(kf(at(a, y0, 10.0, [0.0; 3], 0.0), true));
                y0 += rng.random_range(8.0..15.0);
                out.push(kf(at(0.0, y0, 10.0, [0.0; 3], 0.0), true));
                out.push(kf(at(0.0, y0, 0.0, [0.0; 3], 0.0), true));
                travelled += 2.0 * a + 20.0;
            }
        }
        TaskKind::WipeArc => {
            let r = a / 2.0;
            let mut forward = true;
            while travelled < budget {
                let span = rng.random_range(50.0..70.0_f64).to_radians();
                let n = 6;
                let press = rng.random_range(-1.5..0.0);
                for i in 0..=n {
                    let u = i as f64 / n as f64;
                    let th = if forward { -span + 2.0 * span * u } else { span - 2.0 * span * u };
                    let yaw = th.to_degrees() * 0.3;
                    let pose = at(r * th.sin(), r * (1.0 - th.cos()), press, [0.0, rng.random_range(-1.0..1.0), yaw], 0.0);
                    if i > 0 {
                        out.push(kf(pose, i == n));
                    }
                }
                forward = !forward;
                travelled += 2.0 * span * r;
            }
        }
        TaskKind::PeelStroke => {
            let len = 0.6 * a;
            let mut y0 = 0.0;
            while travelled < budget {
                let grip = rng.random_range(-2.0..2.0);
                out.push(kf(at(0.0, y0, -5.0, [0.0, 8.0, 0.0], grip), true));
                let pieces = 3;
                for i in 1..=pieces {
                    let x = -len * i as f64 / pieces as f64;
                    let pitch = 8.0 - 16.0 * i as f64 / pieces as f64;
                    out.push(kf(at(x, y0 + rng.random_range(-1.0..1.0), -5.0 - rng.random_range(0.0..1.5), [0.0, pitch, 0.0], grip), i == pieces));
                }
                out.push(kf(at(-len, y0, 15.0, [0.0, 0.0, 0.0], grip), true));
                y0 += rng.random_range(4.0..7.0);
                out.push(kf(at(0.0, y0, 15.0, [0.0, 0.0, 0.0], grip), true));
                travelled += 2.0 * len + 40.0;
            }
        }
    }
    out
}

/// Quintic Hermite basis for zero end accelerations:
/// `(p0, v0·T, v1·T, p1)` weights and their first three derivatives in s.
fn hermite(s: f64) -> [[f64; 4]; 4] {
    let (s2, s3, s4, s5) = (s * s, s * s * s, s.powi(4), s.powi(5));
    [
        [1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5, s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5, -4.0 * s3 + 7.0 * s4 - 3.0 * s5, 10.0 * s3 - 15.0 * s4 + 6.0 * s5],
        [-30.0 * s2 + 60.0 * s3 - 30.0 * s4, 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4, -12.0 * s2 + 28.0 * s3 - 15.0 * s4, 30.0 * s2 - 60.0 * s3 + 30.0 * s4],
        [-60.0 * s + 180.0 * s2 - 120.0 * s3, -36.0 * s + 96.0 * s2 - 60.0 * s3, -24.0 * s + 84.0 * s2 - 60.0 * s3, 60.0 * s - 180.0 * s2 + 120.0 * s3],
        [-60.0 + 360.0 * s - 360.0 * s2, -36.0 + 192.0 * s - 180.0 * s2, -24.0 + 168.0 * s - 180.0 * s2, 60.0 - 360.0 * s + 360.0 * s2],
    ]
}

/// Piecewise quintic path through keyframes with zero acceleration at every
/// keyframe.
#[derive(Debug, Clone)]
pub struct QuinticPath {
    times: Vec<f64>,
    poses: Vec<Pose>,
    velocities: Vec<Pose>,
}

impl QuinticPath {
    fn build(frames: &[Keyframe], speed: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut times = vec![0.0];
        for w in frames.windows(2) {
            let d: f64 = (0..3).map(|k| (w[1].pose[k] - w[0].pose[k]).powi(2)).sum::<f64>().sqrt();
            let rot: f64 = (3..6).map(|k| (w[1].pose[k] - w[0].pose[k]).abs()).fold(0.0, f64::max);
            let grip = (w[1].pose[6] - w[0].pose[6]).abs();
            let base = (d / speed).max(rot / (0.5 * speed)).max(grip / speed).max(0.4);
            times.push(times.last().unwrap() + base * rng.random_range(0.9..1.1));
        }
        let n = frames.len();
        let poses: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
        let mut velocities = vec![[0.0; 7]; n];
        for i in 1..n.saturating_sub(1) {
            if frames[i].stop {
                continue;
            }
            let dt = times[i + 1] - times[i - 1];
            for k in 0..7 {
                velocities[i][k] = (poses[i + 1][k] - poses[i - 1][k]) / dt;
            }
        }
        Self { times, poses, velocities }
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Derivative `order` (0..=3) of every channel at time `t`; clamped to
    /// the path's time span.
    pub fn eval(&self, t: f64, order: usize) -> [f64; 7] {
        let t = t.clamp(0.0, self.duration());
        let seg = match self.times.partition_point(|&x| x <= t) {
            0 => 0,
            i => (i - 1).min(self.times.len() - 2),
        };
        self.eval_segment(seg, t, order)
    }

    fn eval_segment(&self, seg: usize, t: f64, order: usize) -> [f64; 7] {
        let (t0, t1) = (self.times[seg], self.times[seg + 1]);
        let span = t1 - t0;
        let s = ((t - t0) / span).clamp(0.0, 1.0);
        let b = hermite(s)[order];
        let scale = span.powi(order as i32);
        let mut out = [0.0; 7];
        for (k, o) in out.iter_mut().enumerate() {
            let (p0, p1) = (self.poses[seg][k], self.poses[seg + 1][k]);
            let (v0, v1) = (self.velocities[seg][k] * span, self.velocities[seg + 1][k] * span);
            *o = (b[0] * p0 + b[1] * v0 + b[2] * v1 + b[3] * p1) / scale;
        }
        out
    }

    /// Largest |acceleration| mismatch between the two sides of any
    /// interior keyframe.
    pub fn max_boundary_accel_jump(&self) -> f64 {
        let mut worst = 0.0_f64;
        for seg in 1..self.times.len() - 1 {
            let left = self.eval_segment(seg - 1, self.times[seg], 2);
            let right = self.eval_segment(seg, self.times[seg], 2);
            for k in 0..7 {
                worst = worst.max((left[k] - right[k]).abs());
            }
        }
        worst
    }
}

/// Keyframe path of a task, before sampling.
pub fn task_path(spec: &TaskSpec) -> QuinticPath {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frames = keyframes(spec, &mut rng);
    QuinticPath::build(&frames, spec.base_speed_mm_s, &mut rng)
}

/// Samples a task at the default profile's control rate (60 Hz).
pub fn generate_trajectory(spec: &TaskSpec) -> Result<Trajectory> {
    let profile = Arc::new(ActionProfile::default());
    let hz = profile.control_frequency_hz();
    spec.validate(hz)?;
    let path = task_path(spec);
    let n = spec.samples(hz);
    let samples = Tensor2::from_fn(n, 7, |_, _| 0.0);
    let mut samples = samples;
    for r in 0..n {
        samples.row_mut(r).copy_from_slice(&path.eval(r as f64 / hz, 0));
    }
    Trajectory::new(samples, profile)
}

/// Sliding windows of `horizon` rows every `stride` ticks.
pub fn chunk_dataset(traj: &Trajectory, horizon: usize, stride: usize) -> Result<Vec<ActionChunk>> {
    if stride == 0 {
        return arg_err("chunk stride must be at least 1");
    }
    if horizon == 0 || traj.len() < horizon {
        return arg_err(format!("trajectory of {} samples is shorter than horizon {horizon}", traj.len()));
    }
    (0..=(traj.len() - horizon) / stride).map(|i| traj.window(i * stride, horizon)).collect()
}
