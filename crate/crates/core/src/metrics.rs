//! Trajectory metrics: deviation, finite-difference smoothness, exceed count,
//! and the chunk-to-chunk continuity measures.
//!
//! Orientation channels are roll-pitch-yaw in degrees. Every difference taken
//! on them is the shortest signed angle, so 179° → −179° is a 2° step.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::numerics::Tensor2;
use crate::types::{ActionChunk, ActionProfile};

/// Commanded speeds above this are unsafe (2 mm per step at 60 Hz).
pub const DEFAULT_SPEED_LIMIT_MM_S: f64 = 120.0;

/// Time step used by the finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    /// Δt = 1: per-step differences, the scale smoothness tables are reported in.
    #[default]
    Step,
    /// Δt = 1 / control frequency.
    Physical,
}

impl TimeUnit {
    pub fn dt(self, profile: &ActionProfile) -> f64 {
        match self {
            TimeUnit::Step => 1.0,
            TimeUnit::Physical => 1.0 / profile.control_frequency_hz(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelSet {
    Position,
    Orientation,
    Indices(Vec<usize>),
}

impl ChannelSet {
    pub fn resolve(&self, profile: &ActionProfile) -> Result<Vec<usize>> {
        let idx = match self {
            ChannelSet::Position => profile.position_indices().to_vec(),
            ChannelSet::Orientation => profile.orientation_indices().to_vec(),
            ChannelSet::Indices(v) => v.clone(),
        };
        if let Some(&bad) = idx.iter().find(|&&i| i >= profile.channel_count()) {
            return dim_err(format!("channel {bad} out of range"));
        }
        Ok(idx)
    }
}

/// A value split into its Cartesian (mm) and orientation (degree) parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupPair {
    pub xyz: f64,
    pub rpy: f64,
}

/// Wraps an angle difference in degrees into (−180, 180].
pub fn wrap_degrees(d: f64) -> f64 {
    let w = (d + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

fn channel_delta(profile: &ActionProfile, channel: usize, a: f64, b: f64) -> f64 {
    if profile.is_orientation(channel) {
        wrap_degrees(a - b)
    } else {
        a - b
    }
}

fn mean_abs_over(profile: &ActionProfile, idx: &[usize], rows: impl Iterator<Item = (usize, usize)>, a: &Tensor2, b: &Tensor2) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ra, rb) in rows {
        for &c in idx {
            sum += channel_delta(profile, c, a.get(ra, c), b.get(rb, c)).abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn check_same_shape(a: &ActionChunk, b: &ActionChunk) -> Result<()> {
    a.ensure_compatible(b)?;
    if a.horizon() != b.horizon() {
        return dim_err(format!("chunk horizons {} vs {}", a.horizon(), b.horizon()));
    }
    Ok(())
}

/// Mean absolute error over position entries (mm) and orientation entries (°).
pub fn deviation(predicted: &ActionChunk, truth: &ActionChunk) -> Result<GroupPair> {
    check_same_shape(predicted, truth)?;
    let p = predicted.profile();
    let rows = || (0..truth.horizon()).map(|r| (r, r));
    Ok(GroupPair {
        xyz: mean_abs_over(p, p.position_indices(), rows(), predicted.data(), truth.data()),
        rpy: mean_abs_over(p, p.orientation_indices(), rows(), predicted.data(), truth.data()),
    })
}

/// Mean absolute error of each channel separately.
pub fn deviation_per_channel(predicted: &ActionChunk, truth: &ActionChunk) -> Result<Vec<f64>> {
    check_same_shape(predicted, truth)?;
    let p = predicted.profile();
    Ok((0..p.channel_count())
        .map(|c| mean_abs_over(p, &[c], (0..truth.horizon()).map(|r| (r, r)), predicted.data(), truth.data()))
        .collect())
}

/// Selected columns, with orientation columns unwrapped so that consecutive
/// samples differ by their shortest signed angle.
fn selected_columns(chunk: &ActionChunk, set: &ChannelSet) -> Result<Vec<Vec<f64>>> {
    let profile = chunk.profile();
    let idx = set.resolve(profile)?;
    Ok(idx
        .iter()
        .map(|&c| {
            let mut col = chunk.data().column(c);
            if profile.is_orientation(c) {
                for t in 1..col.len() {
                    col[t] = col[t - 1] + wrap_degrees(col[t] - col[t - 1]);
                }
            }
            col
        })
        .collect())
}

fn finite_difference(chunk: &ActionChunk, set: &ChannelSet, unit: TimeUnit, coeffs: &[f64]) -> Result<Tensor2> {
    let order = coeffs.len() - 1;
    if chunk.horizon() < coeffs.len() {
        return dim_err(format!(
            "order-{order} difference needs at least {} rows, chunk has {}",
            coeffs.len(),
            chunk.horizon()
        ));
    }
    let cols = selected_columns(chunk, set)?;
    let scale = unit.dt(chunk.profile()).powi(order as i32);
    let n = chunk.horizon() - order;
    Ok(Tensor2::from_fn(n, cols.len(), |t, j| {
        let x = &cols[j];
        coeffs.iter().enumerate().map(|(k, w)| w * x[t + k]).sum::<f64>() / scale
    }))
}

/// Second-order difference `(x[t+2] − 2x[t+1] + x[t]) / Δt²`, one row per t.
pub fn acceleration(chunk: &ActionChunk, set: &ChannelSet, unit: TimeUnit) -> Result<Tensor2> {
    finite_difference(chunk, set, unit, &[1.0, -2.0, 1.0])
}

/// Third-order difference `(x[t+3] − 3x[t+2] + 3x[t+1] − x[t]) / Δt³`.
pub fn jerk(chunk: &ActionChunk, set: &ChannelSet, unit: TimeUnit) -> Result<Tensor2> {
    finite_difference(chunk, set, unit, &[-1.0, 3.0, -3.0, 1.0])
}

/// Mean Euclidean norm of the rows; 0 for an empty matrix.
pub fn mean_row_norm(t: &Tensor2) -> f64 {
    if t.rows() == 0 {
        return 0.0;
    }
    (0..t.rows()).map(|r| t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / t.rows() as f64
}

/// Mean acceleration and jerk norms for the position and orientation groups.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Smoothness {
    pub accel_xyz: f64,
    pub jerk_xyz: f64,
    pub accel_rpy: f64,
    pub jerk_rpy: f64,
}

pub fn smoothness(chunk: &ActionChunk, unit: TimeUnit) -> Result<Smoothness> {
    Ok(Smoothness {
        accel_xyz: mean_row_norm(&acceleration(chunk, &ChannelSet::Position, unit)?),
        jerk_xyz: mean_row_norm(&jerk(chunk, &ChannelSet::Position, unit)?),
        accel_rpy: mean_row_norm(&acceleration(chunk, &ChannelSet::Orientation, unit)?),
        jerk_rpy: mean_row_norm(&jerk(chunk, &ChannelSet::Orientation, unit)?),
    })
}

/// Per-step position displacement, as a speed in mm/s.
pub fn step_speeds(chunk: &ActionChunk) -> Vec<f64> {
    let p = chunk.profile();
    let hz = p.control_frequency_hz();
    (1..chunk.horizon())
        .map(|t| {
            let (a, b) = (chunk.row(t - 1), chunk.row(t));
            p.position_indices().iter().map(|&c| (b[c] - a[c]).powi(2)).sum::<f64>().sqrt() * hz
        })
        .collect()
}

/// Number of steps whose implied speed strictly exceeds `limit_mm_s`.
pub fn exceed_count(chunk: &ActionChunk, limit_mm_s: f64) -> usize {
    step_speeds(chunk).into_iter().filter(|&s| s > limit_mm_s).count()
}

/// Mean absolute difference over the rows of two chunks that share ticks.
pub fn overlap_diff(prev: &ActionChunk, next: &ActionChunk) -> Result<GroupPair> {
    prev.ensure_compatible(next)?;
    if prev.horizon() == 0 || next.horizon() == 0 {
        return dim_err("overlap of an empty chunk");
    }
    let lo = prev.start_tick().max(next.start_tick());
    let hi = prev.end_tick().min(next.end_tick());
    if lo > hi {
        return dim_err(format!(
            "chunks [{}, {}] and [{}, {}] do not overlap",
            prev.start_tick(),
            prev.end_tick(),
            next.start_tick(),
            next.end_tick()
        ));
    }
    let p = prev.profile();
    let rows = || (lo..=hi).map(|t| ((t - prev.start_tick()) as usize, (t - next.start_tick()) as usize));
    Ok(GroupPair {
        xyz: mean_abs_over(p, p.position_indices(), rows(), prev.data(), next.data()),
        rpy: mean_abs_over(p, p.orientation_indices(), rows(), prev.data(), next.data()),
    })
}

/// Distance between the last row of `prev` and the first row of `next` that
/// comes after it in time: Euclidean over xyz (mm) and over rpy (°).
pub fn boundary_gap(prev: &ActionChunk, next: &ActionChunk) -> Result<GroupPair> {
    prev.ensure_compatible(next)?;
    if prev.horizon() == 0 {
        return dim_err("boundary gap of an empty chunk");
    }
    let last = prev.end_tick();
    if next.start_tick() > last + 1 {
        return dim_err(format!("next chunk starts at {} leaving a hole after tick {last}", next.start_tick()));
    }
    if next.horizon() == 0 || next.end_tick() <= last {
        return dim_err(format!("next chunk has no row after tick {last}"));
    }
    let j = (last + 1 - next.start_tick()) as usize;
    let (a, b) = (prev.row(prev.horizon() - 1), next.row(j));
    let p = prev.profile();
    let norm = |idx: &[usize]| idx.iter().map(|&c| channel_delta(p, c, b[c], a[c]).powi(2)).sum::<f64>().sqrt();
    Ok(GroupPair { xyz: norm(p.position_indices()), rpy: norm(p.orientation_indices()) })
}

/// Metrics for one evaluation run. Fields that a run does not produce are
/// `None` and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub deviation_xyz: Option<f64>,
    pub deviation_rpy: Option<f64>,
    pub accel_xyz: Option<f64>,
    pub jerk_xyz: Option<f64>,
    pub accel_rpy: Option<f64>,
    pub jerk_rpy: Option<f64>,
    pub exceed_count: Option<u64>,
    pub overlap_diff_xyz: Option<f64>,
    pub overlap_diff_rpy: Option<f64>,
    pub boundary_gap_xyz: Option<f64>,
    pub boundary_gap_rpy: Option<f64>,
    pub end_to_end_latency_s: Option<f64>,
}

impl MetricReport {
    pub fn set_deviation(&mut self, d: GroupPair) {
        self.deviation_xyz = Some(d.xyz);
        self.deviation_rpy = Some(d.rpy);
    }

    pub fn set_smoothness(&mut self, s: Smoothness) {
        self.accel_xyz = Some(s.accel_xyz);
        self.jerk_xyz = Some(s.jerk_xyz);
        self.accel_rpy = Some(s.accel_rpy);
        self.jerk_rpy = Some(s.jerk_rpy);
    }

    /// `(field name, value)` for every real-valued field, in declaration order.
    pub fn fields(&self) -> [(&'static str, Option<f64>); 12] {
        [
            ("deviation_xyz", self.deviation_xyz),
            ("deviation_rpy", self.deviation_rpy),
            ("accel_xyz", self.accel_xyz),
            ("jerk_xyz", self.jerk_xyz),
            ("accel_rpy", self.accel_rpy),
            ("jerk_rpy", self.jerk_rpy),
            ("exceed_count", self.exceed_count.map(|v| v as f64)),
            ("overlap_diff_xyz", self.overlap_diff_xyz),
            ("overlap_diff_rpy", self.overlap_diff_rpy),
            ("boundary_gap_xyz", self.boundary_gap_xyz),
            ("boundary_gap_rpy", self.boundary_gap_rpy),
            ("end_to_end_latency_s", self.end_to_end_latency_s),
        ]
    }
}
