//! Domain types: channel profiles, action chunks, latent chunks, trajectories.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::numerics::Tensor2;

/// Channel layout and units of an action vector.
///
/// Position channels are Cartesian xyz in millimetres, orientation channels
/// are roll-pitch-yaw in degrees, and everything else (gripper width) is in
/// millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct ActionProfile {
    channel_names: Vec<String>,
    position_indices: Vec<usize>,
    orientation_indices: Vec<usize>,
    gripper_indices: Vec<usize>,
    control_frequency_hz: f64,
}

#[derive(Serialize, Deserialize)]
struct RawProfile {
    channel_names: Vec<String>,
    position_indices: Vec<usize>,
    orientation_indices: Vec<usize>,
    gripper_indices: Vec<usize>,
    control_frequency_hz: f64,
}

impl TryFrom<RawProfile> for ActionProfile {
    type Error = Error;

    fn try_from(raw: RawProfile) -> Result<Self> {
        ActionProfile::new(
            raw.channel_names,
            raw.position_indices,
            raw.orientation_indices,
            raw.gripper_indices,
            raw.control_frequency_hz,
        )
    }
}

impl From<ActionProfile> for RawProfile {
    fn from(p: ActionProfile) -> Self {
        RawProfile {
            channel_names: p.channel_names,
            position_indices: p.position_indices,
            orientation_indices: p.orientation_indices,
            gripper_indices: p.gripper_indices,
            control_frequency_hz: p.control_frequency_hz,
        }
    }
}

impl ActionProfile {
    pub fn new(
        channel_names: Vec<String>,
        position_indices: Vec<usize>,
        orientation_indices: Vec<usize>,
        gripper_indices: Vec<usize>,
        control_frequency_hz: f64,
    ) -> Result<Self> {
        let c = channel_names.len();
        if c == 0 {
            return arg_err("profile needs at least one channel");
        }
        if !(control_frequency_hz.is_finite() && control_frequency_hz > 0.0) {
            return arg_err(format!("control frequency must be positive, got {control_frequency_hz}"));
        }
        let mut seen = vec![false; c];
        for &i in position_indices.iter().chain(&orientation_indices).chain(&gripper_indices) {
            if i >= c {
                return arg_err(format!("channel index {i} out of range for {c} channels"));
            }
            if seen[i] {
                return arg_err(format!("channel index {i} assigned to more than one group"));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return arg_err(format!("channel {missing} ({}) is not assigned to a group", channel_names[missing]));
        }
        Ok(Self {
            channel_names,
            position_indices,
            orientation_indices,
            gripper_indices,
            control_frequency_hz,
        })
    }

    /// x, y, z, roll, pitch, yaw, grip at 60 Hz.
    pub fn xyz_rpy_grip() -> Self {
        let names = ["x", "y", "z", "roll", "pitch", "yaw", "grip"];
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            vec![0, 1, 2],
            vec![3, 4, 5],
            vec![6],
            60.0,
        )
        .expect("built-in profile is valid")
    }

    pub fn channel_count(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn position_indices(&self) -> &[usize] {
        &self.position_indices
    }

    pub fn orientation_indices(&self) -> &[usize] {
        &self.orientation_indices
    }

    pub fn gripper_indices(&self) -> &[usize] {
        &self.gripper_indices
    }

    pub fn control_frequency_hz(&self) -> f64 {
        self.control_frequency_hz
    }

    pub fn is_orientation(&self, channel: usize) -> bool {
        self.orientation_indices.contains(&channel)
    }

    pub fn with_control_frequency(&self, hz: f64) -> Result<Self> {
        let mut p = self.clone();
        if !(hz.is_finite() && hz > 0.0) {
            return arg_err(format!("control frequency must be positive, got {hz}"));
        }
        p.control_frequency_hz = hz;
        Ok(p)
    }
}

impl Default for ActionProfile {
    fn default() -> Self {
        Self::xyz_rpy_grip()
    }
}

fn check_finite(data: &Tensor2, what: &str) -> Result<()> {
    if data.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// An H×c block of consecutive actions starting at absolute control tick
/// `start_tick`.
///
/// Metrics that need a minimum horizon (three rows for acceleration, four
/// for jerk) check it themselves, so a chunk may be shorter than that.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    data: Tensor2,
    profile: Arc<ActionProfile>,
    start_tick: u64,
}

impl ActionChunk {
    pub fn new(data: Tensor2, profile: Arc<ActionProfile>, start_tick: u64) -> Result<Self> {
        if data.cols() != profile.channel_count() {
            return dim_err(format!(
                "chunk has {} columns but profile has {} channels",
                data.cols(),
                profile.channel_count()
            ));
        }
        check_finite(&data, "action chunk")?;
        Ok(Self { data, profile, start_tick })
    }

    pub fn horizon(&self) -> usize {
        self.data.rows()
    }

    pub fn channels(&self) -> usize {
        self.data.cols()
    }

    pub fn data(&self) -> &Tensor2 {
        &self.data
    }

    pub fn into_data(self) -> Tensor2 {
        self.data
    }

    pub fn profile(&self) -> &Arc<ActionProfile> {
        &self.profile
    }

    pub fn start_tick(&self) -> u64 {
        self.start_tick
    }

    /// Tick of the last row. Undefined (returns `start_tick`) for empty chunks.
    pub fn end_tick(&self) -> u64 {
        self.start_tick + self.horizon().saturating_sub(1) as u64
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    pub fn with_start_tick(mut self, start_tick: u64) -> Self {
        self.start_tick = start_tick;
        self
    }

    /// Rows `[from, to)`, re-based so the first returned row keeps its tick.
    pub fn slice_rows(&self, from: usize, to: usize) -> Result<Self> {
        if from > to || to > self.horizon() {
            return dim_err(format!("row range {from}..{to} outside chunk of {} rows", self.horizon()));
        }
        Ok(Self {
            data: self.data.slice_rows(from, to),
            profile: self.profile.clone(),
            start_tick: self.start_tick + from as u64,
        })
    }

    /// Same profile and shape check used by every binary metric.
    pub fn ensure_compatible(&self, other: &ActionChunk) -> Result<()> {
        if self.profile != other.profile && *self.profile != *other.profile {
            return dim_err("chunks use different action profiles");
        }
        if self.channels() != other.channels() {
            return dim_err(format!("channel count {} vs {}", self.channels(), other.channels()));
        }
        Ok(())
    }
}

/// An h×d latent sequence with its temporal compression factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentChunk {
    data: Tensor2,
    compression: usize,
}

impl LatentChunk {
    pub fn new(data: Tensor2, compression: usize) -> Result<Self> {
        if compression == 0 {
            return arg_err("compression factor must be positive");
        }
        check_finite(&data, "latent chunk")?;
        Ok(Self { data, compression })
    }

    pub fn data(&self) -> &Tensor2 {
        &self.data
    }

    pub fn compression(&self) -> usize {
        self.compression
    }

    /// Horizon of the action chunk this latent decodes to.
    pub fn action_horizon(&self) -> usize {
        self.data.rows() * self.compression
    }
}

/// A full demonstration at the profile's control frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Tensor2,
    profile: Arc<ActionProfile>,
}

impl Trajectory {
    pub fn new(samples: Tensor2, profile: Arc<ActionProfile>) -> Result<Self> {
        if samples.cols() != profile.channel_count() {
            return dim_err(format!(
                "trajectory has {} columns but profile has {} channels",
                samples.cols(),
                profile.channel_count()
            ));
        }
        check_finite(&samples, "trajectory")?;
        Ok(Self { samples, profile })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn samples(&self) -> &Tensor2 {
        &self.samples
    }

    pub fn profile(&self) -> &Arc<ActionProfile> {
        &self.profile
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.profile.control_frequency_hz()
    }

    /// The `horizon` samples starting at `start`. Ticks past the end hold the
    /// final sample, which is what a robot that has finished the task does.
    pub fn window(&self, start: usize, horizon: usize) -> Result<ActionChunk> {
        if self.is_empty() {
            return dim_err("window of an empty trajectory");
        }
        let last = self.len() - 1;
        let c = self.samples.cols();
        let mut data = Tensor2::zeros(horizon, c);
        for i in 0..horizon {
            let src = (start + i).min(last);
            data.row_mut(i).copy_from_slice(self.samples.row(src));
        }
        ActionChunk::new(data, self.profile.clone(), start as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_must_partition_channels() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert!(ActionProfile::new(names.clone(), vec![0], vec![1], vec![2], 60.0).is_ok());
        assert!(ActionProfile::new(names.clone(), vec![0], vec![1], vec![], 60.0).is_err());
        assert!(ActionProfile::new(names.clone(), vec![0, 1], vec![1], vec![2], 60.0).is_err());
        assert!(ActionProfile::new(names.clone(), vec![0], vec![1], vec![3], 60.0).is_err());
        assert!(ActionProfile::new(names, vec![0], vec![1], vec![2], 0.0).is_err());
    }

    #[test]
    fn profile_serde_validates() {
        let p = ActionProfile::default();
        let json = serde_json::to_string(&p).unwrap();
        let back: ActionProfile = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
        let broken = json.replace("\"gripper_indices\":[6]", "\"gripper_indices\":[]");
        assert!(serde_json::from_str::<ActionProfile>(&broken).is_err());
    }

    #[test]
    fn chunk_rejects_non_finite_and_wrong_width() {
        let p = Arc::new(ActionProfile::default());
        let mut t = Tensor2::zeros(4, 7);
        assert!(ActionChunk::new(t.clone(), p.clone(), 0).is_ok());
        t.set(1, 1, f64::NAN);
        assert!(ActionChunk::new(t, p.clone(), 0).is_err());
        assert!(ActionChunk::new(Tensor2::zeros(4, 6), p, 0).is_err());
    }

    #[test]
    fn window_holds_last_sample_past_end() {
        let p = Arc::new(ActionProfile::default());
        let samples = Tensor2::from_fn(5, 7, |r, _| r as f64);
        let traj = Trajectory::new(samples, p).unwrap();
        let w = traj.window(3, 4).unwrap();
        assert_eq!(w.start_tick(), 3);
        assert_eq!(w.row(0)[0], 3.0);
        assert_eq!(w.row(1)[0], 4.0);
        assert_eq!(w.row(3)[0], 4.0);
    }
}
