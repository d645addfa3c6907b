use std::sync::Arc;

use latact::metrics::{acceleration, deviation, exceed_count, jerk, overlap_diff, ChannelSet, TimeUnit};
use latact::synth::{chunk_dataset, emulate_policy, generate_trajectory, quantize, Interp, NoiseModel};
use latact::{ActionChunk, ActionProfile, TaskKind, TaskSpec, Tensor2};
use proptest::prelude::*;

fn profile() -> Arc<ActionProfile> {
    Arc::new(ActionProfile::default())
}

fn chunk_from(rows: usize, values: &[f64], start: u64) -> ActionChunk {
    ActionChunk::new(Tensor2::from_fn(rows, 7, |r, c| values[r * 7 + c]), profile(), start).unwrap()
}

/// Rows of bounded values; orientation stays well inside (−180, 180).
fn chunk_strategy(min_rows: usize, max_rows: usize) -> impl Strategy<Value = ActionChunk> {
    (min_rows..=max_rows).prop_flat_map(|rows| {
        prop::collection::vec(-60.0f64..60.0, rows * 7).prop_map(move |v| chunk_from(rows, &v, 0))
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn shifted(chunk: &ActionChunk, offset: &[f64; 7]) -> ActionChunk {
    let d = chunk.data();
    ActionChunk::new(Tensor2::from_fn(d.rows(), 7, |r, c| d.get(r, c) + offset[c]), profile(), chunk.start_tick()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jerk_is_first_difference_of_acceleration(chunk in chunk_strategy(4, 40), physical in any::<bool>()) {
        let unit = if physical { TimeUnit::Physical } else { TimeUnit::Step };
        let dt = unit.dt(&profile());
        for set in [ChannelSet::Position, ChannelSet::Orientation] {
            let a = acceleration(&chunk, &set, unit).unwrap();
            let j = jerk(&chunk, &set, unit).unwrap();
            prop_assert_eq!(j.rows(), a.rows() - 1);
            for t in 0..j.rows() {
                for c in 0..j.cols() {
                    let expected = (a.get(t + 1, c) - a.get(t, c)) / dt;
                    prop_assert!(close(j.get(t, c), expected, 1e-9), "{} vs {}", j.get(t, c), expected);
                }
            }
        }
    }

    #[test]
    fn translation_leaves_derivatives_unchanged(chunk in chunk_strategy(4, 30), off in prop::array::uniform7(-50.0f64..50.0)) {
        let moved = shifted(&chunk, &off);
        for set in [ChannelSet::Position, ChannelSet::Orientation] {
            let (a0, a1) = (acceleration(&chunk, &set, TimeUnit::Step).unwrap(), acceleration(&moved, &set, TimeUnit::Step).unwrap());
            let (j0, j1) = (jerk(&chunk, &set, TimeUnit::Step).unwrap(), jerk(&moved, &set, TimeUnit::Step).unwrap());
            for (x, y) in a0.as_slice().iter().zip(a1.as_slice()).chain(j0.as_slice().iter().zip(j1.as_slice())) {
                prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
            }
        }
        prop_assert_eq!(exceed_count(&chunk, 120.0), exceed_count(&moved, 120.0));
        let self_overlap = overlap_diff(&moved, &moved).unwrap();
        prop_assert_eq!((self_overlap.xyz, self_overlap.rpy), (0.0, 0.0));
    }

    #[test]
    fn time_reversal(chunk in chunk_strategy(4, 30)) {
        let d = chunk.data();
        let n = d.rows();
        let rev = ActionChunk::new(Tensor2::from_fn(n, 7, |r, c| d.get(n - 1 - r, c)), profile(), 0).unwrap();
        let (a, ar) = (acceleration(&chunk, &ChannelSet::Position, TimeUnit::Step).unwrap(), acceleration(&rev, &ChannelSet::Position, TimeUnit::Step).unwrap());
        for t in 0..a.rows() {
            for c in 0..3 {
                prop_assert!((ar.get(t, c) - a.get(a.rows() - 1 - t, c)).abs() < 1e-9);
            }
        }
        let (j, jr) = (jerk(&chunk, &ChannelSet::Position, TimeUnit::Step).unwrap(), jerk(&rev, &ChannelSet::Position, TimeUnit::Step).unwrap());
        for t in 0..j.rows() {
            for c in 0..3 {
                prop_assert!((jr.get(t, c) + j.get(j.rows() - 1 - t, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deviation_is_a_metric(
        (a, b, c) in (4usize..20).prop_flat_map(|rows| {
            let v = || prop::collection::vec(-60.0f64..60.0, rows * 7);
            (v(), v(), v()).prop_map(move |(x, y, z)| (chunk_from(rows, &x, 0), chunk_from(rows, &y, 0), chunk_from(rows, &z, 0)))
        })
    ) {
        let ab = deviation(&a, &b).unwrap();
        let ba = deviation(&b, &a).unwrap();
        prop_assert_eq!(ab.xyz, ba.xyz);
        prop_assert!((ab.rpy - ba.rpy).abs() < 1e-12);
        let (ac, cb) = (deviation(&a, &c).unwrap(), deviation(&c, &b).unwrap());
        prop_assert!(ab.xyz <= ac.xyz + cb.xyz + 1e-9);
        prop_assert!(ab.rpy <= ac.rpy + cb.rpy + 1e-9);
        prop_assert_eq!(deviation(&a, &a).unwrap().xyz, 0.0);
    }

    #[test]
    fn exceed_count_is_rotation_invariant(
        chunk in chunk_strategy(2, 40).prop_map(|c| {
            // scale so steps straddle the 2 mm threshold
            let d = c.data();
            ActionChunk::new(Tensor2::from_fn(d.rows(), 7, |r, k| d.get(r, k) * 0.05), profile(), 0).unwrap()
        }),
        (yaw, pitch) in (-3.1f64..3.1, -1.5f64..1.5),
    ) {
        let (cy, sy, cp, sp) = (yaw.cos(), yaw.sin(), pitch.cos(), pitch.sin());
        let rot = [[cy * cp, -sy, cy * sp], [sy * cp, cy, sy * sp], [-sp, 0.0, cp]];
        let d = chunk.data();
        let rotated = ActionChunk::new(
            Tensor2::from_fn(d.rows(), 7, |r, c| if c < 3 { (0..3).map(|k| rot[c][k] * d.get(r, k)).sum() } else { d.get(r, c) }),
            profile(),
            0,
        )
        .unwrap();
        // stay away from ties at the threshold where rounding could flip a count
        let speeds = latact::metrics::step_speeds(&chunk);
        prop_assume!(speeds.iter().all(|s| (s - 120.0).abs() > 1e-6));
        prop_assert_eq!(exceed_count(&chunk, 120.0), exceed_count(&rotated, 120.0));
    }

    #[test]
    fn quantize_is_idempotent(chunk in chunk_strategy(1, 20), bin in 0.1f64..5.0) {
        let once = quantize(&chunk, bin, 0.25).unwrap();
        let twice = quantize(&once, bin, 0.25).unwrap();
        prop_assert_eq!(once.data(), twice.data());
        for (q, x) in once.data().as_slice().iter().zip(chunk.data().as_slice()) {
            prop_assert!((q - x).abs() <= bin / 2.0 + 1e-9);
        }
    }

    #[test]
    fn emulators_preserve_shape(chunk in chunk_strategy(48, 48), seed in any::<u64>(), sigma in 0.0f64..2.0) {
        for noise in [
            NoiseModel::none(),
            NoiseModel::gaussian(sigma, seed),
            NoiseModel::quantize(2.0),
            NoiseModel::lowfreq(15.0, Interp::Linear, sigma, seed),
            NoiseModel::lowfreq(15.0, Interp::Cubic, sigma, seed),
        ] {
            let out = emulate_policy(&chunk, &noise, None).unwrap();
            prop_assert_eq!(out.horizon(), chunk.horizon());
            prop_assert_eq!(out.channels(), chunk.channels());
            prop_assert_eq!(out.start_tick(), chunk.start_tick());
            prop_assert!(Arc::ptr_eq(out.profile(), chunk.profile()) || out.profile() == chunk.profile());
        }
    }

    #[test]
    fn noiseless_linear_lowfreq_hits_truth_at_source_ticks(chunk in chunk_strategy(48, 48)) {
        let out = emulate_policy(&chunk, &NoiseModel::lowfreq(15.0, Interp::Linear, 0.0, 1), None).unwrap();
        for r in (0..48).step_by(4) {
            for c in 0..7 {
                prop_assert!((out.row(r)[c] - chunk.row(r)[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn chunk_count_matches_enumeration(secs in 1.0f64..4.0, horizon in 1usize..60, stride in 1usize..30) {
        let traj = generate_trajectory(&TaskSpec::new(TaskKind::WipeArc, secs, 2)).unwrap();
        let t = traj.len();
        prop_assume!(t >= horizon);
        let chunks = chunk_dataset(&traj, horizon, stride).unwrap();
        let enumerated = (0..).map(|k| k * stride).take_while(|s| s + horizon <= t).count();
        prop_assert_eq!(chunks.len(), enumerated);
        prop_assert_eq!(chunks.len(), (t - horizon) / stride + 1);
        for (k, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.start_tick(), (k * stride) as u64);
            prop_assert_eq!(c.row(0), traj.samples().row(k * stride));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_paths_have_continuous_acceleration(seed in any::<u64>(), kind in prop::sample::select(TaskKind::ALL.to_vec())) {
        let path = latact::synth::task_path(&TaskSpec::new(kind, 6.0, seed));
        prop_assert!(path.max_boundary_accel_jump() <= 1e-9, "{}", path.max_boundary_accel_jump());
    }
}
