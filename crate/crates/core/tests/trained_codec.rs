//! Behaviour that only shows up once the codec has been trained.

use std::sync::OnceLock;

use latact::codec::{self, train, TrainHyper, VaeConfig, VaeModel};
use latact::continuity::{apply_strategy, evaluate_continuity, naive_switch, reuse_then_refine, rtr_concat};
use latact::metrics::{boundary_gap, deviation, smoothness, TimeUnit};
use latact::sim::{run, SimConfig};
use latact::synth::{build_chunk_set, generate_trajectory, matched_energy_pair, MATCH_TOLERANCE};
use latact::{ActionChunk, NoiseModel, Strategy, TaskKind, TaskSpec, Tensor2, TransitionContext};

fn specs(base: u64, n: u64) -> Vec<TaskSpec> {
    (0..n).flat_map(|s| TaskKind::ALL.map(|k| TaskSpec::new(k, 8.0, base + s))).collect()
}

fn model() -> &'static VaeModel {
    static MODEL: OnceLock<VaeModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let data = build_chunk_set(&specs(100, 40), 48, 4, Some(1200)).unwrap();
        train(&VaeConfig::default(), &data, &TrainHyper { epochs: 150, ..TrainHyper::default() }).unwrap()
    })
}

fn eval_chunks() -> Vec<ActionChunk> {
    build_chunk_set(&specs(100, 4), 48, 24, None).unwrap()
}

fn recon_mae(model: &VaeModel, chunks: &[ActionChunk]) -> f64 {
    let out = codec::roundtrip_many(model, chunks).unwrap();
    out.iter().zip(chunks).map(|(a, b)| deviation(a, b).unwrap().xyz).sum::<f64>() / chunks.len() as f64
}

fn offset(chunk: &ActionChunk, dx: f64) -> ActionChunk {
    let d = chunk.data();
    ActionChunk::new(Tensor2::from_fn(d.rows(), d.cols(), |r, c| d.get(r, c) + if c == 0 { dx } else { 0.0 }), chunk.profile().clone(), chunk.start_tick()).unwrap()
}

#[test]
fn reconstruction_is_sub_millimetre() {
    let mae = recon_mae(model(), &eval_chunks());
    assert!(mae < 0.5, "{mae}");
    let curve = &model().train_meta().curve;
    assert!(curve.last().unwrap().recon < 0.1 * curve[0].recon);
}

#[test]
fn matched_pairs_hit_the_target_and_latent_side_is_smoother() {
    let chunks = eval_chunks();
    let mut smoother = 0;
    let mut matched = 0;
    let n = 30;
    for seed in 0..n {
        let truth = &chunks[seed as usize % chunks.len()];
        let pair = match matched_energy_pair(truth, 0.5, model(), seed) {
            Ok(p) => p,
            Err(latact::Error::Calibration(_)) => {
                // only when the codec alone already misses by more than the noise
                let recon = deviation(&codec::roundtrip(model(), truth).unwrap(), truth).unwrap().xyz;
                let noised = latact::synth::emulate_policy(truth, &NoiseModel::gaussian(0.5, seed), None).unwrap();
                assert!(recon >= deviation(&noised, truth).unwrap().xyz);
                continue;
            }
            Err(e) => panic!("{e}"),
        };
        matched += 1;
        let rel = (pair.latent_deviation_xyz - pair.action_deviation_xyz).abs() / pair.action_deviation_xyz;
        assert!(rel <= MATCH_TOLERANCE, "{rel}");
        assert_eq!(deviation(&pair.action_noised, truth).unwrap().xyz, pair.action_deviation_xyz);
        assert_eq!(deviation(&pair.latent_noised, truth).unwrap().xyz, pair.latent_deviation_xyz);
        let ja = smoothness(&pair.action_noised, TimeUnit::Step).unwrap().jerk_xyz;
        let jl = smoothness(&pair.latent_noised, TimeUnit::Step).unwrap().jerk_xyz;
        smoother += usize::from(jl < ja);
    }
    assert!(matched * 10 >= n as usize * 8, "{matched}/{n}");
    assert!(smoother * 10 >= matched * 9, "{smoother}/{matched}");
}

#[test]
fn zero_sigma_pair_is_truth_up_to_reconstruction() {
    let truth = &eval_chunks()[3];
    let pair = matched_energy_pair(truth, 0.0, model(), 1).unwrap();
    assert_eq!(pair.action_noised, *truth);
    assert_eq!(pair.latent_sigma, 0.0);
    assert_eq!(pair.latent_noised, codec::roundtrip(model(), truth).unwrap());
}

#[test]
fn consistent_policy_gives_sub_millimetre_rtr_gap() {
    let traj = generate_trajectory(&TaskSpec::new(TaskKind::WipeArc, 8.0, 101)).unwrap();
    let prev = traj.window(48, 48).unwrap();
    let new = traj.window(72, 48).unwrap();
    let ctx = TransitionContext::new(prev.clone(), 24, 24, new).unwrap();
    let refined = reuse_then_refine(&ctx, model()).unwrap();
    assert_eq!(rtr_concat(&ctx).unwrap().horizon(), 48);
    let g = boundary_gap(&prev, &refined.slice_rows(24, 48).unwrap()).unwrap();
    assert!(g.xyz < 1.0, "{}", g.xyz);
}

#[test]
fn rtr_closes_a_five_millimetre_offset() {
    let chunks = eval_chunks();
    let mut wins = 0;
    let mut total = 0;
    for (i, w) in chunks.windows(2).enumerate().take(40) {
        if w[1].start_tick() != w[0].start_tick() + 24 {
            continue;
        }
        let l = 4 + i % 16;
        let ctx = TransitionContext::new(w[0].clone(), 24, l, offset(&w[1], 5.0)).unwrap();
        let executed = w[0].slice_rows(0, 24 + l).unwrap();
        let naive = boundary_gap(&executed, &naive_switch(&ctx).unwrap()).unwrap().xyz;
        let refined = reuse_then_refine(&ctx, model()).unwrap();
        let rtr = boundary_gap(&executed, &refined.slice_rows(l, 48).unwrap()).unwrap().xyz;
        wins += usize::from(rtr < naive);
        total += 1;
    }
    assert!(total >= 20);
    assert!(wins * 10 >= total * 9, "{wins}/{total}");
}

#[test]
fn refined_prefix_stays_near_the_reused_actions() {
    let chunks = eval_chunks();
    let mae = recon_mae(model(), &chunks);
    for w in chunks.windows(2).take(20) {
        if w[1].start_tick() != w[0].start_tick() + 24 {
            continue;
        }
        let noisy = latact::synth::emulate_policy(&w[1], &NoiseModel::gaussian(0.5, w[1].start_tick()), None).unwrap();
        let ctx = TransitionContext::new(w[0].clone(), 24, 12, noisy).unwrap();
        let t = apply_strategy(&ctx, Strategy::Rtr, Some(model())).unwrap();
        let head = t.full.slice_rows(0, 12).unwrap();
        let drift = deviation(&head, &ctx.reused().unwrap().with_start_tick(head.start_tick())).unwrap().xyz;
        assert!(drift <= mae + 0.5, "{drift} > {mae} + 0.5");
        assert_eq!(t.executable.start_tick(), ctx.inference_tick() + 12);
    }
}

#[test]
fn continuity_report_rtr_dominates_naive() {
    let trajs: Vec<_> = specs(100, 4).iter().map(|s| generate_trajectory(s).unwrap()).collect();
    let noise = NoiseModel::gaussian(0.5, 3);
    let naive = evaluate_continuity(&trajs, 48, 24, &noise, Strategy::Naive, None, Some(60)).unwrap();
    let rtr = evaluate_continuity(&trajs, 48, 24, &noise, Strategy::Rtr, Some(model()), Some(60)).unwrap();
    assert!(rtr.report.overlap_diff_xyz < naive.report.overlap_diff_xyz);
    assert!(rtr.report.boundary_gap_xyz < naive.report.boundary_gap_xyz);
    let again = evaluate_continuity(&trajs, 48, 24, &noise, Strategy::Rtr, Some(model()), Some(60)).unwrap();
    assert_eq!(rtr, again);
}

#[test]
fn persisted_model_round_trips_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    codec::save_model(&path, model()).unwrap();
    let back = codec::load_model(&path).unwrap();
    let chunk = &eval_chunks()[0];
    assert_eq!(codec::roundtrip(&back, chunk).unwrap(), codec::roundtrip(model(), chunk).unwrap());
}

#[test]
fn simulated_rtr_is_deterministic_and_smoother_than_naive() {
    let base = SimConfig { emulator: NoiseModel::gaussian(0.5, 4), task: TaskSpec::new(TaskKind::LineWrite, 10.0, 7), ..SimConfig::default() };
    let naive = run(&base, None).unwrap();
    let rtr_cfg = SimConfig { strategy: Strategy::Rtr, ..base };
    let a = run(&rtr_cfg, Some(model())).unwrap();
    let b = run(&rtr_cfg, Some(model())).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.totals.starvation_events, 0);
    assert!(a.totals.exceed_count < naive.totals.exceed_count);
}
