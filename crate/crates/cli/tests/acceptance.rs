//! Acceptance suite. Each test prints one PASS/FAIL line per criterion;
//! run with `cargo test -p rgcsim --test acceptance -- --nocapture`.

mod common;

use std::time::Instant;

use common::*;
use rgc_core::binner::{bin_pixel_refractory, bin_sequence, bin_sequence_full, make_anchors, PairBinContext};
use rgc_core::conv::filtered_difference;
use rgc_core::oracle::{generate_events, memory_update, PairFiring};
use rgc_core::grad::{grad_check, LossSpec, DEFAULT_STEP, DEFAULT_TOLERANCE};
use rgc_core::learn::{
    cosine_similarity, synth_scene, train, BankInit, InitKind, LearnConfig, SceneKind, SceneParams, Task,
    TrainReport,
};
use rgc_core::presets::{preset_kernel, Preset};
use rgc_core::{FrameSequence, KernelBank, MemoryUpdate, RgcKernel, SensorState, SimConfig};
use rand::Rng;

const ORACLE_INSTANCES: usize = 1000;

fn oracle_equivalence(refractory_factors: &[f64], seed: u64) -> (f64, usize) {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    let mut events = 0;
    for n in 0..ORACLE_INSTANCES {
        let mut inst = random_instance(&mut rng);
        let factor = refractory_factors[n % refractory_factors.len()];
        inst.cfg.refractory_period = factor * inst.mean_frame_interval();
        let stream = generate_events(&inst.seq, &inst.bank, &inst.cfg).unwrap();
        events += stream.len();
        let anchors = make_anchors(&inst.seq, inst.bins).unwrap();
        let explicit = bin_explicit(&stream, &anchors.times);
        let (grid, _) = bin_sequence(&inst.seq, &inst.bank, &inst.cfg, inst.bins).unwrap();
        let err = grid.max_abs_diff(&explicit);
        if err > 1e-9 {
            eprintln!("instance {} error {} cfg {:?} bank {:?}", n, err, inst.cfg, inst.bank.layout);
        }
        worst = worst.max(err);
    }
    (worst, events)
}

#[test]
fn c01_oracle_equivalence() {
    let start = Instant::now();
    let (worst, events) = oracle_equivalence(&[0.0], 1);
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 1e-9 && secs < 60.0;
    criterion(
        1,
        "closed form equals binned oracle stream",
        ok,
        format!("{} instances, {} events, max |diff| {:.2e}, {:.1}s", ORACLE_INSTANCES, events, worst, secs),
    );
    assert!(ok);
}

#[test]
fn c02_refractory_equivalence() {
    let start = Instant::now();
    let (worst, events) = oracle_equivalence(&[0.1, 0.5, 2.0], 2);
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 1e-9;
    criterion(
        2,
        "refractory closed form equals oracle",
        ok,
        format!("r in {{0.1,0.5,2.0}} x frame interval, {} events, max |diff| {:.2e}, {:.1}s", events, worst, secs),
    );
    assert!(ok);
}

#[test]
fn c03_dvs_reduction() {
    let mut rng = rng(3);
    let mut mismatches = 0;
    let mut total = 0;
    for n in 0..100 {
        let mut inst = random_instance(&mut rng);
        let size = [1, 3, 5][n % 3];
        let (dp, dn) = (inst.bank.kernels[0].threshold_pos, inst.bank.kernels[0].threshold_neg);
        let kernel = preset_kernel(&Preset::Dvs, size).unwrap().with_thresholds(dp, dn);
        let bank = KernelBank::single(kernel);
        inst.cfg.threshold_sigma = 0.0;
        inst.cfg.refractory_period = [0.0, 0.5][n % 2] * inst.mean_frame_interval();
        let stream = generate_events(&inst.seq, &bank, &inst.cfg).unwrap();
        let reference = dvs_reference(
            &inst.seq,
            dp,
            dn,
            inst.cfg.intensity_domain,
            inst.cfg.log_eps,
            inst.cfg.refractory_period,
        );
        total += reference.len();
        if stream.packets != reference {
            mismatches += 1;
        }
    }
    let ok = mismatches == 0;
    criterion(3, "identity kernel reduces to per-pixel DVS", ok, format!("100 sequences, {} events, {} mismatching", total, mismatches));
    assert!(ok);
}

#[test]
fn c05_mass_conservation() {
    let mut rng = rng(1);
    let mut checked = 0u64;
    let mut violations = 0u64;
    for n in 0..ORACLE_INSTANCES {
        let mut inst = random_instance(&mut rng);
        inst.cfg.refractory_period = [0.0, 0.1, 0.5, 2.0][n % 4] * inst.mean_frame_interval();
        // Replay the pairs through the per-pixel API.
        let frames = inst.seq.prepared_frames(&inst.cfg);
        let anchors = make_anchors(&inst.seq, inst.bins).unwrap();
        let mut state = SensorState::new(&frames[0], &inst.bank, &inst.cfg);
        let (w, h) = (inst.seq.width, inst.seq.height);
        for k in 0..inst.seq.len() - 1 {
            let lo = anchors.interval_of_pair(k);
            let ctx = PairBinContext::new(
                inst.seq.timestamps[k],
                inst.seq.timestamps[k + 1],
                anchors.times[lo],
                anchors.times[lo + 1],
            )
            .unwrap();
            let mut firings = vec![PairFiring::new(w * h); inst.bank.memory_planes()];
            for (c, kernel) in inst.bank.kernels.iter().enumerate() {
                let memory = inst.bank.memory_index(c);
                let (filtered, _) =
                    filtered_difference(&frames[k + 1], &state, memory, kernel, inst.cfg.border_mode).unwrap();
                for i in 0..w * h {
                    if !inst.bank.is_active(c, i % w, i / w) {
                        continue;
                    }
                    let v = filtered.data[i];
                    let delta = kernel.threshold_for(v) * state.threshold_mult.data[i];
                    let elapsed = ctx.t_k - state.last_event_time[c].data[i];
                    let (b, last) = bin_pixel_refractory(v, delta, &ctx, inst.cfg.refractory_period, elapsed);
                    checked += 1;
                    let pol = if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
                    if b.minus + b.plus != pol * b.count || b.count.fract() != 0.0 {
                        violations += 1;
                    }
                    if let Some(t) = last {
                        state.last_event_time[c].data[i] = t;
                        firings[memory].accepted[i] = b.count as u32;
                    }
                }
            }
            for (m, f) in firings.iter().enumerate() {
                memory_update(&mut state, m, f, &frames[k + 1], MemoryUpdate::ResetOnFire, &inst.bank).unwrap();
            }
        }
    }
    let ok = violations == 0;
    criterion(5, "bin- + bin+ = pol * N exactly", ok, format!("{} pixel-pairs, {} violations", checked, violations));
    assert!(ok);
}

#[test]
fn c06_negation_symmetry() {
    let mut rng = rng(6);
    let mut failures = 0;
    for _ in 0..100 {
        let mut inst = random_instance(&mut rng);
        for k in inst.bank.kernels.iter_mut() {
            k.threshold_neg = k.threshold_pos;
        }
        let (grid, _) = bin_sequence(&inst.seq, &inst.bank, &inst.cfg, inst.bins).unwrap();
        let (neg, _) = bin_sequence(&inst.seq, &inst.bank.negated(), &inst.cfg, inst.bins).unwrap();
        if grid.data.iter().zip(&neg.data).any(|(a, b)| *a != -*b) {
            failures += 1;
        }
    }
    let ok = failures == 0;
    criterion(6, "grid of -W is the negated grid of W", ok, format!("100 instances, {} inexact", failures));
    assert!(ok);
}

#[test]
fn c07_bandwidth_monotonicity() {
    let mut rng = rng(7);
    let mut violations = 0;
    let mut n_inst = 0;
    for n in 0..ORACLE_INSTANCES {
        let inst = random_instance(&mut rng);
        let cfg = SimConfig {
            refractory_period: [0.0, 0.5][n % 2] * inst.mean_frame_interval(),
            ..inst.cfg.clone()
        };
        let base = bin_sequence_full(&inst.seq, &inst.bank, &cfg, inst.bins).unwrap();
        let doubled = bin_sequence_full(&inst.seq, &inst.bank.with_scaled_thresholds(2.0), &cfg, inst.bins).unwrap();
        let oracle_base = generate_events(&inst.seq, &inst.bank, &cfg).unwrap().len();
        let oracle_doubled = generate_events(&inst.seq, &inst.bank.with_scaled_thresholds(2.0), &cfg).unwrap().len();
        n_inst += 1;
        if doubled.event_count > base.event_count || oracle_doubled > oracle_base {
            violations += 1;
            eprintln!("instance {}: {} -> {} ({:?})", n, base.event_count, doubled.event_count, inst.bank.layout);
        }
    }
    let ok = violations == 0;
    criterion(7, "doubling thresholds never increases the event count", ok, format!("{} instances, {} violations", n_inst, violations));
    assert!(ok);
}

#[test]
fn c04_gradient_correctness() {
    let start = Instant::now();
    let mut rng = rng(4);
    let mut worst = 0.0f64;
    let mut failed = 0;
    let mut params = 0;
    for n in 0..50 {
        let mut inst = random_instance(&mut rng);
        inst.cfg.refractory_period = [0.0, 0.0, 0.5][n % 3] * inst.mean_frame_interval();
        let (grid, _) = bin_sequence(&inst.seq, &inst.bank, &inst.cfg, inst.bins).unwrap();
        let target: Vec<f64> = grid.data.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let loss = LossSpec::quadratic(target).with_softcount(rng.random_range(0.0..0.05));
        let report = grad_check(&inst.seq, &inst.bank, &inst.cfg, inst.bins, &loss, DEFAULT_STEP, DEFAULT_TOLERANCE)
            .unwrap();
        params += report.analytic.len();
        worst = worst.max(report.max_rel_error);
        if !report.passed {
            failed += 1;
            eprintln!("instance {}: param {} rel err {:.2e}", n, report.worst_param, report.max_rel_error);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failed == 0 && secs < 120.0;
    criterion(
        4,
        "analytic gradients match central differences",
        ok,
        format!("50 instances, {} parameters, max rel err {:.2e}, {:.1}s", params, worst, secs),
    );
    assert!(ok);
}

fn texture_scenes(count: usize, period: f64, seed: u64) -> Vec<FrameSequence> {
    (0..count)
        .map(|i| {
            let p = SceneParams {
                width: 16,
                height: 16,
                frames: 9,
                speed: 0.5 + 0.25 * i as f64,
                angle: 1.3 * i as f64,
                period,
                ..SceneParams::default()
            };
            synth_scene(SceneKind::RandomTextureDrift, &p, seed + i as u64).unwrap()
        })
        .collect()
}

#[test]
fn c08_kernel_recovery() {
    let start = Instant::now();
    let target = KernelBank::single(preset_kernel(&Preset::CsdvsDelbruck, 3).unwrap());
    let cfg = LearnConfig {
        task: Task::KernelRecovery { target: target.clone() },
        steps: 2000,
        weight_step: 1.0,
        momentum: 0.9,
        seed: 7,
        init: BankInit {
            kind: InitKind::SmallRandom,
            sigma: 0.1,
            ..BankInit::default()
        },
        ..LearnConfig::default()
    };
    let report = train(&texture_scenes(4, 3.0, 100), &cfg, &SimConfig::default(), 9).unwrap();
    let cos = cosine_similarity(&report.bank.kernels[0].weights, &target.kernels[0].weights);
    let secs = start.elapsed().as_secs_f64();
    let ok = cos >= 0.95 && secs < 300.0;
    criterion(
        8,
        "kernel recovery of a hidden center-surround kernel",
        ok,
        format!("cosine {:.4} after {} steps, {:.1}s", cos, cfg.steps, secs),
    );
    assert!(ok);
}

fn reconstruction(seqs: &[FrameSequence], init: KernelBank, lambda: f64) -> TrainReport {
    let cfg = LearnConfig {
        task: Task::Reconstruction,
        steps: 300,
        lambda_sparsity: lambda,
        seed: 11,
        init: BankInit::from_bank(init, 0.01),
        ..LearnConfig::default()
    };
    train(seqs, &cfg, &SimConfig::default(), 9).unwrap()
}

fn dvs(delta: f64) -> RgcKernel {
    preset_kernel(&Preset::Dvs, 3).unwrap().with_thresholds(delta, delta)
}

#[test]
fn c09_sparsity_tradeoff() {
    let seqs = texture_scenes(4, 4.0, 200);
    let lambdas = [0.0, 1e-6, 1e-5, 1e-4];
    let runs: Vec<TrainReport> = lambdas
        .iter()
        .map(|&l| reconstruction(&seqs, KernelBank::single(dvs(0.05)), l))
        .collect();
    let bw: Vec<f64> = runs.iter().map(|r| r.final_bandwidth).collect();
    let loss: Vec<f64> = runs.iter().map(|r| r.final_task_loss).collect();
    let bw_ok = bw.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    let loss_ok = loss.windows(2).all(|w| w[1] >= w[0]);
    let ok = bw_ok && loss_ok;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{:.4}", x)).collect::<Vec<_>>().join(", ");
    criterion(
        9,
        "bandwidth falls and task loss rises with the sparsity weight",
        ok,
        format!("lambda {:?}: bandwidth [{}], loss [{}]", lambdas, fmt(&bw), fmt(&loss)),
    );
    assert!(ok);
}

/// Runs `make(scale)` and bisects `scale` until the final bandwidth is
/// within 2% of `budget` (or the search runs out).
fn matched_run(seqs: &[FrameSequence], budget: f64, make: impl Fn(f64) -> KernelBank) -> TrainReport {
    let (mut lo, mut hi) = (0.25f64, 4.0f64);
    let mut best: Option<TrainReport> = None;
    for _ in 0..14 {
        let mid = (lo * hi).sqrt();
        let run = reconstruction(seqs, make(mid), 0.0);
        let gap = (run.final_bandwidth / budget - 1.0).abs();
        let better = best
            .as_ref()
            .is_none_or(|b| gap < (b.final_bandwidth / budget - 1.0).abs());
        // Higher thresholds, fewer events.
        if run.final_bandwidth > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if better {
            best = Some(run);
        }
        if gap <= 0.02 {
            break;
        }
    }
    best.unwrap()
}

#[test]
fn c10_multichannel_dominance() {
    let seqs = texture_scenes(4, 4.0, 200);
    let mut details = Vec::new();
    let mut ok = true;
    for delta in [0.04, 0.06, 0.09] {
        let single = reconstruction(&seqs, KernelBank::single(dvs(delta)), 0.0);
        let budget = single.final_bandwidth;
        let mut pooled = preset_kernel(&Preset::Dvs, 3).unwrap();
        pooled.weights = vec![1.0 / 3.0; 9];
        let candidates = [
            matched_run(&seqs, budget, |s| KernelBank::multi(vec![dvs(delta * s), dvs(4.0 * delta * s)])),
            matched_run(&seqs, budget, |s| {
                let d = 4.0 * delta * s;
                KernelBank::multi(vec![dvs(delta * s), pooled.clone().with_thresholds(d, d)])
            }),
        ];
        let best = candidates
            .iter()
            .filter(|r| (r.final_bandwidth / budget - 1.0).abs() <= 0.10)
            .min_by(|a, b| a.final_task_loss.total_cmp(&b.final_task_loss));
        match best {
            Some(b) => {
                let pass = b.final_task_loss <= 1.01 * single.final_task_loss;
                ok &= pass;
                details.push(format!(
                    "C1 {:.1} ev/bin loss {:.5} vs C2 {:.1} ev/bin loss {:.5}",
                    budget, single.final_task_loss, b.final_bandwidth, b.final_task_loss
                ));
            }
            None => {
                ok = false;
                details.push(format!("no C2 run within 10% of {:.1} ev/bin", budget));
            }
        }
    }
    criterion(10, "two learned channels match or beat one at equal bandwidth", ok, details.join("; "));
    assert!(ok);
}

/// Second writer for both formats: plain `to_le_bytes` and hand-built JSON,
/// sharing nothing with the crate's serde/byteorder path.
mod manual {
    pub fn pad_line(prefix: usize, json: &str) -> Vec<u8> {
        let mut line = json.as_bytes().to_vec();
        while !(prefix + line.len() + 1).is_multiple_of(16) {
            line.push(b' ');
        }
        line.push(b'\n');
        line
    }

    pub fn video(shape: [usize; 3], timestamps: &str, domain: &str, values: &[f32]) -> Vec<u8> {
        let json = format!(
            "{{\"magic\":\"GGS1\",\"dtype\":\"f32le\",\"shape\":[{},{},{}],\"timestamps\":[{}],\"intensity_domain\":\"{}\"}}",
            shape[0], shape[1], shape[2], timestamps, domain
        );
        let mut out = pad_line(0, &json);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn events(header_json: &str, packets: &[(f64, u16, u16, i8, u8)]) -> Vec<u8> {
        let mut out = b"GGSEVENTS\0\0\0".to_vec();
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend(pad_line(16, header_json));
        for &(t, x, y, p, c) in packets {
            out.extend_from_slice(&t.to_le_bytes());
            out.extend_from_slice(&x.to_le_bytes());
            out.extend_from_slice(&y.to_le_bytes());
            out.push(if p < 0 { 0x80 | c } else { c });
            out.extend_from_slice(&[0, 0, 0]);
        }
        out
    }
}

const GOLDEN_VIDEO: &[u8] = include_bytes!("golden/video_v1.ggs");
const GOLDEN_EVENTS: &[u8] = include_bytes!("golden/events_v1.ggse");

fn golden_video_values() -> Vec<f32> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125, 0.5, 0.375, 0.0625, 1.0, 0.875, 0.3]
}

fn golden_packets() -> Vec<(f64, u16, u16, i8, u8)> {
    vec![(0.125, 1, 0, 1, 0), (0.25, 2, 1, -1, 1), (0.25, 0, 2, 1, 1), (0.5, 3, 2, -1, 0)]
}

fn golden_bank() -> KernelBank {
    KernelBank::multi(vec![
        RgcKernel::new(1, vec![1.0], 0.1, 0.2),
        RgcKernel::new(1, vec![-1.0], 0.25, 0.25),
    ])
}

fn golden_sim() -> SimConfig {
    SimConfig {
        rng_seed: 7,
        ..SimConfig::default()
    }
}

#[test]
fn c11_format_fidelity() {
    use rgc_core::oracle::{EventPacket, EventStream, StreamHeader};
    use rgc_core::{IntensityDomain, Layout};
    use rgcsim::events::EventFile;
    use rgcsim::tensor::{video_from_tensor, video_tensor, RawTensor};

    let mut checks: Vec<(&str, bool)> = Vec::new();

    // Video: crate writer, manual writer, golden bytes.
    let values = golden_video_values();
    let seq = FrameSequence::new(3, 2, vec![0.0, 0.5], vec![values[..6].to_vec(), values[6..].to_vec()]).unwrap();
    let crate_video = video_tensor(&seq, IntensityDomain::Linear).encode().unwrap();
    let manual_video = manual::video([2, 2, 3], "0.0,0.5", "linear", &values);
    checks.push(("video crate writer == golden", crate_video == GOLDEN_VIDEO));
    checks.push(("video manual writer == golden", manual_video == GOLDEN_VIDEO));
    let (back, domain) = video_from_tensor(&RawTensor::decode(GOLDEN_VIDEO).unwrap()).unwrap();
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    checks.push((
        "video golden decodes bit-exact",
        back.timestamps == seq.timestamps
            && bits(&back.frames.concat()) == bits(&values)
            && domain == IntensityDomain::Linear,
    ));

    // Events.
    let packets: Vec<EventPacket> = golden_packets()
        .into_iter()
        .map(|(t, x, y, polarity, channel)| EventPacket { t, x, y, polarity, channel })
        .collect();
    let stream = EventStream {
        header: StreamHeader {
            width: 4,
            height: 3,
            channels: 2,
            layout: Layout::MultiChannel,
            t_start: 0.0,
            t_end: 0.5,
        },
        packets,
    };
    let crate_events = EventFile::new(stream.clone(), Some(golden_bank()), Some(golden_sim())).encode().unwrap();
    let kernel = |w: &str, p: &str, n: &str| {
        format!("{{\"size\":1,\"weights\":[{}],\"threshold_pos\":{},\"threshold_neg\":{}}}", w, p, n)
    };
    let header = format!(
        concat!(
            "{{\"width\":4,\"height\":3,\"channels\":2,\"layout\":\"multi_channel\",\"t_start\":0.0,\"t_end\":0.5,",
            "\"event_count\":4,\"bank\":{{\"layout\":\"multi_channel\",\"kernels\":[{},{}]}},",
            "\"sim\":{{\"intensity_domain\":\"linear\",\"log_eps\":0.001,\"refractory_period\":0.0,",
            "\"threshold_sigma\":0.0,\"intensity_noise_sigma\":0.0,\"shot_noise_rate\":0.0,\"rng_seed\":7,",
            "\"border_mode\":\"replicate\",\"memory_update\":\"reset_on_fire\"}}}}"
        ),
        kernel("1.0", "0.1", "0.2"),
        kernel("-1.0", "0.25", "0.25")
    );
    let manual_events = manual::events(&header, &golden_packets());
    checks.push(("events crate writer == golden", crate_events == GOLDEN_EVENTS));
    checks.push(("events manual writer == golden", manual_events == GOLDEN_EVENTS));
    let decoded = EventFile::decode(GOLDEN_EVENTS).unwrap();
    checks.push((
        "events golden decodes exactly",
        decoded.stream == stream && decoded.header.bank == Some(golden_bank()) && decoded.header.sim == Some(golden_sim()),
    ));

    // Random round trips.
    let mut rng = rng(11);
    let inst = random_instance(&mut rng);
    let bytes = video_tensor(&inst.seq, IntensityDomain::Log).encode().unwrap();
    let (again, _) = video_from_tensor(&RawTensor::decode(&bytes).unwrap()).unwrap();
    checks.push((
        "random video round trip bit-exact",
        again.timestamps.iter().map(|t| t.to_bits()).eq(inst.seq.timestamps.iter().map(|t| t.to_bits()))
            && bits(&again.frames.concat()) == bits(&inst.seq.frames.concat()),
    ));
    let mut big = EventStream {
        header: StreamHeader {
            width: 640,
            height: 480,
            channels: 4,
            layout: Layout::SpatiallyVarying,
            t_start: -1.0,
            t_end: 3.0,
        },
        packets: (0..1_000_000)
            .map(|_| EventPacket {
                t: rng.random_range(-1.0..3.0),
                x: rng.random_range(0..640),
                y: rng.random_range(0..480),
                polarity: if rng.random_bool(0.5) { 1 } else { -1 },
                channel: rng.random_range(0..4),
            })
            .collect(),
    };
    big.sort();
    let encoded = EventFile::new(big.clone(), None, None).encode().unwrap();
    let round = EventFile::decode(&encoded).unwrap().stream;
    checks.push((
        "10^6 random events round trip bit-exact",
        round.packets.len() == big.packets.len()
            && round
                .packets
                .iter()
                .zip(&big.packets)
                .all(|(a, b)| a.t.to_bits() == b.t.to_bits() && a == b),
    ));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let ok = failed.is_empty();
    criterion(
        11,
        "golden bytes from two writers and exact round trips",
        ok,
        if ok { format!("{} checks", checks.len()) } else { format!("failed: {}", failed.join("; ")) },
    );
    assert!(ok);
}
