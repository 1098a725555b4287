//! Shared harness for the acceptance suite: random instances and the
//! independent reference implementations the closed form is judged against.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgc_core::oracle::{EventPacket, EventStream};
use rgc_core::{
    BorderMode, FrameSequence, IntensityDomain, KernelBank, Layout, RgcKernel, SimConfig,
    VoxelGrid,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub seq: FrameSequence,
    pub bank: KernelBank,
    pub cfg: SimConfig,
    pub bins: usize,
}

impl Instance {
    pub fn mean_frame_interval(&self) -> f64 {
        (self.seq.end() - self.seq.start()) / (self.seq.len() - 1) as f64
    }
}

/// Random video: a smooth drifting pattern plus per-pixel jitter, so both
/// large and sub-threshold changes occur.
pub fn random_sequence(rng: &mut ChaCha8Rng, w: usize, h: usize, frames: usize) -> FrameSequence {
    let t0 = rng.random_range(-2.0..2.0);
    let dt = rng.random_range(0.01..2.0);
    let fx = rng.random_range(0.1..1.5);
    let fy = rng.random_range(0.1..1.5);
    let vx = rng.random_range(-1.0..1.0);
    let amp = rng.random_range(0.05..0.5);
    let jitter = rng.random_range(0.0..0.3);
    let timestamps = (0..frames).map(|k| t0 + k as f64 * dt).collect();
    let data = (0..frames)
        .map(|k| {
            (0..w * h)
                .map(|i| {
                    let (x, y) = ((i % w) as f64, (i / w) as f64);
                    let base = 0.5 + amp * ((x + vx * k as f64) * fx).sin() * (y * fy).cos();
                    let v = base + jitter * (rng.random::<f64>() - 0.5);
                    v.clamp(0.0, 1.0) as f32
                })
                .collect()
        })
        .collect();
    FrameSequence::new(w, h, timestamps, data).unwrap()
}

pub fn random_kernel(rng: &mut ChaCha8Rng, size: usize) -> RgcKernel {
    let weights = (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    RgcKernel::new(
        size,
        weights,
        rng.random_range(0.05..0.5),
        rng.random_range(0.05..0.5),
    )
}

pub fn random_bank(rng: &mut ChaCha8Rng) -> KernelBank {
    let size = [1, 3, 5][rng.random_range(0..3)];
    match rng.random_range(0..4) {
        0 | 1 => KernelBank::single(random_kernel(rng, size)),
        2 => {
            let c = rng.random_range(2..4);
            KernelBank::multi((0..c).map(|_| random_kernel(rng, size)).collect())
        }
        _ => KernelBank::spatially_varying((0..4).map(|_| random_kernel(rng, size)).collect()),
    }
}

/// Valid bin counts for `frames` frames: `B - 1` divides `frames - 1`.
pub fn random_bins(rng: &mut ChaCha8Rng, frames: usize) -> usize {
    let pairs = frames - 1;
    let options: Vec<usize> = (1..=pairs).filter(|d| pairs.is_multiple_of(*d)).collect();
    options[rng.random_range(0..options.len())] + 1
}

/// Instance within the oracle-equivalence envelope: up to 16x16, up to 8
/// frames, kernels of size 1/3/5, thresholds in [0.05, 0.5], no noise.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let w = rng.random_range(1..=16);
    let h = rng.random_range(1..=16);
    let frames = rng.random_range(2..=8);
    let seq = random_sequence(rng, w, h, frames);
    let bank = random_bank(rng);
    let cfg = SimConfig {
        intensity_domain: if rng.random_bool(0.3) {
            IntensityDomain::Log
        } else {
            IntensityDomain::Linear
        },
        threshold_sigma: if rng.random_bool(0.3) { 0.2 } else { 0.0 },
        border_mode: if rng.random_bool(0.5) {
            BorderMode::Replicate
        } else {
            BorderMode::Zero
        },
        rng_seed: rng.random(),
        ..SimConfig::default()
    };
    let bins = random_bins(rng, frames);
    Instance {
        seq,
        bank,
        cfg,
        bins,
    }
}

/// Linear two-bin accumulation of explicit events, written independently of
/// the crate's binning code.
pub fn bin_explicit(stream: &EventStream, anchors: &[f64]) -> VoxelGrid {
    let h = &stream.header;
    let bins = anchors.len();
    let mut grid = VoxelGrid::zeros(h.channels, h.width, h.height, anchors.to_vec());
    for p in &stream.packets {
        let mut j = 0;
        while j + 2 < bins && p.t > anchors[j + 1] {
            j += 1;
        }
        let w = (p.t - anchors[j]) / (anchors[j + 1] - anchors[j]);
        let pol = p.polarity as f64;
        let base = |b: usize| {
            ((p.channel as usize * bins + b) * h.height + p.y as usize) * h.width + p.x as usize
        };
        grid.data[base(j)] += pol * (1.0 - w);
        grid.data[base(j + 1)] += pol * w;
    }
    grid
}

/// Straight-line per-pixel DVS: every pixel keeps a reference level and
/// emits `floor(|diff| / delta)` evenly spaced events per frame pair.
/// No convolution machinery, no shared code with the simulator.
pub fn dvs_reference(
    seq: &FrameSequence,
    delta_pos: f64,
    delta_neg: f64,
    domain: IntensityDomain,
    log_eps: f64,
    refractory: f64,
) -> Vec<EventPacket> {
    let transform = |v: f32| {
        let v = v as f64;
        match domain {
            IntensityDomain::Linear => v,
            IntensityDomain::Log => libm::log(v + log_eps),
        }
    };
    let mut out = Vec::new();
    for y in 0..seq.height {
        for x in 0..seq.width {
            let i = y * seq.width + x;
            let mut reference = transform(seq.frames[0][i]);
            let mut last = f64::NEG_INFINITY;
            for k in 1..seq.len() {
                let now = transform(seq.frames[k][i]);
                let diff = now - reference;
                if diff == 0.0 {
                    continue;
                }
                let delta = if diff > 0.0 { delta_pos } else { delta_neg };
                let ratio = diff.abs() / delta;
                let n = ratio.floor() as u64;
                let t0 = seq.timestamps[k - 1];
                let alpha = (seq.timestamps[k] - t0) / ratio;
                let mut fired = false;
                for j in 0..n {
                    let t = t0 + (j + 1) as f64 * alpha;
                    if refractory > 0.0 && t - last <= refractory {
                        continue;
                    }
                    last = t;
                    fired = true;
                    out.push(EventPacket {
                        t,
                        x: x as u16,
                        y: y as u16,
                        polarity: if diff > 0.0 { 1 } else { -1 },
                        channel: 0,
                    });
                }
                if fired {
                    reference = now;
                }
            }
        }
    }
    out.sort_by(|a, b| a.order(b));
    out
}

pub fn is_layout(bank: &KernelBank, layout: Layout) -> bool {
    bank.layout == layout
}

pub fn criterion(id: u32, name: &str, passed: bool, detail: impl std::fmt::Display) {
    println!(
        "[{}] criterion {:>2}: {} ({})",
        if passed { "PASS" } else { "FAIL" },
        id,
        name,
        detail
    );
}
