//! Reference event generator.
//!
//! Every event is enumerated with its own timestamp: within a frame pair the
//! `N = floor(|I_RGC| / delta)` candidates sit at `t_k + (i + 1) * alpha`,
//! `alpha = (t_{k+1} - t_k) / (|I_RGC| / delta)`, and a candidate is dropped
//! when it falls within the refractory period of the last accepted event at
//! that pixel. `I_RGC` is computed once per pair from the pair-start memory.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

pub use crate::conv::filtered_difference;
use crate::error::{Error, Result};
use crate::model::{
    FrameSequence, KernelBank, Layout, MemoryUpdate, Plane, SensorState, SimConfig,
};
use crate::noise::ShotNoise;
use crate::EVENT_BUDGET;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventPacket {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    /// +1 or -1.
    pub polarity: i8,
    pub channel: u8,
}

impl EventPacket {
    /// Total order used by [`EventStream`]: `(t, y, x, channel)`.
    pub fn order(&self, other: &Self) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.y.cmp(&other.y))
            .then(self.x.cmp(&other.x))
            .then(self.channel.cmp(&other.channel))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StreamHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub layout: Layout,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub header: StreamHeader,
    pub packets: Vec<EventPacket>,
}

impl EventStream {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn sort(&mut self) {
        self.packets.sort_by(EventPacket::order);
    }

    /// Checks packet ranges, the strict sort order and the header time range.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        let bad = |msg: alloc::string::String| Err(Error::InvalidSequence(msg));
        if !(h.t_start <= h.t_end) {
            return bad(format!("time range [{}, {}] is empty", h.t_start, h.t_end));
        }
        for (i, p) in self.packets.iter().enumerate() {
            if p.x as usize >= h.width || p.y as usize >= h.height {
                return bad(format!("packet {} at ({}, {}) is outside the frame", i, p.x, p.y));
            }
            if p.channel as usize >= h.channels {
                return bad(format!("packet {} has channel {} of {}", i, p.channel, h.channels));
            }
            if p.polarity != 1 && p.polarity != -1 {
                return bad(format!("packet {} has polarity {}", i, p.polarity));
            }
            if !(p.t >= h.t_start && p.t <= h.t_end) {
                return bad(format!("packet {} at t={} is outside the header range", i, p.t));
            }
        }
        if let Some(i) = self
            .packets
            .windows(2)
            .position(|w| w[0].order(&w[1]) != Ordering::Less)
        {
            return bad(format!("packets {} and {} are not strictly ordered", i, i + 1));
        }
        Ok(())
    }

    /// Number of accepted events per channel.
    pub fn channel_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.header.channels];
        for p in &self.packets {
            counts[p.channel as usize] += 1;
        }
        counts
    }
}

/// Per-pixel outcome of one frame pair for one memory plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFiring {
    /// Accepted (non-suppressed) events.
    pub accepted: Vec<u32>,
    pub polarity: Vec<i8>,
    /// Effective threshold (`delta * multiplier`) of the firing polarity.
    pub threshold: Vec<f64>,
}

impl PairFiring {
    pub fn new(pixels: usize) -> Self {
        Self {
            accepted: vec![0; pixels],
            polarity: vec![0; pixels],
            threshold: vec![0.0; pixels],
        }
    }

    pub fn fired(&self, i: usize) -> bool {
        self.accepted[i] > 0
    }
}

/// Applies the end-of-pair memory update to memory plane `memory`.
///
/// `ResetOnFire` copies the current intensity into fired pixels. `Residual`
/// advances memory by the emitted quanta, `pol * n * delta / W_center`, and is
/// only defined for a single-channel bank with a pointwise kernel.
pub fn memory_update(
    state: &mut SensorState,
    memory: usize,
    firing: &PairFiring,
    curr: &Plane,
    mode: MemoryUpdate,
    bank: &KernelBank,
) -> Result<()> {
    let mem = &mut state.mem[memory];
    curr.check_dims(mem.width, mem.height)?;
    match mode {
        MemoryUpdate::ResetOnFire => {
            for (i, m) in mem.data.iter_mut().enumerate() {
                if firing.fired(i) {
                    *m = curr.data[i];
                }
            }
        }
        MemoryUpdate::Residual => {
            if !supports_residual(bank) {
                return Err(Error::UnsupportedResidual);
            }
            let center = bank.kernels[0].center();
            for (i, m) in mem.data.iter_mut().enumerate() {
                if firing.fired(i) {
                    let quanta = firing.polarity[i] as f64
                        * firing.accepted[i] as f64
                        * firing.threshold[i];
                    *m += quanta / center;
                }
            }
        }
    }
    Ok(())
}

fn supports_residual(bank: &KernelBank) -> bool {
    bank.layout == Layout::SingleChannel && bank.kernels.len() == 1 && bank.kernels[0].is_pointwise()
}

/// Explicit event simulation of `seq` through `bank`.
pub fn generate_events(
    seq: &FrameSequence,
    bank: &KernelBank,
    cfg: &SimConfig,
) -> Result<EventStream> {
    seq.validate()?;
    bank.validate()?;
    cfg.validate()?;
    if cfg.memory_update == MemoryUpdate::Residual && !supports_residual(bank) {
        return Err(Error::UnsupportedResidual);
    }
    if seq.width > u16::MAX as usize + 1 || seq.height > u16::MAX as usize + 1 {
        return Err(Error::InvalidSequence("frame too large for 16-bit coordinates".into()));
    }

    let frames = seq.prepared_frames(cfg);
    let (w, h) = (seq.width, seq.height);
    let mut state = SensorState::new(&frames[0], bank, cfg);
    let mut shot = ShotNoise::new(cfg.rng_seed, cfg.shot_noise_rate);
    let refractory = cfg.refractory_period;
    let mut packets = Vec::new();
    let mut budget_used: u64 = 0;

    for k in 0..seq.len() - 1 {
        let (t0, t1) = (seq.timestamps[k], seq.timestamps[k + 1]);
        let span = t1 - t0;
        let curr = &frames[k + 1];
        let mut firings = vec![PairFiring::new(w * h); bank.memory_planes()];

        for (c, kernel) in bank.kernels.iter().enumerate() {
            let memory = bank.memory_index(c);
            let (filtered, _) = filtered_difference(curr, &state, memory, kernel, cfg.border_mode)?;
            let firing = &mut firings[memory];
            let last = &mut state.last_event_time[c];

            for y in 0..h {
                for x in 0..w {
                    if !bank.is_active(c, x, y) {
                        continue;
                    }
                    let i = y * w + x;
                    let value = filtered.data[i];
                    if value == 0.0 {
                        continue;
                    }
                    let delta = kernel.threshold_for(value) * state.threshold_mult.data[i];
                    let ratio = libm::fabs(value) / delta;
                    let candidates = libm::floor(ratio);
                    if candidates < 1.0 {
                        continue;
                    }
                    budget_used = budget_used.saturating_add(candidates as u64);
                    if budget_used > EVENT_BUDGET {
                        return Err(Error::EventBudget {
                            requested: budget_used,
                            limit: EVENT_BUDGET,
                        });
                    }
                    let alpha = span / ratio;
                    let polarity: i8 = if value > 0.0 { 1 } else { -1 };
                    let mut accepted = 0u32;
                    for j in 0..candidates as u64 {
                        let t = t0 + (j + 1) as f64 * alpha;
                        if refractory > 0.0 && t - last.data[i] <= refractory {
                            continue;
                        }
                        last.data[i] = t;
                        accepted += 1;
                        packets.push(EventPacket {
                            t,
                            x: x as u16,
                            y: y as u16,
                            polarity,
                            channel: c as u8,
                        });
                    }
                    if accepted > 0 {
                        firing.accepted[i] = accepted;
                        firing.polarity[i] = polarity;
                        firing.threshold[i] = delta;
                    }
                }
            }
        }

        // Shot noise is appended to the output only; it does not touch memory
        // or the refractory clocks.
        if shot.is_enabled() {
            for c in 0..bank.channels() {
                for y in 0..h {
                    for x in 0..w {
                        if !bank.is_active(c, x, y) {
                            continue;
                        }
                        shot.sample_interval(t0, t1, |t, polarity| {
                            packets.push(EventPacket {
                                t,
                                x: x as u16,
                                y: y as u16,
                                polarity,
                                channel: c as u8,
                            })
                        });
                    }
                }
            }
        }

        for (memory, firing) in firings.iter().enumerate() {
            memory_update(&mut state, memory, firing, curr, cfg.memory_update, bank)?;
        }
    }

    let mut stream = EventStream {
        header: StreamHeader {
            width: w,
            height: h,
            channels: bank.channels(),
            layout: bank.layout,
            t_start: seq.start(),
            t_end: seq.end(),
        },
        packets,
    };
    stream.sort();
    stream.packets.dedup_by(|a, b| a.order(b) == Ordering::Equal);
    Ok(stream)
}
