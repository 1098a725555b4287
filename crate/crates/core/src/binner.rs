//! Closed-form voxel binning.
//!
//! Events between two frames are evenly spaced, so their linear weights into
//! the two surrounding bins form an arithmetic series and the per-pair bin
//! mass has a closed form. No event is enumerated.
//!
//! With a refractory period `r` the accepted events are every `m`-th
//! candidate, `m = floor(r / alpha) + 1`, starting at candidate
//! `j0 = max(0, floor((r - p_r) / alpha))` where `p_r` is the time since the
//! pixel's last accepted event. Accepted events therefore sit at offsets
//! `beta + (j0 + 1) * alpha + i * m * alpha` from the lower anchor.

use alloc::vec;
use alloc::vec::Vec;

use crate::conv::filtered_difference;
use crate::error::{Error, Result};
use crate::model::{FrameSequence, KernelBank, MemoryUpdate, Plane, SensorState, SimConfig, VoxelGrid};
use crate::oracle::{memory_update, EventStream, PairFiring};
use crate::EVENT_BUDGET;

/// Uniform bin anchors with every frame pair nested in one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors {
    pub times: Vec<f64>,
    pub pairs_per_interval: usize,
}

impl Anchors {
    #[inline]
    pub fn interval_of_pair(&self, pair: usize) -> usize {
        pair / self.pairs_per_interval
    }

    pub fn bins(&self) -> usize {
        self.times.len()
    }
}

/// Anchors at every `(K - 1) / (B - 1)`-th frame time.
pub fn make_anchors(seq: &FrameSequence, bins: usize) -> Result<Anchors> {
    if bins < 2 {
        return Err(Error::BinCount(bins));
    }
    let pairs = seq.len().saturating_sub(1);
    let intervals = bins - 1;
    if pairs == 0 || !pairs.is_multiple_of(intervals) {
        return Err(Error::AnchorNesting { pairs, intervals });
    }
    let step = pairs / intervals;
    let times: Vec<f64> = (0..bins).map(|j| seq.timestamps[j * step]).collect();
    check_uniform(&times)?;
    Ok(Anchors {
        times,
        pairs_per_interval: step,
    })
}

/// `bins` uniform anchors spanning `[t_start, t_end]`.
pub fn uniform_anchors(t_start: f64, t_end: f64, bins: usize) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::BinCount(bins));
    }
    if !(t_end > t_start) {
        return Err(Error::InvalidSequence("zero-duration time range".into()));
    }
    let span = t_end - t_start;
    let last = (bins - 1) as f64;
    Ok((0..bins)
        .map(|j| {
            if j == bins - 1 {
                t_end
            } else {
                t_start + span * (j as f64 / last)
            }
        })
        .collect())
}

fn check_uniform(times: &[f64]) -> Result<()> {
    let first = times[0];
    let span = times[times.len() - 1] - first;
    let last = (times.len() - 1) as f64;
    for (j, t) in times.iter().enumerate() {
        let ideal = first + span * (j as f64 / last);
        if libm::fabs(t - ideal) > 1e-12 * libm::fabs(span).max(libm::fabs(first)) {
            return Err(Error::InvalidSequence(alloc::format!(
                "frame times at bin anchors are not uniform (anchor {} at {}, expected {})",
                j,
                t,
                ideal
            )));
        }
    }
    Ok(())
}

/// Timing of one frame pair relative to its enclosing anchors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairBinContext {
    pub t_k: f64,
    pub t_next: f64,
    pub bin_lo: f64,
    pub bin_hi: f64,
}

impl PairBinContext {
    pub fn new(t_k: f64, t_next: f64, bin_lo: f64, bin_hi: f64) -> Result<Self> {
        if !(bin_lo <= t_k && t_k < t_next && t_next <= bin_hi) {
            return Err(Error::InvalidSequence(alloc::format!(
                "frame pair [{}, {}] is not inside anchors [{}, {}]",
                t_k,
                t_next,
                bin_lo,
                bin_hi
            )));
        }
        Ok(Self {
            t_k,
            t_next,
            bin_lo,
            bin_hi,
        })
    }

    /// Offset of the pair start from the lower anchor.
    #[inline]
    pub fn beta(&self) -> f64 {
        self.t_k - self.bin_lo
    }

    /// Anchor spacing.
    #[inline]
    pub fn width(&self) -> f64 {
        self.bin_hi - self.bin_lo
    }

    /// Frame interval.
    #[inline]
    pub fn span(&self) -> f64 {
        self.t_next - self.t_k
    }
}

/// One pixel's contribution from one frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PixelBins {
    pub minus: f64,
    pub plus: f64,
    /// Emitted (floor) event count.
    pub count: f64,
    /// `|I_RGC| / delta` before quantization.
    pub softcount: f64,
}

/// Discrete structure of one pixel's event train, fixed by the floors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Quanta {
    pub pol: f64,
    pub ratio: f64,
    /// Accepted events.
    pub n: f64,
    /// Index of the first accepted candidate.
    pub first: f64,
    /// Candidate stride between accepted events.
    pub stride: f64,
    /// `ratio < 1`: the spacing is pinned at the frame interval.
    pub pinned: bool,
}

impl Quanta {
    /// Floors for a pixel with filtered value `value`, effective threshold
    /// `delta` and `elapsed` seconds since its last event.
    pub fn resolve(value: f64, delta: f64, span: f64, refractory: f64, elapsed: f64) -> Self {
        let ratio = libm::fabs(value) / delta;
        let pol = if value > 0.0 {
            1.0
        } else if value < 0.0 {
            -1.0
        } else {
            0.0
        };
        let candidates = libm::floor(ratio);
        let pinned = ratio < 1.0;
        let alpha = spacing(span, ratio, pinned);
        let (first, stride) = if refractory > 0.0 {
            let first = if elapsed >= refractory {
                0.0
            } else {
                libm::floor((refractory - elapsed) / alpha)
            };
            (first, libm::floor(refractory / alpha) + 1.0)
        } else {
            (0.0, 1.0)
        };
        let n = if candidates >= first + 1.0 {
            libm::floor((candidates - first - 1.0) / stride) + 1.0
        } else {
            0.0
        };
        Self {
            pol,
            ratio,
            n,
            first,
            stride,
            pinned,
        }
    }

    /// Lower-anchor offset of the last accepted event, `t_k`-relative.
    pub fn last_offset(&self, span: f64) -> f64 {
        let alpha = spacing(span, self.ratio, self.pinned);
        (self.first + (self.n - 1.0) * self.stride + 1.0) * alpha
    }
}

#[inline]
fn spacing(span: f64, ratio: f64, pinned: bool) -> f64 {
    if pinned {
        span
    } else {
        span / ratio
    }
}

/// Upper-bin mass magnitude `sum_i w_i` and its derivative in `ratio`,
/// given how the count moves with the ratio (`dn`).
///
/// Everything except the integer structure (`first`, `stride`) is treated as
/// a smooth function of `ratio`, so the same routine serves the forward pass
/// and the straight-through backward pass.
pub(crate) fn upper_mass(
    q: &Quanta,
    n: f64,
    ratio: f64,
    dn: f64,
    ctx: &PairBinContext,
) -> (f64, f64) {
    let span = ctx.span();
    let beta = ctx.beta();
    let width = ctx.width();
    let alpha = spacing(span, ratio, q.pinned);
    let dalpha = if q.pinned { 0.0 } else { -span / (ratio * ratio) };
    if q.first == 0.0 && q.stride == 1.0 {
        // beta * N + alpha * N (N + 1) / 2
        let tri = n * (n + 1.0) / 2.0;
        let value = (beta / width) * n + (alpha / width) * tri;
        let deriv = (beta * dn + dalpha * tri + alpha * (2.0 * n + 1.0) / 2.0 * dn) / width;
        (value, deriv)
    } else {
        let start = beta + (q.first + 1.0) * alpha;
        let dstart = (q.first + 1.0) * dalpha;
        let gap = q.stride * alpha;
        let dgap = q.stride * dalpha;
        let tri = n * (n - 1.0) / 2.0;
        let value = (n * start + gap * tri) / width;
        let deriv =
            (dn * start + n * dstart + dgap * tri + gap * (2.0 * n - 1.0) / 2.0 * dn) / width;
        (value, deriv)
    }
}

fn pixel_from_quanta(q: &Quanta, ctx: &PairBinContext) -> PixelBins {
    if q.n == 0.0 {
        return PixelBins {
            softcount: q.ratio,
            ..PixelBins::default()
        };
    }
    let (mass, _) = upper_mass(q, q.n, q.ratio, 0.0, ctx);
    let plus = q.pol * mass;
    PixelBins {
        minus: q.pol * q.n - plus,
        plus,
        count: q.n,
        softcount: q.ratio,
    }
}

/// Closed-form bins for one pixel; `delta` is the threshold of the pixel's polarity.
pub fn bin_pixel(value: f64, delta: f64, ctx: &PairBinContext) -> PixelBins {
    let q = Quanta::resolve(value, delta, ctx.span(), 0.0, f64::INFINITY);
    pixel_from_quanta(&q, ctx)
}

/// Refractory variant of [`bin_pixel`]. Returns the bins and the
/// time of the last accepted event, if any.
pub fn bin_pixel_refractory(
    value: f64,
    delta: f64,
    ctx: &PairBinContext,
    refractory: f64,
    elapsed: f64,
) -> (PixelBins, Option<f64>) {
    if refractory == 0.0 {
        let q = Quanta::resolve(value, delta, ctx.span(), 0.0, f64::INFINITY);
        let last = (q.n > 0.0).then(|| ctx.t_k + q.last_offset(ctx.span()));
        return (pixel_from_quanta(&q, ctx), last);
    }
    let q = Quanta::resolve(value, delta, ctx.span(), refractory, elapsed);
    let last = (q.n > 0.0).then(|| ctx.t_k + q.last_offset(ctx.span()));
    (pixel_from_quanta(&q, ctx), last)
}

/// Per-plane outputs of one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBins {
    pub minus: Plane,
    pub plus: Plane,
    pub count: Plane,
    pub softcount: Plane,
}

impl PairBins {
    fn zeros(w: usize, h: usize) -> Self {
        Self {
            minus: Plane::zeros(w, h),
            plus: Plane::zeros(w, h),
            count: Plane::zeros(w, h),
            softcount: Plane::zeros(w, h),
        }
    }

    fn put(&mut self, i: usize, b: PixelBins) {
        self.minus.data[i] = b.minus;
        self.plus.data[i] = b.plus;
        self.count.data[i] = b.count;
        self.softcount.data[i] = b.softcount;
    }
}

fn pair_budget(count: &Plane) -> Result<()> {
    let total: f64 = count.data.iter().sum();
    if total > EVENT_BUDGET as f64 {
        return Err(Error::EventBudget {
            requested: total as u64,
            limit: EVENT_BUDGET,
        });
    }
    Ok(())
}

/// Closed-form bins for a whole filtered plane with uniform thresholds.
pub fn bin_pair(
    filtered: &Plane,
    delta_pos: f64,
    delta_neg: f64,
    ctx: &PairBinContext,
) -> Result<PairBins> {
    let mut out = PairBins::zeros(filtered.width, filtered.height);
    for (i, &v) in filtered.data.iter().enumerate() {
        let delta = if v > 0.0 { delta_pos } else { delta_neg };
        out.put(i, bin_pixel(v, delta, ctx));
    }
    pair_budget(&out.count)?;
    Ok(out)
}

/// Refractory variant of [`bin_pair`]. `elapsed` holds `t_k - t_last` per
/// pixel (infinite where the pixel never fired); the returned plane holds the
/// updated last-event times (unchanged where nothing was accepted).
pub fn bin_pair_refractory(
    filtered: &Plane,
    delta_pos: f64,
    delta_neg: f64,
    ctx: &PairBinContext,
    refractory: f64,
    elapsed: &Plane,
    last_event_time: &Plane,
) -> Result<(PairBins, Plane)> {
    elapsed.check_dims(filtered.width, filtered.height)?;
    let mut out = PairBins::zeros(filtered.width, filtered.height);
    let mut last = last_event_time.clone();
    for (i, &v) in filtered.data.iter().enumerate() {
        let delta = if v > 0.0 { delta_pos } else { delta_neg };
        let (bins, t) = bin_pixel_refractory(v, delta, ctx, refractory, elapsed.data[i]);
        out.put(i, bins);
        if let Some(t) = t {
            last.data[i] = t;
        }
    }
    pair_budget(&out.count)?;
    Ok((out, last))
}

/// Per-pixel record kept for the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PixelRecord {
    /// Sign of `I_RGC`; 0 means the pixel contributes nothing.
    pub pol: f64,
    pub ratio: f64,
    pub n: f64,
    pub first: f64,
    pub stride: f64,
    pub pinned: bool,
    /// Kernel threshold of the firing polarity (before the multiplier).
    pub threshold: f64,
    /// Threshold after the per-pixel multiplier.
    pub effective_threshold: f64,
    /// `d plus / d ratio` and `d minus / d ratio` under straight-through counting.
    pub dplus: f64,
    pub dminus: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub lower_bin: usize,
    pub ctx: PairBinContext,
    /// `I_curr - I_mem` per memory plane.
    pub diffs: Vec<Plane>,
    /// `[channel][pixel]`.
    pub pixels: Vec<Vec<PixelRecord>>,
    /// Which pixels fired, per memory plane.
    pub fired: Vec<Vec<bool>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub bin_times: Vec<f64>,
    pub kernel_sizes: Vec<usize>,
    pub border: crate::model::BorderMode,
    pub pairs: Vec<PairRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinOutput {
    pub grid: VoxelGrid,
    /// Sum of `|I_RGC| / delta` over pairs, channels and pixels.
    pub softcount: f64,
    /// Total emitted events.
    pub event_count: f64,
}

pub(crate) enum PassMode<'a> {
    Exact,
    Record,
    /// Straight-through surrogate around a recorded base point: the integer
    /// structure, polarities and memory writes are frozen, and the count
    /// follows `n0 + (ratio - ratio0) / stride`.
    Surrogate(&'a Tape),
}

fn check_cfg(bank: &KernelBank, cfg: &SimConfig) -> Result<()> {
    bank.validate()?;
    cfg.validate()?;
    if cfg.memory_update == MemoryUpdate::Residual {
        return Err(Error::UnsupportedResidual);
    }
    Ok(())
}

/// Shared forward pass behind [`bin_sequence`] and the gradient engine.
pub(crate) fn run_pass(
    seq: &FrameSequence,
    bank: &KernelBank,
    cfg: &SimConfig,
    bins: usize,
    mode: PassMode<'_>,
) -> Result<(BinOutput, Option<Tape>)> {
    seq.validate()?;
    check_cfg(bank, cfg)?;
    let anchors = make_anchors(seq, bins)?;
    let frames = seq.prepared_frames(cfg);
    let (w, h) = (seq.width, seq.height);
    let channels = bank.channels();
    let mut state = SensorState::new(&frames[0], bank, cfg);
    let mut grid = VoxelGrid::zeros(channels, w, h, anchors.times.clone());
    let mut softcount = 0.0;
    let mut event_count = 0.0;
    let record = matches!(mode, PassMode::Record);
    let frozen = match mode {
        PassMode::Surrogate(tape) => {
            if tape.pairs.len() != seq.len() - 1 || tape.channels != channels {
                return Err(Error::TapeMismatch("pair or channel count differs".into()));
            }
            Some(tape)
        }
        _ => None,
    };
    let mut pairs = Vec::new();

    for k in 0..seq.len() - 1 {
        let lower = anchors.interval_of_pair(k);
        let ctx = PairBinContext::new(
            seq.timestamps[k],
            seq.timestamps[k + 1],
            anchors.times[lower],
            anchors.times[lower + 1],
        )?;
        let curr = &frames[k + 1];
        let mut firings = vec![PairFiring::new(w * h); bank.memory_planes()];
        let mut diffs: Vec<Option<Plane>> = vec![None; bank.memory_planes()];
        let mut records = Vec::new();
        let mut pair_events = 0.0;

        for (c, kernel) in bank.kernels.iter().enumerate() {
            let memory = bank.memory_index(c);
            let (filtered, diff) = filtered_difference(curr, &state, memory, kernel, cfg.border_mode)?;
            let mut channel_records = if record {
                vec![PixelRecord::default(); w * h]
            } else {
                Vec::new()
            };
            for y in 0..h {
                for x in 0..w {
                    if !bank.is_active(c, x, y) {
                        continue;
                    }
                    let i = y * w + x;
                    let value = filtered.data[i];
                    let (base_delta, quanta, n, ratio) = match frozen {
                        None => {
                            if value == 0.0 {
                                continue;
                            }
                            let base = kernel.threshold_for(value);
                            let delta = base * state.threshold_mult.data[i];
                            let elapsed = ctx.t_k - state.last_event_time[c].data[i];
                            let q = Quanta::resolve(
                                value,
                                delta,
                                ctx.span(),
                                cfg.refractory_period,
                                elapsed,
                            );
                            (base, q, q.n, q.ratio)
                        }
                        Some(tape) => {
                            let rec = &tape.pairs[k].pixels[c][i];
                            if rec.pol == 0.0 {
                                continue;
                            }
                            let base = if rec.pol > 0.0 {
                                kernel.threshold_pos
                            } else {
                                kernel.threshold_neg
                            };
                            let ratio = rec.pol * value / (base * state.threshold_mult.data[i]);
                            let q = Quanta {
                                pol: rec.pol,
                                ratio: rec.ratio,
                                n: rec.n,
                                first: rec.first,
                                stride: rec.stride,
                                pinned: rec.pinned,
                            };
                            (base, q, rec.n + (ratio - rec.ratio) / rec.stride, ratio)
                        }
                    };

                    softcount += ratio;
                    let dn = 1.0 / quanta.stride;
                    let (mass, dmass) = if n != 0.0 || record {
                        upper_mass(&quanta, n, ratio, dn, &ctx)
                    } else {
                        (0.0, 0.0)
                    };
                    let plus = if n != 0.0 { quanta.pol * mass } else { 0.0 };
                    let minus = if n != 0.0 { quanta.pol * n - plus } else { 0.0 };
                    let lo = grid.index(c, lower, x, y);
                    let hi = grid.index(c, lower + 1, x, y);
                    grid.data[lo] += minus;
                    grid.data[hi] += plus;

                    if record {
                        let dplus = quanta.pol * dmass;
                        channel_records[i] = PixelRecord {
                            pol: quanta.pol,
                            ratio: quanta.ratio,
                            n: quanta.n,
                            first: quanta.first,
                            stride: quanta.stride,
                            pinned: quanta.pinned,
                            threshold: base_delta,
                            effective_threshold: base_delta * state.threshold_mult.data[i],
                            dplus,
                            dminus: quanta.pol * dn - dplus,
                        };
                    }

                    if quanta.n > 0.0 {
                        pair_events += quanta.n;
                    }
                    if frozen.is_none() && quanta.n > 0.0 {
                        state.last_event_time[c].data[i] = ctx.t_k + quanta.last_offset(ctx.span());
                        let firing = &mut firings[memory];
                        firing.accepted[i] = quanta.n as u32;
                        firing.polarity[i] = quanta.pol as i8;
                        firing.threshold[i] = base_delta * state.threshold_mult.data[i];
                    }
                }
            }
            if record {
                records.push(channel_records);
                if diffs[memory].is_none() {
                    diffs[memory] = Some(diff);
                }
            }
        }

        if pair_events > EVENT_BUDGET as f64 {
            return Err(Error::EventBudget {
                requested: pair_events as u64,
                limit: EVENT_BUDGET,
            });
        }
        event_count += pair_events;

        match frozen {
            None => {
                if record {
                    pairs.push(PairRecord {
                        lower_bin: lower,
                        ctx,
                        diffs: diffs.into_iter().map(|d| d.unwrap_or_else(|| Plane::zeros(w, h))).collect(),
                        pixels: records,
                        fired: firings
                            .iter()
                            .map(|f| f.accepted.iter().map(|a| *a > 0).collect())
                            .collect(),
                    });
                }
                for (memory, firing) in firings.iter().enumerate() {
                    memory_update(&mut state, memory, firing, curr, MemoryUpdate::ResetOnFire, bank)?;
                }
            }
            Some(tape) => {
                for (memory, fired) in tape.pairs[k].fired.iter().enumerate() {
                    let mem = &mut state.mem[memory];
                    for (i, f) in fired.iter().enumerate() {
                        if *f {
                            mem.data[i] = curr.data[i];
                        }
                    }
                }
            }
        }
    }

    let tape = record.then(|| Tape {
        channels,
        width: w,
        height: h,
        bin_times: anchors.times.clone(),
        kernel_sizes: bank.kernels.iter().map(|k| k.size).collect(),
        border: cfg.border_mode,
        pairs,
    });
    Ok((
        BinOutput {
            grid,
            softcount,
            event_count,
        },
        tape,
    ))
}

/// Closed-form voxel grid of a whole sequence plus its total softcount.
pub fn bin_sequence(
    seq: &FrameSequence,
    bank: &KernelBank,
    cfg: &SimConfig,
    bins: usize,
) -> Result<(VoxelGrid, f64)> {
    let (out, _) = run_pass(seq, bank, cfg, bins, PassMode::Exact)?;
    Ok((out.grid, out.softcount))
}

/// Like [`bin_sequence`], also reporting the emitted event count.
pub fn bin_sequence_full(
    seq: &FrameSequence,
    bank: &KernelBank,
    cfg: &SimConfig,
    bins: usize,
) -> Result<BinOutput> {
    run_pass(seq, bank, cfg, bins, PassMode::Exact).map(|(out, _)| out)
}

/// Linear two-bin accumulation of explicit events onto `anchors`.
pub fn bin_events(stream: &EventStream, anchors: &[f64]) -> Result<VoxelGrid> {
    if anchors.len() < 2 {
        return Err(Error::BinCount(anchors.len()));
    }
    let h = &stream.header;
    let mut grid = VoxelGrid::zeros(h.channels, h.width, h.height, anchors.to_vec());
    let last = anchors.len() - 2;
    for p in &stream.packets {
        // First interval whose upper anchor is >= t.
        let j = anchors[1..].partition_point(|a| *a < p.t).min(last);
        let (lo, hi) = (anchors[j], anchors[j + 1]);
        let w = (p.t - lo) / (hi - lo);
        let pol = p.polarity as f64;
        let (x, y, c) = (p.x as usize, p.y as usize, p.channel as usize);
        let i = grid.index(c, j, x, y);
        grid.data[i] += pol * (1.0 - w);
        let i = grid.index(c, j + 1, x, y);
        grid.data[i] += pol * w;
    }
    Ok(grid)
}
