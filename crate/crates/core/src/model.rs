//! Domain types shared by the simulator, the binner and the learner.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::noise;

/// A dense single-channel image of `f64` samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "plane {}x{} needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::DimensionMismatch {
                expected_w: width,
                expected_h: height,
                got_w: self.width,
                got_h: self.height,
            });
        }
        Ok(())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Plane) -> Result<Plane> {
        other.check_dims(self.width, self.height)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Plane {
            width: self.width,
            height: self.height,
            data,
        })
    }
}

/// Timestamped grayscale video. Intensities are linear and non-negative.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrameSequence {
    pub width: usize,
    pub height: usize,
    pub timestamps: Vec<f64>,
    pub frames: Vec<Vec<f32>>,
}

impl FrameSequence {
    pub fn new(
        width: usize,
        height: usize,
        timestamps: Vec<f64>,
        frames: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let seq = Self {
            width,
            height,
            timestamps,
            frames,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidSequence("empty frame dimensions".into()));
        }
        if self.timestamps.len() < 2 {
            return Err(Error::InvalidSequence(format!(
                "need at least 2 frames, got {}",
                self.timestamps.len()
            )));
        }
        if self.frames.len() != self.timestamps.len() {
            return Err(Error::InvalidSequence(format!(
                "{} timestamps for {} frames",
                self.timestamps.len(),
                self.frames.len()
            )));
        }
        if self.timestamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidSequence("non-finite timestamp".into()));
        }
        if let Some(k) = self.timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSequence(format!(
                "timestamps not strictly increasing at frame {}",
                k + 1
            )));
        }
        let n = self.width * self.height;
        for (k, frame) in self.frames.iter().enumerate() {
            if frame.len() != n {
                return Err(Error::InvalidSequence(format!(
                    "frame {} has {} samples, expected {}",
                    k,
                    frame.len(),
                    n
                )));
            }
            if frame.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidSequence(format!(
                    "frame {} has a negative or non-finite intensity",
                    k
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.timestamps[0]
    }

    pub fn end(&self) -> f64 {
        self.timestamps[self.timestamps.len() - 1]
    }

    pub fn frame_plane(&self, k: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.frames[k].iter().map(|&v| v as f64).collect(),
        }
    }

    /// Frames after intensity noise and the configured domain transform.
    /// Both simulation routes consume exactly these planes.
    pub fn prepared_frames(&self, cfg: &SimConfig) -> Vec<Plane> {
        let mut noise = noise::IntensityNoise::new(cfg.rng_seed, cfg.intensity_noise_sigma);
        (0..self.len())
            .map(|k| {
                let mut plane = self.frame_plane(k);
                noise.perturb(&mut plane);
                if cfg.intensity_domain == IntensityDomain::Log {
                    for v in plane.data.iter_mut() {
                        *v = libm::log(*v + cfg.log_eps);
                    }
                }
                plane
            })
            .collect()
    }
}

/// Square correlation kernel with its contrast thresholds.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RgcKernel {
    pub size: usize,
    /// Row-major `size * size` weights.
    pub weights: Vec<f64>,
    pub threshold_pos: f64,
    pub threshold_neg: f64,
}

pub const KERNEL_SIZES: [usize; 6] = [1, 3, 5, 7, 9, 11];

impl RgcKernel {
    pub fn new(size: usize, weights: Vec<f64>, threshold_pos: f64, threshold_neg: f64) -> Self {
        Self {
            size,
            weights,
            threshold_pos,
            threshold_neg,
        }
    }

    pub fn with_thresholds(mut self, threshold_pos: f64, threshold_neg: f64) -> Self {
        self.threshold_pos = threshold_pos;
        self.threshold_neg = threshold_neg;
        self
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn center(&self) -> f64 {
        let c = self.size / 2;
        self.weight(c, c)
    }

    /// True when every off-center weight is zero and the center is not.
    pub fn is_pointwise(&self) -> bool {
        let c = self.size / 2;
        let center = c * self.size + c;
        self.weights[center] != 0.0
            && self
                .weights
                .iter()
                .enumerate()
                .all(|(i, w)| i == center || *w == 0.0)
    }

    /// Threshold for an `I_RGC` of the given sign.
    #[inline]
    pub fn threshold_for(&self, value: f64) -> f64 {
        if value > 0.0 {
            self.threshold_pos
        } else {
            self.threshold_neg
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| -w).collect(),
            ..self.clone()
        }
    }

    fn validate(&self, channel: usize) -> Result<()> {
        let fail = |reason: alloc::string::String| Err(Error::InvalidKernel { channel, reason });
        if !KERNEL_SIZES.contains(&self.size) {
            return fail(format!("size {} must be one of {:?}", self.size, KERNEL_SIZES));
        }
        if self.weights.len() != self.size * self.size {
            return fail(format!(
                "{} weights for a {}x{} kernel",
                self.weights.len(),
                self.size,
                self.size
            ));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return fail("weights must be finite".into());
        }
        if !(self.threshold_pos > 0.0 && self.threshold_pos.is_finite()) {
            return fail(format!(
                "threshold must be positive (threshold_pos = {})",
                self.threshold_pos
            ));
        }
        if !(self.threshold_neg > 0.0 && self.threshold_neg.is_finite()) {
            return fail(format!(
                "threshold must be positive (threshold_neg = {})",
                self.threshold_neg
            ));
        }
        Ok(())
    }
}

/// How kernels in a bank are assigned to pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Layout {
    /// One kernel at every pixel.
    SingleChannel,
    /// Every kernel at every pixel, each with its own memory plane.
    MultiChannel,
    /// Four kernels in a 2x2 mosaic sharing one memory plane.
    SpatiallyVarying,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelBank {
    pub layout: Layout,
    pub kernels: Vec<RgcKernel>,
}

impl KernelBank {
    pub fn single(kernel: RgcKernel) -> Self {
        Self {
            layout: Layout::SingleChannel,
            kernels: vec![kernel],
        }
    }

    pub fn multi(kernels: Vec<RgcKernel>) -> Self {
        Self {
            layout: Layout::MultiChannel,
            kernels,
        }
    }

    pub fn spatially_varying(kernels: Vec<RgcKernel>) -> Self {
        Self {
            layout: Layout::SpatiallyVarying,
            kernels,
        }
    }

    pub fn channels(&self) -> usize {
        self.kernels.len()
    }

    /// Checks every invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        match (self.layout, self.kernels.len()) {
            (_, 0) => return Err(Error::InvalidBank("bank has no kernels".into())),
            (Layout::SingleChannel, n) if n != 1 => {
                return Err(Error::InvalidBank(format!(
                    "single-channel layout requires 1 kernel, got {}",
                    n
                )))
            }
            (Layout::SpatiallyVarying, n) if n != 4 => {
                return Err(Error::InvalidBank(format!(
                    "spatially-varying layout requires 4 kernels, got {}",
                    n
                )))
            }
            (Layout::MultiChannel, n) if n > 128 => {
                return Err(Error::InvalidBank(format!(
                    "at most 128 channels fit the packet format, got {}",
                    n
                )))
            }
            _ => {}
        }
        for (c, k) in self.kernels.iter().enumerate() {
            k.validate(c)?;
        }
        Ok(())
    }

    /// Number of independent memory planes the layout needs.
    pub fn memory_planes(&self) -> usize {
        match self.layout {
            Layout::MultiChannel => self.kernels.len(),
            _ => 1,
        }
    }

    #[inline]
    pub fn memory_index(&self, channel: usize) -> usize {
        match self.layout {
            Layout::MultiChannel => channel,
            _ => 0,
        }
    }

    /// Whether `channel` runs at pixel `(x, y)`.
    #[inline]
    pub fn is_active(&self, channel: usize, x: usize, y: usize) -> bool {
        match self.layout {
            Layout::SpatiallyVarying => channel == 2 * (y % 2) + (x % 2),
            _ => true,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            layout: self.layout,
            kernels: self.kernels.iter().map(RgcKernel::negated).collect(),
        }
    }

    pub fn with_scaled_thresholds(&self, factor: f64) -> Self {
        Self {
            layout: self.layout,
            kernels: self
                .kernels
                .iter()
                .map(|k| {
                    k.clone()
                        .with_thresholds(k.threshold_pos * factor, k.threshold_neg * factor)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum IntensityDomain {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BorderMode {
    /// Out-of-frame taps read the nearest edge pixel.
    #[default]
    Replicate,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MemoryUpdate {
    /// Memory takes the current intensity wherever an event fired.
    #[default]
    ResetOnFire,
    /// Memory advances by the emitted quanta only (pointwise kernels only).
    Residual,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SimConfig {
    pub intensity_domain: IntensityDomain,
    pub log_eps: f64,
    /// Seconds; 0 disables the refractory window.
    pub refractory_period: f64,
    /// Relative std of the frozen per-pixel threshold multipliers.
    pub threshold_sigma: f64,
    /// Std of additive Gaussian noise applied to every frame.
    pub intensity_noise_sigma: f64,
    /// Events per pixel per second; only the oracle injects shot noise.
    pub shot_noise_rate: f64,
    pub rng_seed: u64,
    pub border_mode: BorderMode,
    pub memory_update: MemoryUpdate,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            intensity_domain: IntensityDomain::Linear,
            log_eps: 1e-3,
            refractory_period: 0.0,
            threshold_sigma: 0.0,
            intensity_noise_sigma: 0.0,
            shot_noise_rate: 0.0,
            rng_seed: 0,
            border_mode: BorderMode::Replicate,
            memory_update: MemoryUpdate::ResetOnFire,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{} must be >= 0, got {}", name, v)))
            }
        };
        if !(self.log_eps > 0.0 && self.log_eps.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "log_eps must be > 0, got {}",
                self.log_eps
            )));
        }
        nonneg("refractory_period", self.refractory_period)?;
        nonneg("threshold_sigma", self.threshold_sigma)?;
        nonneg("intensity_noise_sigma", self.intensity_noise_sigma)?;
        nonneg("shot_noise_rate", self.shot_noise_rate)?;
        Ok(())
    }
}

/// Mutable per-pass sensor state.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorState {
    /// One memory plane per memory group of the bank.
    pub mem: Vec<Plane>,
    /// Frozen per-pixel threshold multipliers, all > 0.
    pub threshold_mult: Plane,
    /// Per-channel time of the most recent accepted event.
    pub last_event_time: Vec<Plane>,
}

impl SensorState {
    /// Memory starts at the first prepared frame; no pixel has fired yet.
    pub fn new(first_frame: &Plane, bank: &KernelBank, cfg: &SimConfig) -> Self {
        let (w, h) = (first_frame.width, first_frame.height);
        Self {
            mem: vec![first_frame.clone(); bank.memory_planes()],
            threshold_mult: noise::threshold_field(w, h, cfg.threshold_sigma, cfg.rng_seed),
            last_event_time: vec![Plane::filled(w, h, f64::NEG_INFINITY); bank.channels()],
        }
    }

    pub fn width(&self) -> usize {
        self.threshold_mult.width
    }

    pub fn height(&self) -> usize {
        self.threshold_mult.height
    }
}

/// Signed event mass on uniform anchors, indexed `[channel, bin, y, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub bin_times: Vec<f64>,
    pub data: Vec<f64>,
}

impl VoxelGrid {
    pub fn zeros(channels: usize, width: usize, height: usize, bin_times: Vec<f64>) -> Self {
        let len = channels * bin_times.len() * width * height;
        Self {
            channels,
            width,
            height,
            bin_times,
            data: vec![0.0; len],
        }
    }

    pub fn bins(&self) -> usize {
        self.bin_times.len()
    }

    #[inline]
    pub fn index(&self, channel: usize, bin: usize, x: usize, y: usize) -> usize {
        ((channel * self.bins() + bin) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, channel: usize, bin: usize, x: usize, y: usize) -> f64 {
        self.data[self.index(channel, bin, x, y)]
    }

    /// Same shape and anchors, zero data.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels, self.width, self.height, self.bin_times.clone())
    }

    pub fn same_shape(&self, other: &VoxelGrid) -> bool {
        self.channels == other.channels
            && self.width == other.width
            && self.height == other.height
            && self.bins() == other.bins()
    }

    pub fn max_abs_diff(&self, other: &VoxelGrid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }
}
