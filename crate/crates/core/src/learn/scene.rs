//! Asset-free synthetic videos.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::FrameSequence;

const STREAM_SCENE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SceneKind {
    TranslatingGrating,
    MovingEdge,
    RandomTextureDrift,
}

impl SceneKind {
    pub const NAMES: [&'static str; 3] =
        ["translating_grating", "moving_edge", "random_texture_drift"];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "translating_grating" => Ok(Self::TranslatingGrating),
            "moving_edge" => Ok(Self::MovingEdge),
            "random_texture_drift" => Ok(Self::RandomTextureDrift),
            other => Err(Error::InvalidScene(format!("unknown scene kind `{}`", other))),
        }
    }
}

/// Scene parameters. Intensities stay inside `[0, 1]` when
/// `mean ± contrast / 2` does.
///
/// - `speed`: pixels per frame along `angle` (radians, 0 = +x).
/// - `period`: grating wavelength in pixels; texture feature scale.
/// - `components`: sinusoids summed into a random texture.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub dt: f64,
    pub speed: f64,
    pub angle: f64,
    pub period: f64,
    pub mean: f64,
    pub contrast: f64,
    pub components: usize,
    /// Moving edge: x position of the edge in frame 0.
    pub start: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            frames: 9,
            dt: 0.01,
            speed: 1.0,
            angle: 0.0,
            period: 8.0,
            mean: 0.5,
            contrast: 0.5,
            components: 6,
            start: 2.0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidScene(msg.into()));
        if self.width == 0 || self.height == 0 || self.width > 4096 || self.height > 4096 {
            return bad("width and height must be in 1..=4096");
        }
        if self.frames < 2 {
            return bad("need at least 2 frames");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be > 0");
        }
        if !self.speed.is_finite() || !self.angle.is_finite() || !self.start.is_finite() {
            return bad("speed, angle and start must be finite");
        }
        if !(self.period >= 2.0 && self.period.is_finite()) {
            return bad("period must be >= 2 pixels");
        }
        if !(0.0..=1.0).contains(&self.contrast) {
            return bad("contrast must be in [0, 1]");
        }
        if self.mean - self.contrast / 2.0 < 0.0 || self.mean + self.contrast / 2.0 > 1.0 {
            return bad("mean +- contrast/2 must stay in [0, 1]");
        }
        if self.components == 0 || self.components > 64 {
            return bad("components must be in 1..=64");
        }
        Ok(())
    }
}

/// `mean + contrast/2 * sin(2*pi*(u - speed*k) / period)` with `u` the
/// coordinate along `angle`. The per-frame temporal derivative is known in
/// closed form, see [`grating_derivative`].
fn grating(p: &SceneParams, x: f64, y: f64, k: f64) -> f64 {
    let u = x * libm::cos(p.angle) + y * libm::sin(p.angle);
    p.mean + p.contrast / 2.0 * libm::sin(2.0 * PI * (u - p.speed * k) / p.period)
}

/// `d I / d k` (per frame) of the translating grating at `(x, y, k)`.
pub fn grating_derivative(p: &SceneParams, x: f64, y: f64, k: f64) -> f64 {
    let u = x * libm::cos(p.angle) + y * libm::sin(p.angle);
    let w = 2.0 * PI / p.period;
    -p.contrast / 2.0 * w * p.speed * libm::cos(w * (u - p.speed * k))
}

struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
    norm: f64,
}

impl Texture {
    fn new(p: &SceneParams, rng: &mut ChaCha8Rng) -> Self {
        let waves: Vec<_> = (0..p.components)
            .map(|_| {
                let theta = rng.random_range(0.0..PI);
                let freq = 2.0 * PI / (p.period * rng.random_range(0.5..2.0));
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.5..1.0);
                (freq * libm::cos(theta), freq * libm::sin(theta), phase, amp)
            })
            .collect();
        let norm = waves.iter().map(|w| w.3).sum();
        Self { waves, norm }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|(kx, ky, phase, amp)| amp * libm::sin(kx * x + ky * y + phase))
            .sum::<f64>()
            / self.norm
    }
}

/// Deterministic synthetic sequence starting at `t = 0`.
pub fn synth_scene(kind: SceneKind, params: &SceneParams, seed: u64) -> Result<FrameSequence> {
    params.validate()?;
    let p = params;
    let (vx, vy) = (p.speed * libm::cos(p.angle), p.speed * libm::sin(p.angle));
    let texture = match kind {
        SceneKind::RandomTextureDrift => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(STREAM_SCENE);
            Some(Texture::new(p, &mut rng))
        }
        _ => None,
    };
    let (lo, hi) = (p.mean - p.contrast / 2.0, p.mean + p.contrast / 2.0);
    let frames = (0..p.frames)
        .map(|k| {
            let kf = k as f64;
            (0..p.width * p.height)
                .map(|i| {
                    let (x, y) = ((i % p.width) as f64, (i / p.width) as f64);
                    let v = match kind {
                        SceneKind::TranslatingGrating => grating(p, x, y, kf),
                        SceneKind::MovingEdge => {
                            if x < p.start + p.speed * kf {
                                hi
                            } else {
                                lo
                            }
                        }
                        SceneKind::RandomTextureDrift => {
                            let t = texture.as_ref().unwrap();
                            p.mean + p.contrast / 2.0 * t.eval(x - vx * kf, y - vy * kf)
                        }
                    };
                    v.clamp(0.0, 1.0) as f32
                })
                .collect()
        })
        .collect();
    let timestamps = (0..p.frames).map(|k| k as f64 * p.dt).collect();
    FrameSequence::new(p.width, p.height, timestamps, frames)
}
