//! Seeded sensor non-idealities.
//!
//! Each effect draws from its own ChaCha stream of the run seed, so enabling
//! one never shifts the samples of another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::model::Plane;

const STREAM_THRESHOLD: u64 = 1;
const STREAM_INTENSITY: u64 = 2;
const STREAM_SHOT: u64 = 3;

/// Lower clamp for threshold multipliers.
pub const MIN_THRESHOLD_MULT: f64 = 0.1;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Per-pixel threshold multipliers drawn once from `Normal(1, sigma)`.
pub fn threshold_field(width: usize, height: usize, sigma: f64, seed: u64) -> Plane {
    if sigma == 0.0 {
        return Plane::filled(width, height, 1.0);
    }
    let mut rng = stream(seed, STREAM_THRESHOLD);
    let normal = Normal::new(1.0, sigma).expect("sigma validated finite and >= 0");
    let data = (0..width * height)
        .map(|_| normal.sample(&mut rng).max(MIN_THRESHOLD_MULT))
        .collect();
    Plane {
        width,
        height,
        data,
    }
}

/// Additive Gaussian intensity noise, one fresh draw per frame pixel.
/// Noisy intensities are clamped at zero.
#[derive(Debug)]
pub struct IntensityNoise {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl IntensityNoise {
    pub fn new(seed: u64, sigma: f64) -> Self {
        Self {
            rng: stream(seed, STREAM_INTENSITY),
            normal: (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma")),
        }
    }

    pub fn perturb(&mut self, plane: &mut Plane) {
        if let Some(normal) = &self.normal {
            for v in plane.data.iter_mut() {
                *v = (*v + normal.sample(&mut self.rng)).max(0.0);
            }
        }
    }
}

/// Poisson shot-noise source: random-polarity events at uniform times.
#[derive(Debug)]
pub struct ShotNoise {
    rng: ChaCha8Rng,
    rate: f64,
}

impl ShotNoise {
    pub fn new(seed: u64, rate: f64) -> Self {
        Self {
            rng: stream(seed, STREAM_SHOT),
            rate,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.rate > 0.0
    }

    /// Calls `emit(t, polarity)` for each noise event in `(t0, t1]`.
    pub fn sample_interval(&mut self, t0: f64, t1: f64, mut emit: impl FnMut(f64, i8)) {
        if !self.is_enabled() {
            return;
        }
        let lambda = self.rate * (t1 - t0);
        let count = match Poisson::new(lambda) {
            Ok(p) => p.sample(&mut self.rng) as u64,
            Err(_) => 0,
        };
        for _ in 0..count {
            // random::<f64>() is in [0, 1); flip it so the interval is half-open at t0.
            let u: f64 = self.rng.random();
            let t = t0 + (1.0 - u) * (t1 - t0);
            let polarity = if self.rng.random::<bool>() { 1 } else { -1 };
            emit(t, polarity);
        }
    }
}
