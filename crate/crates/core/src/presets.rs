//! The kernel zoo.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{RgcKernel, KERNEL_SIZES};

/// Threshold given to preset kernels until the caller overrides it.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// Identity kernel: a conventional per-pixel event camera.
    Dvs,
    /// 3x3 discrete Laplacian center-surround kernel.
    CsdvsDelbruck,
    /// +1 center, uniform surround summing to -1.
    CenterOn,
    CenterOff,
    /// Difference of unit-sum Gaussians, `sigma_surround > sigma_center`.
    Dog {
        sigma_center: f64,
        sigma_surround: f64,
    },
}

impl Preset {
    pub const NAMES: [&'static str; 5] = ["dvs", "csdvs_delbruck", "center_on", "center_off", "dog"];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Dvs => "dvs",
            Preset::CsdvsDelbruck => "csdvs_delbruck",
            Preset::CenterOn => "center_on",
            Preset::CenterOff => "center_off",
            Preset::Dog { .. } => "dog",
        }
    }

    /// Parses `dvs`, `center_on`, ... or `dog(sigma_c,sigma_s)`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        match spec {
            "dvs" => return Ok(Preset::Dvs),
            "csdvs_delbruck" | "csdvs" => return Ok(Preset::CsdvsDelbruck),
            "center_on" => return Ok(Preset::CenterOn),
            "center_off" => return Ok(Preset::CenterOff),
            _ => {}
        }
        let args = spec
            .strip_prefix("dog(")
            .and_then(|rest| rest.strip_suffix(')'))
            .ok_or_else(|| Error::UnknownPreset(spec.to_string()))?;
        let parsed: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<core::result::Result<_, _>>()
            .map_err(|_| Error::InvalidPresetParams(format!("cannot parse `{}`", spec)))?;
        match parsed[..] {
            [sigma_center, sigma_surround] => Ok(Preset::Dog {
                sigma_center,
                sigma_surround,
            }),
            _ => Err(Error::InvalidPresetParams(format!(
                "dog takes two sigmas, got `{}`",
                spec
            ))),
        }
    }
}

impl core::fmt::Display for Preset {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Preset::Dog {
                sigma_center,
                sigma_surround,
            } => write!(f, "dog({},{})", sigma_center, sigma_surround),
            other => f.write_str(other.name()),
        }
    }
}

/// Builds a preset kernel of size `k` with [`DEFAULT_THRESHOLD`] on both polarities.
pub fn preset_kernel(preset: &Preset, k: usize) -> Result<RgcKernel> {
    let incompatible = || Error::IncompatibleSize {
        name: preset.name().to_string(),
        size: k,
    };
    if !KERNEL_SIZES.contains(&k) {
        return Err(incompatible());
    }
    let center = (k / 2) * k + k / 2;
    let weights = match *preset {
        Preset::Dvs => {
            let mut w = vec![0.0; k * k];
            w[center] = 1.0;
            w
        }
        Preset::CsdvsDelbruck => {
            if k != 3 {
                return Err(incompatible());
            }
            vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]
        }
        Preset::CenterOn | Preset::CenterOff => {
            if k < 3 {
                return Err(incompatible());
            }
            let surround = -1.0 / (k * k - 1) as f64;
            let mut w = vec![surround; k * k];
            w[center] = 1.0;
            if *preset == Preset::CenterOff {
                w.iter_mut().for_each(|v| *v = -*v);
            }
            w
        }
        Preset::Dog {
            sigma_center,
            sigma_surround,
        } => {
            if !(sigma_center > 0.0 && sigma_surround > sigma_center && sigma_surround.is_finite())
            {
                return Err(Error::InvalidPresetParams(format!(
                    "dog needs 0 < sigma_center < sigma_surround, got ({}, {})",
                    sigma_center, sigma_surround
                )));
            }
            if k < 3 {
                return Err(incompatible());
            }
            let c = gaussian(k, sigma_center);
            let s = gaussian(k, sigma_surround);
            c.iter().zip(&s).map(|(a, b)| a - b).collect()
        }
    };
    Ok(RgcKernel::new(k, weights, DEFAULT_THRESHOLD, DEFAULT_THRESHOLD))
}

/// Unit-sum Gaussian sampled at integer offsets from the center.
fn gaussian(k: usize, sigma: f64) -> Vec<f64> {
    let half = (k / 2) as f64;
    let mut w: Vec<f64> = (0..k * k)
        .map(|i| {
            let dy = (i / k) as f64 - half;
            let dx = (i % k) as f64 - half;
            libm::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
        })
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Human-readable rendering of a kernel's weights, one row per line.
pub fn format_weights(kernel: &RgcKernel) -> String {
    let mut out = String::new();
    for r in 0..kernel.size {
        let row: Vec<String> = (0..kernel.size)
            .map(|c| format!("{:>9.5}", kernel.weight(r, c)))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delbruck_matches_published_values() {
        let k = preset_kernel(&Preset::CsdvsDelbruck, 3).unwrap();
        assert_eq!(k.weights, vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn delbruck_rejects_other_sizes() {
        assert!(matches!(
            preset_kernel(&Preset::CsdvsDelbruck, 5),
            Err(Error::IncompatibleSize { size: 5, .. })
        ));
    }

    #[test]
    fn dvs_is_identity() {
        let k = preset_kernel(&Preset::Dvs, 5).unwrap();
        for (i, w) in k.weights.iter().enumerate() {
            assert_eq!(*w, if i == 12 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn center_on_3() {
        let k = preset_kernel(&Preset::CenterOn, 3).unwrap();
        assert_eq!(k.center(), 1.0);
        assert_eq!(k.weights.iter().filter(|w| **w == -0.125).count(), 8);
    }

    #[test]
    fn center_off_is_negated_center_on() {
        for k in [3, 5, 7, 9, 11] {
            let on = preset_kernel(&Preset::CenterOn, k).unwrap();
            let off = preset_kernel(&Preset::CenterOff, k).unwrap();
            for (a, b) in on.weights.iter().zip(&off.weights) {
                assert_eq!(*a, -*b);
            }
        }
    }

    #[test]
    fn dog_sums_to_zero() {
        for k in [3, 5, 7, 9, 11] {
            let dog = Preset::Dog {
                sigma_center: 0.7,
                sigma_surround: 2.0,
            };
            let w = preset_kernel(&dog, k).unwrap();
            let sum: f64 = w.weights.iter().sum();
            assert!(sum.abs() < 1e-9, "k={} sum={}", k, sum);
            assert!(w.center() > 0.0);
        }
    }

    #[test]
    fn dog_rejects_inverted_sigmas() {
        let dog = Preset::Dog {
            sigma_center: 2.0,
            sigma_surround: 1.0,
        };
        assert!(preset_kernel(&dog, 5).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!(Preset::parse("dvs").unwrap(), Preset::Dvs);
        assert_eq!(
            Preset::parse("dog(1, 2.5)").unwrap(),
            Preset::Dog {
                sigma_center: 1.0,
                sigma_surround: 2.5
            }
        );
        assert!(matches!(Preset::parse("sobel"), Err(Error::UnknownPreset(_))));
    }
}
