//! Same-size 2D correlation (no kernel flip) with border handling.

use crate::error::Result;
use crate::model::{BorderMode, Plane, RgcKernel, SensorState};

/// Reads `plane` at a possibly out-of-frame coordinate.
#[inline]
pub fn sample(plane: &Plane, x: isize, y: isize, border: BorderMode) -> f64 {
    let (w, h) = (plane.width as isize, plane.height as isize);
    match border {
        BorderMode::Replicate => {
            let xc = x.clamp(0, w - 1) as usize;
            let yc = y.clamp(0, h - 1) as usize;
            plane.get(xc, yc)
        }
        BorderMode::Zero => {
            if x < 0 || y < 0 || x >= w || y >= h {
                0.0
            } else {
                plane.get(x as usize, y as usize)
            }
        }
    }
}

/// `out(x, y) = sum_{r,c} W[r][c] * input(x + c - half, y + r - half)`.
pub fn correlate(input: &Plane, kernel: &RgcKernel, border: BorderMode) -> Plane {
    let k = kernel.size;
    let half = (k / 2) as isize;
    let mut out = Plane::zeros(input.width, input.height);
    for y in 0..input.height {
        for x in 0..input.width {
            let mut acc = 0.0;
            for r in 0..k {
                for c in 0..k {
                    let w = kernel.weights[r * k + c];
                    if w != 0.0 {
                        let sx = x as isize + c as isize - half;
                        let sy = y as isize + r as isize - half;
                        acc += w * sample(input, sx, sy, border);
                    }
                }
            }
            out.data[y * input.width + x] = acc;
        }
    }
    out
}

/// Gradient of `sum(upstream * correlate(input, W))` with respect to `W`,
/// accumulated into `dw` in a fixed pixel order.
pub fn correlate_weight_grad(
    input: &Plane,
    upstream: &Plane,
    size: usize,
    border: BorderMode,
    dw: &mut [f64],
) {
    let half = (size / 2) as isize;
    for y in 0..input.height {
        for x in 0..input.width {
            let g = upstream.get(x, y);
            if g == 0.0 {
                continue;
            }
            for r in 0..size {
                for c in 0..size {
                    let sx = x as isize + c as isize - half;
                    let sy = y as isize + r as isize - half;
                    dw[r * size + c] += g * sample(input, sx, sy, border);
                }
            }
        }
    }
}

/// `I_RGC = W ⋆ (I_curr - I_mem)` for one memory plane of `state`.
pub fn filtered_difference(
    curr: &Plane,
    state: &SensorState,
    memory: usize,
    kernel: &RgcKernel,
    border: BorderMode,
) -> Result<(Plane, Plane)> {
    let mem = &state.mem[memory];
    curr.check_dims(mem.width, mem.height)?;
    let diff = curr.sub(mem)?;
    let filtered = correlate(&diff, kernel, border);
    Ok((filtered, diff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{preset_kernel, Preset};
    use alloc::vec;

    #[test]
    fn identity_passes_through() {
        let k = preset_kernel(&Preset::Dvs, 3).unwrap();
        let p = Plane::filled(5, 4, 0.2);
        assert_eq!(correlate(&p, &k, BorderMode::Replicate), p);
    }

    #[test]
    fn zero_sum_kernel_kills_constant() {
        let k = preset_kernel(&Preset::CsdvsDelbruck, 3).unwrap();
        let out = correlate(&Plane::filled(6, 6, 0.37), &k, BorderMode::Replicate);
        assert!(out.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_border_creates_edge_response() {
        let k = preset_kernel(&Preset::CsdvsDelbruck, 3).unwrap();
        let out = correlate(&Plane::filled(4, 4, 1.0), &k, BorderMode::Zero);
        assert_eq!(out.get(0, 0), -2.0);
        assert_eq!(out.get(1, 1), 0.0);
    }

    #[test]
    fn impulse_response_is_kernel() {
        let k = preset_kernel(&Preset::CsdvsDelbruck, 3).unwrap();
        let mut p = Plane::zeros(5, 5);
        p.set(2, 2, 1.0);
        let out = correlate(&p, &k, BorderMode::Replicate);
        assert_eq!(out.get(2, 2), -4.0);
        for (x, y) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(out.get(x, y), 1.0);
        }
        assert_eq!(out.get(1, 1), 0.0);
        assert_eq!(out.data.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn correlation_does_not_flip() {
        // Asymmetric kernel: weight only at the right neighbour.
        let mut w = vec![0.0; 9];
        w[5] = 1.0;
        let k = RgcKernel::new(3, w, 0.1, 0.1);
        let mut p = Plane::zeros(5, 1);
        p.set(3, 0, 1.0);
        let out = correlate(&p, &k, BorderMode::Zero);
        assert_eq!(out.get(2, 0), 1.0);
        assert_eq!(out.get(4, 0), 0.0);
    }

    #[test]
    fn weight_grad_matches_directional_derivative() {
        let input = Plane::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        let upstream =
            Plane::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        for border in [BorderMode::Replicate, BorderMode::Zero] {
            let mut dw = vec![0.0; 9];
            correlate_weight_grad(&input, &upstream, 3, border, &mut dw);
            for tap in 0..9 {
                let mut w = vec![0.0; 9];
                w[tap] = 1.0;
                let out = correlate(&input, &RgcKernel::new(3, w, 1.0, 1.0), border);
                let expect: f64 = out.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum();
                assert!((expect - dw[tap]).abs() < 1e-12);
            }
        }
    }
}
