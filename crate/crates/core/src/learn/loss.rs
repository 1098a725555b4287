//! Task losses and the linear reconstruction decoder.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Plane, VoxelGrid};

/// Mean over pixels of `sqrt((pred - target)^2 + eps^2)`.
pub fn charbonnier(pred: &Plane, target: &Plane, eps: f64) -> Result<f64> {
    check_planes(pred, target)?;
    check_eps(eps)?;
    let n = pred.data.len() as f64;
    Ok(pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| libm::sqrt((p - t) * (p - t) + eps * eps))
        .sum::<f64>()
        / n)
}

/// Charbonnier over a stack of planes (mean over every pixel of every
/// plane) and its gradient in `pred`.
pub fn charbonnier_stack(pred: &[Plane], target: &[Plane], eps: f64) -> Result<(f64, Vec<Plane>)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted planes, {} target planes",
            pred.len(),
            target.len()
        )));
    }
    check_eps(eps)?;
    let total: usize = pred.iter().map(|p| p.data.len()).sum();
    let n = total.max(1) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        check_planes(p, t)?;
        let mut g = Plane::zeros(p.width, p.height);
        for (i, (a, b)) in p.data.iter().zip(&t.data).enumerate() {
            let r = a - b;
            let s = libm::sqrt(r * r + eps * eps);
            loss += s;
            g.data[i] = r / s / n;
        }
        grads.push(g);
    }
    Ok((loss / n, grads))
}

fn check_planes(a: &Plane, b: &Plane) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.data.len() != b.data.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidLearnConfig(format!("charbonnier eps must be > 0, got {}", eps)))
    }
}

/// `0.5 * mean((grid - target)^2)` and its gradient.
pub fn grid_mse(grid: &VoxelGrid, target: &VoxelGrid) -> Result<(f64, VoxelGrid)> {
    if !grid.same_shape(target) {
        return Err(Error::ShapeMismatch("voxel grids differ in shape".into()));
    }
    let n = grid.data.len().max(1) as f64;
    let mut g = grid.zeros_like();
    let mut loss = 0.0;
    for (i, (a, b)) in grid.data.iter().zip(&target.data).enumerate() {
        let r = a - b;
        loss += 0.5 * r * r;
        g.data[i] = r / n;
    }
    Ok((loss / n, g))
}

/// Linear read-out from a voxel grid to the `B - 1` frame-difference planes
/// between consecutive anchors.
///
/// Interval `j` is predicted from bins `j` and `j + 1` of every channel, each
/// through its own 3x3 zero-padded correlation, plus a shared bias.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Decoder {
    pub channels: usize,
    /// `[channel][slot][3x3]`, slot 0 reads the lower bin.
    pub taps: Vec<f64>,
    pub bias: f64,
}

pub const DECODER_TAPS: usize = 9;

impl Decoder {
    /// Every channel reads both bins through the centre tap with weight `gain`.
    pub fn new(channels: usize, gain: f64) -> Self {
        let mut taps = vec![0.0; channels * 2 * DECODER_TAPS];
        for block in taps.chunks_mut(DECODER_TAPS) {
            block[4] = gain;
        }
        Self {
            channels,
            taps,
            bias: 0.0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.taps.len() + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.taps.clone();
        p.push(self.bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let n = self.taps.len();
        self.taps.copy_from_slice(&p[..n]);
        self.bias = p[n];
    }

    fn tap(&self, c: usize, slot: usize, r: usize, col: usize) -> f64 {
        self.taps[(c * 2 + slot) * DECODER_TAPS + r * 3 + col]
    }

    pub fn predict(&self, grid: &VoxelGrid) -> Result<Vec<Plane>> {
        self.check(grid)?;
        let (w, h) = (grid.width, grid.height);
        let mut out = Vec::with_capacity(grid.bins() - 1);
        for j in 0..grid.bins() - 1 {
            let mut p = Plane::filled(w, h, self.bias);
            for c in 0..self.channels {
                for slot in 0..2 {
                    for y in 0..h {
                        for x in 0..w {
                            let mut acc = 0.0;
                            for r in 0..3 {
                                for col in 0..3 {
                                    let (sx, sy) = (x as isize + col as isize - 1, y as isize + r as isize - 1);
                                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                                        continue;
                                    }
                                    acc += self.tap(c, slot, r, col)
                                        * grid.get(c, j + slot, sx as usize, sy as usize);
                                }
                            }
                            p.data[y * w + x] += acc;
                        }
                    }
                }
            }
            out.push(p);
        }
        Ok(out)
    }

    /// Given `d loss / d prediction`, returns `d loss / d grid` and the
    /// decoder parameter gradient (same order as [`Decoder::params`]).
    pub fn backward(&self, grid: &VoxelGrid, dpred: &[Plane]) -> Result<(VoxelGrid, Vec<f64>)> {
        self.check(grid)?;
        if dpred.len() + 1 != grid.bins() {
            return Err(Error::ShapeMismatch("decoder upstream has the wrong plane count".into()));
        }
        let (w, h) = (grid.width, grid.height);
        let mut dgrid = grid.zeros_like();
        let mut dparams = vec![0.0; self.param_count()];
        for (j, g) in dpred.iter().enumerate() {
            check_planes(g, &Plane::zeros(w, h))?;
            dparams[self.taps.len()] += g.data.iter().sum::<f64>();
            for c in 0..self.channels {
                for slot in 0..2 {
                    let base = (c * 2 + slot) * DECODER_TAPS;
                    for y in 0..h {
                        for x in 0..w {
                            let up = g.data[y * w + x];
                            if up == 0.0 {
                                continue;
                            }
                            for r in 0..3 {
                                for col in 0..3 {
                                    let (sx, sy) = (x as isize + col as isize - 1, y as isize + r as isize - 1);
                                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                                        continue;
                                    }
                                    let cell = dgrid.index(c, j + slot, sx as usize, sy as usize);
                                    dparams[base + r * 3 + col] += up * grid.data[cell];
                                    dgrid.data[cell] += up * self.taps[base + r * 3 + col];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((dgrid, dparams))
    }

    fn check(&self, grid: &VoxelGrid) -> Result<()> {
        if grid.channels != self.channels || grid.bins() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "decoder for {} channels, grid has {} channels and {} bins",
                self.channels,
                grid.channels,
                grid.bins()
            )));
        }
        Ok(())
    }
}

/// What the grid is judged against.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskTarget<'a> {
    /// Grid produced by the hidden target bank.
    Grid(&'a VoxelGrid),
    /// Anchor-to-anchor frame differences, read out through `decoder`.
    Frames {
        differences: &'a [Plane],
        decoder: &'a Decoder,
        eps: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub task: f64,
    pub total: f64,
    pub dgrid: VoxelGrid,
    pub dsoftcount: f64,
    /// Decoder parameter gradient; empty for grid matching.
    pub ddecoder: Vec<f64>,
}

/// `task + lambda * softcount` with the upstream gradients for the binner.
///
/// `softcount` is taken as given; the learner passes the mean softcount per
/// bin.
pub fn total_loss(grid: &VoxelGrid, softcount: f64, target: &TaskTarget<'_>, lambda: f64) -> Result<LossEval> {
    let (task, dgrid, ddecoder) = match target {
        TaskTarget::Grid(t) => {
            let (l, g) = grid_mse(grid, t)?;
            (l, g, Vec::new())
        }
        TaskTarget::Frames {
            differences,
            decoder,
            eps,
        } => {
            let pred = decoder.predict(grid)?;
            let (l, dpred) = charbonnier_stack(&pred, differences, *eps)?;
            let (g, dd) = decoder.backward(grid, &dpred)?;
            (l, g, dd)
        }
    };
    Ok(LossEval {
        task,
        total: task + lambda * softcount,
        dgrid,
        dsoftcount: lambda,
        ddecoder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn charbonnier_examples() {
        let p = Plane::filled(3, 2, 0.4);
        assert!(close(charbonnier(&p, &p, 1e-3).unwrap(), 1e-3, 1e-15));
        let t = Plane::filled(3, 2, 3.4);
        assert!(close(charbonnier(&t, &p, 1e-9).unwrap(), 3.0, 1e-9));
        let a = Plane::filled(2, 2, 4.0);
        let b = Plane::zeros(2, 2);
        assert!(close(charbonnier(&a, &b, 3.0).unwrap(), 5.0, 1e-12));
        assert!(charbonnier(&a, &Plane::zeros(3, 2), 1.0).is_err());
        assert!(charbonnier(&a, &b, 0.0).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let grid = VoxelGrid::zeros(1, 4, 4, vec![0.0, 1.0]);
        let zero = grid.clone();
        let e = total_loss(&grid, 0.0, &TaskTarget::Grid(&zero), 0.0).unwrap();
        assert_eq!(e.total, 0.0);
        let mut t = grid.clone();
        t.data[0] = 1.0;
        // one unit residual over 32 cells
        let e = total_loss(&grid, 123.0, &TaskTarget::Grid(&t), 0.0).unwrap();
        assert!(close(e.total, 0.5 / 32.0, 1e-15));
        let mut t = grid.clone();
        t.data.iter_mut().for_each(|v| *v = 1.0);
        let e = total_loss(&grid, 1e4, &TaskTarget::Grid(&t), 1e-4).unwrap();
        assert!(close(e.task, 0.5, 1e-15));
        assert!(close(e.total, 1.5, 1e-12));
        assert_eq!(e.dsoftcount, 1e-4);
    }

    #[test]
    fn decoder_backward_matches_differences() {
        let mut grid = VoxelGrid::zeros(2, 4, 3, vec![0.0, 1.0, 2.0]);
        for (i, v) in grid.data.iter_mut().enumerate() {
            *v = ((i * 7919) % 13) as f64 / 5.0 - 1.0;
        }
        let mut dec = Decoder::new(2, 0.3);
        for (i, t) in dec.taps.iter_mut().enumerate() {
            *t += ((i * 31) % 7) as f64 / 20.0;
        }
        dec.bias = 0.1;
        let target: Vec<Plane> = (0..2).map(|j| Plane::filled(4, 3, j as f64 - 0.5)).collect();
        let eps = 0.05;
        let loss = |g: &VoxelGrid, d: &Decoder| {
            charbonnier_stack(&d.predict(g).unwrap(), &target, eps).unwrap().0
        };
        let (_, dpred) = charbonnier_stack(&dec.predict(&grid).unwrap(), &target, eps).unwrap();
        let (dgrid, dparams) = dec.backward(&grid, &dpred).unwrap();
        let h = 1e-6;
        for i in 0..grid.data.len() {
            let (mut a, mut b) = (grid.clone(), grid.clone());
            a.data[i] += h;
            b.data[i] -= h;
            let fd = (loss(&a, &dec) - loss(&b, &dec)) / (2.0 * h);
            assert!(close(fd, dgrid.data[i], 1e-7), "cell {}", i);
        }
        let base = dec.params();
        for i in 0..base.len() {
            let (mut a, mut b) = (dec.clone(), dec.clone());
            let mut p = base.clone();
            p[i] += h;
            a.set_params(&p);
            p[i] -= 2.0 * h;
            b.set_params(&p);
            let fd = (loss(&grid, &a) - loss(&grid, &b)) / (2.0 * h);
            assert!(close(fd, dparams[i], 1e-7), "param {}", i);
        }
    }
}
