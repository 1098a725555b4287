//! Reverse-mode gradients of the closed-form binner.
//!
//! The floor that turns `|I_RGC| / delta` into an event count is passed
//! straight through (`dN/dratio := 1 / stride`), polarity is a constant, and
//! the event spacing `alpha` is differentiated exactly. Memory writes are a
//! stop-gradient: reset memory takes the current frame, which does not depend
//! on the kernel parameters.

use alloc::vec;
use alloc::vec::Vec;

use crate::binner::{run_pass, BinOutput, PassMode, Tape};
use crate::conv::correlate_weight_grad;
use crate::error::{Error, Result};
use crate::model::{FrameSequence, KernelBank, Plane, SimConfig, VoxelGrid};

/// Parameter gradients, one entry per kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub threshold_pos: Vec<f64>,
    pub threshold_neg: Vec<f64>,
}

impl Gradients {
    pub fn zeros_for(bank: &KernelBank) -> Self {
        Self {
            weights: bank.kernels.iter().map(|k| vec![0.0; k.size * k.size]).collect(),
            threshold_pos: vec![0.0; bank.channels()],
            threshold_neg: vec![0.0; bank.channels()],
        }
    }

    /// Same layout as [`flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (c, w) in self.weights.iter().enumerate() {
            out.extend_from_slice(w);
            out.push(self.threshold_pos[c]);
            out.push(self.threshold_neg[c]);
        }
        out
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (a, b) in self.threshold_pos.iter_mut().zip(&other.threshold_pos) {
            *a += scale * b;
        }
        for (a, b) in self.threshold_neg.iter_mut().zip(&other.threshold_neg) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|g| g.is_finite())
    }
}

/// Kernel weights then `(threshold_pos, threshold_neg)`, kernel by kernel.
pub fn flatten_params(bank: &KernelBank) -> Vec<f64> {
    let mut out = Vec::new();
    for k in &bank.kernels {
        out.extend_from_slice(&k.weights);
        out.push(k.threshold_pos);
        out.push(k.threshold_neg);
    }
    out
}

/// Inverse of [`flatten_params`] using `template` for shapes and layout.
pub fn unflatten_params(template: &KernelBank, params: &[f64]) -> KernelBank {
    let mut bank = template.clone();
    let mut at = 0;
    for k in bank.kernels.iter_mut() {
        let n = k.size * k.size;
        k.weights.copy_from_slice(&params[at..at + n]);
        k.threshold_pos = params[at + n];
        k.threshold_neg = params[at + n + 1];
        at += n + 2;
    }
    bank
}

/// Forward pass that records a tape.
pub fn forward(
    seq: &FrameSequence,
    bank: &KernelBank,
    cfg: &SimConfig,
    bins: usize,
) -> Result<(BinOutput, Tape)> {
    let (out, tape) = run_pass(seq, bank, cfg, bins, PassMode::Record)?;
    Ok((out, tape.expect("record mode always yields a tape")))
}

/// The straight-through surrogate around the tape's base point, evaluated at
/// `bank`. It agrees with the real forward pass at the base point, and its
/// exact derivative there is what [`backward`] computes.
pub fn surrogate_forward(
    seq: &FrameSequence,
    bank: &KernelBank,
    cfg: &SimConfig,
    tape: &Tape,
) -> Result<BinOutput> {
    run_pass(seq, bank, cfg, tape.bin_times.len(), PassMode::Surrogate(tape)).map(|(o, _)| o)
}

/// Propagates `dgrid` (same shape as the forward grid) and `dsoftcount`
/// back to the kernel weights and thresholds.
pub fn backward(tape: &Tape, dgrid: &VoxelGrid, dsoftcount: f64) -> Result<Gradients> {
    if dgrid.channels != tape.channels
        || dgrid.width != tape.width
        || dgrid.height != tape.height
        || dgrid.bins() != tape.bin_times.len()
    {
        return Err(Error::TapeMismatch("upstream grid shape differs from the forward grid".into()));
    }
    if let Some(i) = dgrid.data.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(i));
    }
    if !dsoftcount.is_finite() {
        return Err(Error::NonFiniteGradient(dgrid.data.len()));
    }
    let (w, h) = (tape.width, tape.height);
    let mut grads = Gradients {
        weights: tape.kernel_sizes.iter().map(|s| vec![0.0; s * s]).collect(),
        threshold_pos: vec![0.0; tape.channels],
        threshold_neg: vec![0.0; tape.channels],
    };
    let plain = tape.pairs.first().map_or(1, |p| p.diffs.len()) == 1;
    for pair in &tape.pairs {
        for (c, pixels) in pair.pixels.iter().enumerate() {
            let mut upstream = Plane::zeros(w, h);
            let mut any = false;
            for (i, rec) in pixels.iter().enumerate() {
                if rec.pol == 0.0 {
                    continue;
                }
                let (x, y) = (i % w, i / w);
                let g_lo = dgrid.get(c, pair.lower_bin, x, y);
                let g_hi = dgrid.get(c, pair.lower_bin + 1, x, y);
                let g_ratio = g_lo * rec.dminus + g_hi * rec.dplus + dsoftcount;
                if g_ratio == 0.0 {
                    continue;
                }
                any = true;
                // ratio = pol * I / (delta * mult)
                upstream.data[i] = g_ratio * rec.pol / rec.effective_threshold;
                let d_delta = -g_ratio * rec.ratio / rec.threshold;
                if rec.pol > 0.0 {
                    grads.threshold_pos[c] += d_delta;
                } else {
                    grads.threshold_neg[c] += d_delta;
                }
            }
            if any {
                let memory = if plain { 0 } else { c };
                correlate_weight_grad(
                    &pair.diffs[memory],
                    &upstream,
                    tape.kernel_sizes[c],
                    tape.border,
                    &mut grads.weights[c],
                );
            }
        }
    }
    Ok(grads)
}

/// Deterministic scalar of `(grid, softcount)`:
/// `0.5 * sum(weight * (grid - target)^2) + sum(linear * grid) + softcount_weight * softcount`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossSpec {
    pub target: Option<Vec<f64>>,
    /// Per-cell weights of the quadratic term; all ones when absent.
    pub cell_weights: Option<Vec<f64>>,
    pub quadratic: bool,
    pub linear: Option<Vec<f64>>,
    pub softcount_weight: f64,
}

impl LossSpec {
    pub fn quadratic(target: Vec<f64>) -> Self {
        Self {
            target: Some(target),
            quadratic: true,
            ..Self::default()
        }
    }

    pub fn sum_of_grid(cells: usize) -> Self {
        Self {
            linear: Some(vec![1.0; cells]),
            ..Self::default()
        }
    }

    pub fn with_softcount(mut self, weight: f64) -> Self {
        self.softcount_weight = weight;
        self
    }

    /// Loss value, `d loss / d grid` and `d loss / d softcount`.
    pub fn eval(&self, grid: &VoxelGrid, softcount: f64) -> (f64, VoxelGrid, f64) {
        let mut dgrid = grid.zeros_like();
        let mut loss = self.softcount_weight * softcount;
        for (i, g) in grid.data.iter().enumerate() {
            if self.quadratic {
                let target = self.target.as_ref().map_or(0.0, |t| t[i]);
                let weight = self.cell_weights.as_ref().map_or(1.0, |w| w[i]);
                let r = g - target;
                loss += 0.5 * weight * r * r;
                dgrid.data[i] += weight * r;
            }
            if let Some(lin) = &self.linear {
                loss += lin[i] * g;
                dgrid.data[i] += lin[i];
            }
        }
        (loss, dgrid, self.softcount_weight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    /// Index into the flattened parameter vector where the max error occurs.
    pub worst_param: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Default relative finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Default pass threshold on the max relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// Compares [`backward`] against central differences of the straight-through
/// surrogate, parameter by parameter.
///
/// The relative error of a parameter is `|a - n| / max(|a|, |n|, floor)` with
/// `floor = 1e-6 * max_j max(|a_j|, |n_j|)`, so parameters whose gradient is
/// negligible next to the largest one are not judged on noise.
pub fn grad_check(
    seq: &FrameSequence,
    bank: &KernelBank,
    cfg: &SimConfig,
    bins: usize,
    loss: &LossSpec,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (out, tape) = forward(seq, bank, cfg, bins)?;
    let (_, dgrid, dsoft) = loss.eval(&out.grid, out.softcount);
    let analytic = backward(&tape, &dgrid, dsoft)?.flatten();

    let base = flatten_params(bank);
    let eval_at = |params: &[f64]| -> Result<f64> {
        let b = unflatten_params(bank, params);
        let o = surrogate_forward(seq, &b, cfg, &tape)?;
        Ok(loss.eval(&o.grid, o.softcount).0)
    };
    let mut numeric = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        let h = step * libm::fabs(base[i]).max(1.0);
        probe[i] = base[i] + h;
        let up = eval_at(&probe)?;
        probe[i] = base[i] - h;
        let down = eval_at(&probe)?;
        probe[i] = base[i];
        numeric.push((up - down) / (2.0 * h));
    }

    let scale = analytic
        .iter()
        .chain(&numeric)
        .fold(0.0f64, |m, g| m.max(libm::fabs(*g)));
    if scale == 0.0 {
        return Err(Error::VacuousLoss);
    }
    let floor = 1e-6 * scale;
    let (worst_param, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| libm::fabs(a - n) / libm::fabs(*a).max(libm::fabs(*n)).max(floor))
        .enumerate()
        .fold((0, 0.0f64), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        worst_param,
        tolerance,
        passed: max_rel_error <= tolerance && tolerance > 0.0,
    })
}
