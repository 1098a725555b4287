//! Kernel learning: momentum descent on kernel weights and thresholds
//! against a task loss plus a softcount sparsity penalty.

mod loss;
mod scene;

pub use loss::{
    charbonnier, charbonnier_stack, grid_mse, total_loss, Decoder, LossEval, TaskTarget,
    DECODER_TAPS,
};
pub use scene::{grating_derivative, synth_scene, SceneKind, SceneParams};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::binner::{bin_sequence, make_anchors};
use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::grad::{backward, forward, Gradients};
use crate::model::{FrameSequence, KernelBank, Layout, Plane, SimConfig};
use crate::presets::{preset_kernel, Preset};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Task {
    /// Match the grid a hidden bank produces on the same videos.
    KernelRecovery { target: KernelBank },
    /// Predict anchor-to-anchor frame differences through a learned
    /// [`Decoder`], scored with Charbonnier.
    Reconstruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitKind {
    /// Identity kernel plus Gaussian perturbation.
    Dvs,
    /// Gaussian weights only.
    SmallRandom,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BankInit {
    pub layout: Layout,
    pub channels: usize,
    pub size: usize,
    pub kind: InitKind,
    pub sigma: f64,
    pub threshold_pos: f64,
    pub threshold_neg: f64,
    /// Start from this bank (perturbed by `sigma`) instead of `kind`;
    /// layout, size, channels and thresholds then come from it.
    pub base: Option<KernelBank>,
}

impl Default for BankInit {
    fn default() -> Self {
        Self {
            layout: Layout::SingleChannel,
            channels: 1,
            size: 3,
            kind: InitKind::Dvs,
            sigma: 0.01,
            threshold_pos: 0.1,
            threshold_neg: 0.1,
            base: None,
        }
    }
}

impl BankInit {
    pub fn from_bank(bank: KernelBank, sigma: f64) -> Self {
        Self {
            layout: bank.layout,
            channels: bank.channels(),
            size: bank.kernels.first().map_or(3, |k| k.size),
            kind: InitKind::Dvs,
            sigma,
            threshold_pos: bank.kernels.first().map_or(0.1, |k| k.threshold_pos),
            threshold_neg: bank.kernels.first().map_or(0.1, |k| k.threshold_neg),
            base: Some(bank),
        }
    }

    pub fn build(&self, seed: u64) -> Result<KernelBank> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidLearnConfig(format!("init sigma must be >= 0, got {}", self.sigma)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, self.sigma)
            .map_err(|e| Error::InvalidLearnConfig(format!("init sigma: {}", e)))?;
        let mut bank = match &self.base {
            Some(b) => b.clone(),
            None => {
                let mut k = preset_kernel(&Preset::Dvs, self.size)?
                    .with_thresholds(self.threshold_pos, self.threshold_neg);
                if self.kind == InitKind::SmallRandom {
                    k.weights.iter_mut().for_each(|w| *w = 0.0);
                }
                KernelBank {
                    layout: self.layout,
                    kernels: vec![k; self.channels],
                }
            }
        };
        for k in bank.kernels.iter_mut() {
            for w in k.weights.iter_mut() {
                *w += normal.sample(&mut rng);
            }
        }
        bank.validate()?;
        Ok(bank)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LearnConfig {
    pub task: Task,
    pub lambda_sparsity: f64,
    pub steps: usize,
    pub weight_step: f64,
    pub threshold_step: f64,
    pub decoder_step: f64,
    pub momentum: f64,
    pub learn_thresholds: bool,
    pub seed: u64,
    pub init: BankInit,
    pub charbonnier_eps: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            task: Task::Reconstruction,
            lambda_sparsity: 0.0,
            steps: 200,
            weight_step: 1e-3,
            threshold_step: 1e-2,
            decoder_step: 1e-2,
            momentum: 0.9,
            learn_thresholds: true,
            seed: 0,
            init: BankInit::default(),
            charbonnier_eps: 1e-3,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidLearnConfig(msg));
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        for (name, v) in [
            ("weight_step", self.weight_step),
            ("threshold_step", self.threshold_step),
            ("decoder_step", self.decoder_step),
            ("charbonnier_eps", self.charbonnier_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{} must be > 0, got {}", name, v));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.lambda_sparsity >= 0.0 && self.lambda_sparsity.is_finite()) {
            return bad(format!("lambda_sparsity must be >= 0, got {}", self.lambda_sparsity));
        }
        if let Task::KernelRecovery { target } = &self.task {
            target.validate()?;
            if target.layout != self.init.layout || target.channels() != self.init.channels {
                return bad("target bank layout and channel count must match the init".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    /// Per step, evaluated before that step's update.
    pub task_loss: Vec<f64>,
    /// Mean softcount per bin.
    pub softcount: Vec<f64>,
    /// Floor-count events per bin.
    pub bandwidth: Vec<f64>,
    /// Same quantities at the final parameters.
    pub final_task_loss: f64,
    pub final_softcount: f64,
    pub final_bandwidth: f64,
    pub bank: KernelBank,
    pub decoder: Option<Decoder>,
    pub lambda_sparsity: f64,
    pub bins: usize,
    pub wall_time: f64,
}

/// `ln(1 + e^x)`, the positive threshold mapping.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        libm::log(libm::expm1(y))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Anchor-to-anchor differences of the noise-free, domain-transformed frames.
pub fn frame_differences(seq: &FrameSequence, sim: &SimConfig, bins: usize) -> Result<Vec<Plane>> {
    let anchors = make_anchors(seq, bins)?;
    let clean = SimConfig {
        intensity_noise_sigma: 0.0,
        ..sim.clone()
    };
    let frames = seq.prepared_frames(&clean);
    let step = anchors.pairs_per_interval;
    (0..bins - 1)
        .map(|j| frames[(j + 1) * step].sub(&frames[j * step]))
        .collect()
}

enum Prepared {
    Grid(crate::model::VoxelGrid),
    Frames(Vec<Plane>),
}

struct Sample {
    task: f64,
    softcount: f64,
    events: f64,
    grads: Gradients,
    ddecoder: Vec<f64>,
}

struct Evaluator<'a> {
    sim: &'a SimConfig,
    bins: usize,
    lambda: f64,
    eps: f64,
}

impl Evaluator<'_> {
    fn run(&self, seq: &FrameSequence, target: &Prepared, bank: &KernelBank, decoder: Option<&Decoder>) -> Result<Sample> {
        let (out, tape) = forward(seq, bank, self.sim, self.bins)?;
        let per_bin = self.bins as f64;
        let target = match (target, decoder) {
            (Prepared::Grid(g), _) => TaskTarget::Grid(g),
            (Prepared::Frames(f), Some(d)) => TaskTarget::Frames {
                differences: f,
                decoder: d,
                eps: self.eps,
            },
            (Prepared::Frames(_), None) => unreachable!("reconstruction always carries a decoder"),
        };
        let e = total_loss(&out.grid, out.softcount / per_bin, &target, self.lambda)?;
        let grads = backward(&tape, &e.dgrid, e.dsoftcount / per_bin)?;
        Ok(Sample {
            task: e.task,
            softcount: out.softcount / per_bin,
            events: out.event_count / per_bin,
            grads,
            ddecoder: e.ddecoder,
        })
    }
}

/// Momentum state for one parameter block.
struct Block {
    velocity: Vec<f64>,
}

impl Block {
    fn new(n: usize) -> Self {
        Self { velocity: vec![0.0; n] }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, momentum: f64) {
        for ((p, v), g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grads) {
            *v = momentum * *v + g;
            *p -= lr * *v;
        }
    }
}

/// [`train_with`] on one thread and without a clock.
pub fn train(seqs: &[FrameSequence], cfg: &LearnConfig, sim: &SimConfig, bins: usize) -> Result<TrainReport> {
    train_with(seqs, cfg, sim, bins, &Sequential, &|| 0.0)
}

/// Trains a bank. Per-sequence forward/backward passes go through `exec`;
/// their results are reduced in sequence order so runs are reproducible
/// regardless of the executor. `clock` returns seconds and only feeds
/// [`TrainReport::wall_time`].
pub fn train_with<E: Executor>(
    seqs: &[FrameSequence],
    cfg: &LearnConfig,
    sim: &SimConfig,
    bins: usize,
    exec: &E,
    clock: &dyn Fn() -> f64,
) -> Result<TrainReport> {
    let started = clock();
    cfg.validate()?;
    sim.validate()?;
    if seqs.is_empty() {
        return Err(Error::InvalidLearnConfig("need at least one training sequence".into()));
    }
    let mut bank = cfg.init.build(cfg.seed)?;
    let targets: Vec<Prepared> = seqs
        .iter()
        .map(|s| match &cfg.task {
            Task::KernelRecovery { target } => bin_sequence(s, target, sim, bins).map(|(g, _)| Prepared::Grid(g)),
            Task::Reconstruction => frame_differences(s, sim, bins).map(Prepared::Frames),
        })
        .collect::<Result<_>>()?;
    let mut decoder = match cfg.task {
        Task::Reconstruction => {
            let c = bank.channels() as f64;
            let gain = bank.kernels.iter().map(|k| k.threshold_pos.max(k.threshold_neg)).sum::<f64>() / (c * c);
            Some(Decoder::new(bank.channels(), gain))
        }
        Task::KernelRecovery { .. } => None,
    };

    let eval = Evaluator {
        sim,
        bins,
        lambda: cfg.lambda_sparsity,
        eps: cfg.charbonnier_eps,
    };
    let weight_count: usize = bank.kernels.iter().map(|k| k.weights.len()).sum();
    let mut weight_momentum = Block::new(weight_count);
    let mut threshold_momentum = Block::new(2 * bank.channels());
    let mut decoder_momentum = Block::new(decoder.as_ref().map_or(0, Decoder::param_count));
    let mut rho: Vec<f64> = bank
        .kernels
        .iter()
        .flat_map(|k| [softplus_inverse(k.threshold_pos), softplus_inverse(k.threshold_neg)])
        .collect();
    let norm = 1.0 / seqs.len() as f64;

    let evaluate = |bank: &KernelBank, decoder: Option<&Decoder>| -> Result<(f64, f64, f64, Gradients, Vec<f64>)> {
        let indices: Vec<usize> = (0..seqs.len()).collect();
        let samples = exec.map(&indices, |&i| eval.run(&seqs[i], &targets[i], bank, decoder));
        let mut task = 0.0;
        let mut soft = 0.0;
        let mut events = 0.0;
        let mut grads = Gradients::zeros_for(bank);
        let mut ddec = vec![0.0; decoder.map_or(0, Decoder::param_count)];
        for s in samples {
            let s = s?;
            task += norm * s.task;
            soft += norm * s.softcount;
            events += norm * s.events;
            grads.add_scaled(&s.grads, norm);
            for (a, b) in ddec.iter_mut().zip(&s.ddecoder) {
                *a += norm * b;
            }
        }
        Ok((task, soft, events, grads, ddec))
    };

    let mut report = TrainReport {
        task_loss: Vec::with_capacity(cfg.steps),
        softcount: Vec::with_capacity(cfg.steps),
        bandwidth: Vec::with_capacity(cfg.steps),
        final_task_loss: 0.0,
        final_softcount: 0.0,
        final_bandwidth: 0.0,
        bank: bank.clone(),
        decoder: None,
        lambda_sparsity: cfg.lambda_sparsity,
        bins,
        wall_time: 0.0,
    };

    for step in 0..cfg.steps {
        let (task, soft, events, grads, ddec) = evaluate(&bank, decoder.as_ref())?;
        let total = task + cfg.lambda_sparsity * soft;
        if !total.is_finite() {
            return Err(Error::Diverged { step, loss: total });
        }
        if !grads.is_finite() || ddec.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss: total });
        }
        report.task_loss.push(task);
        report.softcount.push(soft);
        report.bandwidth.push(events);

        let mut weights: Vec<f64> = bank.kernels.iter().flat_map(|k| k.weights.iter().copied()).collect();
        let flat_dw: Vec<f64> = grads.weights.iter().flatten().copied().collect();
        weight_momentum.step(&mut weights, &flat_dw, cfg.weight_step, cfg.momentum);
        let mut at = 0;
        for k in bank.kernels.iter_mut() {
            let n = k.weights.len();
            k.weights.copy_from_slice(&weights[at..at + n]);
            at += n;
        }
        if cfg.learn_thresholds {
            let drho: Vec<f64> = (0..bank.channels())
                .flat_map(|c| {
                    [
                        grads.threshold_pos[c] * sigmoid(rho[2 * c]),
                        grads.threshold_neg[c] * sigmoid(rho[2 * c + 1]),
                    ]
                })
                .collect();
            threshold_momentum.step(&mut rho, &drho, cfg.threshold_step, cfg.momentum);
            for (c, k) in bank.kernels.iter_mut().enumerate() {
                k.threshold_pos = softplus(rho[2 * c]);
                k.threshold_neg = softplus(rho[2 * c + 1]);
            }
        }
        if let Some(d) = decoder.as_mut() {
            let mut p = d.params();
            decoder_momentum.step(&mut p, &ddec, cfg.decoder_step, cfg.momentum);
            d.set_params(&p);
        }
        if bank.kernels.iter().any(|k| !(k.threshold_pos > 0.0 && k.threshold_neg > 0.0)) {
            return Err(Error::Diverged { step, loss: total });
        }
    }

    let (task, soft, events, _, _) = evaluate(&bank, decoder.as_ref())?;
    if !(task + cfg.lambda_sparsity * soft).is_finite() {
        return Err(Error::Diverged {
            step: cfg.steps,
            loss: task + cfg.lambda_sparsity * soft,
        });
    }
    report.final_task_loss = task;
    report.final_softcount = soft;
    report.final_bandwidth = events;
    report.bank = bank;
    report.decoder = decoder;
    report.wall_time = clock() - started;
    Ok(report)
}
