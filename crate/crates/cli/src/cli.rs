//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rgc_core::binner::{bin_events, bin_sequence, uniform_anchors};
use rgc_core::grad::{grad_check, LossSpec, DEFAULT_STEP, DEFAULT_TOLERANCE};
use rgc_core::learn::{synth_scene, train_with, SceneKind, SceneParams};
use rgc_core::oracle::generate_events;
use rgc_core::presets::{format_weights, preset_kernel, Preset, DEFAULT_THRESHOLD};
use rgc_core::{BorderMode, FrameSequence, IntensityDomain, KernelBank, MemoryUpdate, SimConfig};

use crate::bandwidth::bandwidth_report;
use crate::events::{EventFile, MAGIC as EVENT_MAGIC};
use crate::format::sniff;
use crate::parallel::PoolExecutor;
use crate::schema::{learn_from_json, read_bank, report_to_json, write_bank, DataSource};
use crate::tensor::{grid_tensor, read_video, write_video};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rgcsim", version, about = "Video-to-event simulation with learnable receptive-field kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Explicit event simulation of a video into an event file.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        bank: BankArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Voxel grid of a video (closed form) or of an event file.
    Bin {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        bins: usize,
        #[command(flatten)]
        bank: BankArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Compares analytic gradients with central differences.
    Gradcheck {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        bins: usize,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Weight of the softcount term added to the quadratic grid loss.
        #[arg(long, default_value_t = 0.01)]
        softcount_weight: f64,
        #[command(flatten)]
        bank: BankArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Trains a kernel bank from a learner config.
    Learn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bank_out: PathBuf,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Bandwidth statistics of an event file.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
        /// Also write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Lists the kernel presets with their weights.
    Presets {
        #[arg(long)]
        size: Option<usize>,
    },
    /// Writes a synthetic video.
    Synth {
        #[arg(long, value_parser = parse_scene)]
        kind: SceneKind,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        angle: Option<f64>,
        #[arg(long)]
        period: Option<f64>,
        #[arg(long)]
        mean: Option<f64>,
        #[arg(long)]
        contrast: Option<f64>,
        #[arg(long)]
        components: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        start: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Border {
    Replicate,
    Zero,
}

fn parse_scene(s: &str) -> Result<SceneKind, String> {
    SceneKind::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct BankArgs {
    /// dvs, csdvs_delbruck, center_on, center_off or dog(sigma_c,sigma_s).
    #[arg(long, conflicts_with = "bank_file")]
    preset: Option<String>,
    #[arg(long, default_value_t = 3)]
    kernel_size: usize,
    /// Kernel bank JSON document.
    #[arg(long)]
    bank_file: Option<PathBuf>,
    /// Overrides the positive threshold of every kernel.
    #[arg(long)]
    threshold_pos: Option<f64>,
    #[arg(long)]
    threshold_neg: Option<f64>,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Refractory period in seconds.
    #[arg(long, default_value_t = 0.0)]
    refractory: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulate on log intensity (also implied by a log-tagged video).
    #[arg(long)]
    log_domain: bool,
    #[arg(long, default_value_t = 1e-3)]
    log_eps: f64,
    /// Std of additive intensity noise.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Relative std of per-pixel threshold mismatch.
    #[arg(long, default_value_t = 0.0)]
    threshold_sigma: f64,
    /// Shot-noise events per pixel per second.
    #[arg(long, default_value_t = 0.0)]
    shot_rate: f64,
    #[arg(long, value_enum, default_value_t = Border::Replicate)]
    border: Border,
    /// Residual memory update instead of reset-on-fire.
    #[arg(long)]
    residual: bool,
}

/// A failure and the exit code class it maps to.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl BankArgs {
    fn build(&self) -> Result<KernelBank, Failure> {
        let mut bank = match (&self.preset, &self.bank_file) {
            (_, Some(path)) => read_bank(path).with_context(|| format!("reading bank {}", path.display()))?,
            (name, None) => {
                let preset = Preset::parse(name.as_deref().unwrap_or("dvs")).map_err(|e| usage(e.to_string()))?;
                KernelBank::single(preset_kernel(&preset, self.kernel_size).map_err(|e| usage(e.to_string()))?)
            }
        };
        for k in bank.kernels.iter_mut() {
            if let Some(t) = self.threshold_pos {
                k.threshold_pos = t;
            }
            if let Some(t) = self.threshold_neg {
                k.threshold_neg = t;
            }
        }
        bank.validate().map_err(|e| usage(e.to_string()))?;
        Ok(bank)
    }
}

impl SimArgs {
    fn build(&self, video_domain: IntensityDomain) -> Result<SimConfig, Failure> {
        let cfg = SimConfig {
            intensity_domain: if self.log_domain {
                IntensityDomain::Log
            } else {
                video_domain
            },
            log_eps: self.log_eps,
            refractory_period: self.refractory,
            threshold_sigma: self.threshold_sigma,
            intensity_noise_sigma: self.noise_sigma,
            shot_noise_rate: self.shot_rate,
            rng_seed: self.seed,
            border_mode: match self.border {
                Border::Replicate => BorderMode::Replicate,
                Border::Zero => BorderMode::Zero,
            },
            memory_update: if self.residual {
                MemoryUpdate::Residual
            } else {
                MemoryUpdate::ResetOnFire
            },
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn load_video(path: &Path) -> anyhow::Result<(FrameSequence, IntensityDomain)> {
    read_video(path).with_context(|| format!("reading video {}", path.display()))
}

fn is_event_file(path: &Path) -> anyhow::Result<bool> {
    let head = sniff(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(head.starts_with(EVENT_MAGIC))
}

fn simulate(input: &Path, output: &Path, bank: &BankArgs, sim: &SimArgs, out: &mut dyn Write) -> Outcome {
    let bank = bank.build()?;
    let (seq, domain) = load_video(input)?;
    let cfg = sim.build(domain)?;
    let stream = generate_events(&seq, &bank, &cfg).context("simulating")?;
    EventFile::new(stream.clone(), Some(bank), Some(cfg))
        .write(output)
        .with_context(|| format!("writing {}", output.display()))?;
    writeln!(out, "{} events -> {}", stream.len(), output.display()).map_err(anyhow::Error::from)?;
    Ok(())
}

fn bin(input: &Path, output: &Path, bins: usize, bank: &BankArgs, sim: &SimArgs, out: &mut dyn Write) -> Outcome {
    if bins < 2 {
        return Err(usage(format!("--bins must be at least 2, got {}", bins)));
    }
    let (grid, domain) = if is_event_file(input)? {
        let file = EventFile::read(input).with_context(|| format!("reading events {}", input.display()))?;
        let h = &file.stream.header;
        let anchors = uniform_anchors(h.t_start, h.t_end, bins).context("bin anchors")?;
        let domain = file.header.sim.as_ref().map_or(IntensityDomain::Linear, |s| s.intensity_domain);
        (bin_events(&file.stream, &anchors).context("binning events")?, domain)
    } else {
        let bank = bank.build()?;
        let (seq, domain) = load_video(input)?;
        let cfg = sim.build(domain)?;
        let (grid, _) = bin_sequence(&seq, &bank, &cfg, bins).context("binning video")?;
        (grid, cfg.intensity_domain)
    };
    grid_tensor(&grid, domain)
        .write(output)
        .with_context(|| format!("writing {}", output.display()))?;
    writeln!(
        out,
        "grid {}x{}x{}x{} -> {}",
        grid.channels,
        grid.bins(),
        grid.height,
        grid.width,
        output.display()
    )
    .map_err(anyhow::Error::from)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gradcheck(
    input: &Path,
    bins: usize,
    step: f64,
    tolerance: f64,
    softcount_weight: f64,
    bank: &BankArgs,
    sim: &SimArgs,
    out: &mut dyn Write,
) -> Outcome {
    if !(step > 0.0) {
        return Err(usage("--step must be > 0"));
    }
    let bank = bank.build()?;
    let (seq, domain) = load_video(input)?;
    let cfg = sim.build(domain)?;
    let (grid, _) = bin_sequence(&seq, &bank, &cfg, bins).context("forward pass")?;
    let loss = LossSpec::quadratic(vec![0.0; grid.data.len()]).with_softcount(softcount_weight);
    let report = grad_check(&seq, &bank, &cfg, bins, &loss, step, tolerance).context("gradient check")?;
    writeln!(
        out,
        "max relative error {:.3e} (parameter {}, tolerance {:.1e}): {}",
        report.max_rel_error,
        report.worst_param,
        report.tolerance,
        if report.passed { "pass" } else { "FAIL" }
    )
    .map_err(anyhow::Error::from)?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Data(anyhow!("gradient check failed")))
    }
}

fn learn(config: &Path, bank_out: &Path, report_out: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let doc = learn_from_json(&text).with_context(|| format!("parsing {}", config.display()))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let seqs = doc
        .data
        .iter()
        .map(|d| match d {
            DataSource::Scene { kind, params, seed } => synth_scene(*kind, params, *seed).map_err(anyhow::Error::from),
            DataSource::Video { path } => load_video(&base.join(path)).map(|(s, _)| s),
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let exec = PoolExecutor::from_env()?;
    let started = Instant::now();
    let report = train_with(&seqs, &doc.learn, &doc.sim, doc.bins, &exec, &|| started.elapsed().as_secs_f64())
        .context("training")?;
    write_bank(bank_out, &report.bank).with_context(|| format!("writing {}", bank_out.display()))?;
    if let Some(path) = report_out {
        std::fs::write(path, report_to_json(&report).map_err(anyhow::Error::from)?).with_context(|| format!("writing {}", path.display()))?;
    }
    writeln!(
        out,
        "{} steps: task loss {:.6} -> {:.6}, {:.2} events/bin, {:.2}s",
        doc.learn.steps,
        report.task_loss[0],
        report.final_task_loss,
        report.final_bandwidth,
        report.wall_time
    )
    .map_err(anyhow::Error::from)?;
    Ok(())
}

fn report(input: &Path, bins: usize, format: ReportFormat, json: Option<&Path>, out: &mut dyn Write) -> Outcome {
    if bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let file = EventFile::read(input).with_context(|| format!("reading events {}", input.display()))?;
    let r = bandwidth_report(&file.stream, bins).context("bandwidth report")?;
    let text = serde_json::to_string_pretty(&r).map_err(anyhow::Error::from)?;
    if let Some(path) = json {
        std::fs::write(path, format!("{}\n", text)).with_context(|| format!("writing {}", path.display()))?;
    }
    match format {
        ReportFormat::Text => writeln!(out, "{}", r),
        ReportFormat::Json => writeln!(out, "{}", text),
    }
    .map_err(anyhow::Error::from)?;
    Ok(())
}

fn presets(size: Option<usize>, out: &mut dyn Write) -> Outcome {
    let listing = [
        (Preset::Dvs, 1),
        (Preset::CsdvsDelbruck, 3),
        (Preset::CenterOn, 3),
        (Preset::CenterOff, 3),
        (Preset::Dog { sigma_center: 1.0, sigma_surround: 2.0 }, 5),
    ];
    let mut text = String::new();
    for (preset, default_size) in listing {
        let k = size.unwrap_or(default_size);
        match preset_kernel(&preset, k) {
            Ok(kernel) => {
                text.push_str(&format!(
                    "{} ({}x{}, thresholds {}/{})\n{}\n",
                    preset, k, k, kernel.threshold_pos, kernel.threshold_neg,
                    format_weights(&kernel)
                ));
            }
            Err(e) => text.push_str(&format!("{}: {}\n\n", preset, e)),
        }
    }
    text.push_str(&format!("default threshold {}\n", DEFAULT_THRESHOLD));
    out.write_all(text.as_bytes()).map_err(anyhow::Error::from)?;
    Ok(())
}

fn run_command(command: Command, out: &mut dyn Write) -> Outcome {
    match command {
        Command::Simulate { input, output, bank, sim } => simulate(&input, &output, &bank, &sim, out),
        Command::Bin { input, output, bins, bank, sim } => bin(&input, &output, bins, &bank, &sim, out),
        Command::Gradcheck {
            input,
            bins,
            step,
            tolerance,
            softcount_weight,
            bank,
            sim,
        } => gradcheck(&input, bins, step, tolerance, softcount_weight, &bank, &sim, out),
        Command::Learn {
            config,
            bank_out,
            report_out,
        } => learn(&config, &bank_out, report_out.as_deref(), out),
        Command::Report {
            input,
            bins,
            format,
            json,
        } => report(&input, bins, format, json.as_deref(), out),
        Command::Presets { size } => presets(size, out),
        Command::Synth {
            kind,
            output,
            seed,
            width,
            height,
            frames,
            dt,
            speed,
            angle,
            period,
            mean,
            contrast,
            components,
            start,
        } => {
            let d = SceneParams::default();
            let params = SceneParams {
                width: width.unwrap_or(d.width),
                height: height.unwrap_or(d.height),
                frames: frames.unwrap_or(d.frames),
                dt: dt.unwrap_or(d.dt),
                speed: speed.unwrap_or(d.speed),
                angle: angle.unwrap_or(d.angle),
                period: period.unwrap_or(d.period),
                mean: mean.unwrap_or(d.mean),
                contrast: contrast.unwrap_or(d.contrast),
                components: components.unwrap_or(d.components),
                start: start.unwrap_or(d.start),
            };
            params.validate().map_err(|e| usage(e.to_string()))?;
            let seq = synth_scene(kind, &params, seed).context("generating scene")?;
            write_video(&output, &seq, IntensityDomain::Linear)
                .with_context(|| format!("writing {}", output.display()))?;
            writeln!(
                out,
                "{} frames {}x{} -> {}",
                seq.len(),
                seq.width,
                seq.height,
                output.display()
            )
            .map_err(anyhow::Error::from)?;
            Ok(())
        }
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{}", rendered)
            } else {
                write!(err, "{}", rendered)
            };
            return code;
        }
    };
    match run_command(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {}", msg);
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "error: {:#}", e);
            EXIT_DATA
        }
    }
}
