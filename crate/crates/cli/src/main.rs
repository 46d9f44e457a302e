//! `vidattr`: audit workflows for sliding-window video attribution.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vidattr_core::attribution::{attribution_signal, PairStrategy, WindowPair};
use vidattr_core::calibration::{zero_shot, BandwidthRule, CalibrationError, Kernel, ThresholdModel};
use vidattr_core::harness::manifest::Manifest;
use vidattr_core::harness::sweeps::{
    aedr_table, calibrated_table, length_table, robustness_table, samples_table, sweep_aedr, sweep_length,
    sweep_metric, sweep_robustness, sweep_samples, sweep_window, window_tables, SweepTable, ROBUSTNESS_TRANSFORMS,
};
use vidattr_core::harness::{
    calibrate, evaluate, resolve_pair, synthesize_dataset, CalibParams, EvalOptions, HarnessError, SignalOptions,
    SynthConfig, ThresholdSource,
};
use vidattr_core::io::{load_video, IoError, VideoFormat};
use vidattr_core::metrics::MetricKind;
use vidattr_core::oracle::wire::{serve_connection, ServeOptions};
use vidattr_core::oracle::OracleSpec;
use vidattr_core::transform::Transform;

#[derive(Debug, Parser)]
#[command(name = "vidattr", version, about = "Attribute videos to a generative model by sliding-window reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Fit a threshold on a manifest's calibration videos.
    Calibrate(CalibrateArgs),
    /// Decide whether one video belongs to the target model.
    Attribute(AttributeArgs),
    /// Score a manifest's evaluation videos, or run an ablation sweep.
    Evaluate(EvaluateArgs),
    /// Serve an oracle over the wire protocol.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Master seed; every video derives its own seed from it.
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Target model, `toy:<seed>,<K>,<H>x<W>x<C>,<d>[,tile=<h>x<w>][,denoise=<lambda>]`.
    #[arg(long, default_value = "toy:7,4,16x16x1,64")]
    oracle: OracleSpec,
    #[arg(long, default_value_t = 20)]
    calib: usize,
    #[arg(long, default_value_t = 50)]
    eval_belonging: usize,
    /// Alternates uniform noise and videos from other toy models.
    #[arg(long, default_value_t = 50)]
    nonbelonging: usize,
    /// Chunks per video.
    #[arg(long, default_value_t = 8)]
    n_chunks: usize,
    /// Noise added to belonging videos.
    #[arg(long, default_value_t = 0.01)]
    sigma_b: f64,
}

#[derive(Debug, Args)]
struct SignalArgs {
    /// `toy:<seed>,<K>,<H>x<W>x<C>,<d>` | `exec:<path> [args]` | `tcp:<host>:<port>` | `identity:<K>`.
    /// Defaults to the manifest's `oracle` entry.
    #[arg(long)]
    oracle: Option<OracleSpec>,
    /// Per-frame loss: mse, mae, psnr or ssim.
    #[arg(long, default_value = "mse")]
    metric: MetricKind,
    /// `fixed` for (0, K-1), `searched`, or `<jnor>,<jcor>`.
    #[arg(long, default_value = "fixed")]
    pair: PairStrategy,
    /// Worker threads, each with its own oracle connection.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Seconds to wait for an external oracle.
    #[arg(long, default_value_t = 60.0)]
    timeout_s: f64,
    /// Applied in order before attribution: crop50, fliph, flipv, noise:<sigma>, truncate:<fraction>.
    #[arg(long = "transform")]
    transforms: Vec<Transform>,
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// Significance level; tau is the (1 - alpha) quantile of the calibration KDE.
    #[arg(long, default_value_t = 0.05, conflicts_with = "zero_shot")]
    alpha: f64,
    /// gaussian, uniform or epanechnikov.
    #[arg(long, default_value = "gaussian", conflicts_with = "zero_shot")]
    kernel: Kernel,
    /// scott or silverman.
    #[arg(long, default_value = "scott", conflicts_with = "zero_shot")]
    bandwidth: BandwidthRule,
    /// Use tau = 1 and no calibration videos.
    #[arg(long)]
    zero_shot: bool,
    /// Calibrate on the first S calibration videos only.
    #[arg(long, conflicts_with = "zero_shot")]
    samples: Option<usize>,
}

impl ThresholdArgs {
    fn params(&self) -> CalibParams {
        CalibParams {
            alpha: self.alpha,
            kernel: self.kernel,
            rule: self.bandwidth,
        }
    }
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Manifest whose `calib:` entries are used.
    #[arg(long, required_unless_present = "zero_shot")]
    manifest: Option<PathBuf>,
    /// Threshold file to write.
    #[arg(long)]
    out: PathBuf,
    /// Seed for transform noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    signal: SignalArgs,
    #[command(flatten)]
    threshold: ThresholdArgs,
}

#[derive(Debug, Args)]
struct AttributeArgs {
    /// Raw tensor file or directory of PNG frames.
    video: PathBuf,
    /// Threshold file written by `calibrate`.
    #[arg(long, required_unless_present = "zero_shot", conflicts_with = "zero_shot")]
    threshold: Option<PathBuf>,
    /// Use tau = 1.
    #[arg(long)]
    zero_shot: bool,
    /// Seed for transform noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also print overlap, capped and dropped frame counts.
    #[arg(long, short)]
    verbose: bool,
    #[command(flatten)]
    signal: SignalArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepKind {
    Samples,
    Length,
    Metric,
    Window,
    Robustness,
    Aedr,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Master seed for transform noise; required so every run is reproducible.
    #[arg(long)]
    seed: u64,
    /// Directory for the report, CSV and histograms (or sweep tables).
    #[arg(long)]
    out: PathBuf,
    /// Fixed threshold file instead of calibrating.
    #[arg(long, conflicts_with_all = ["zero_shot", "samples"])]
    threshold: Option<PathBuf>,
    /// Run an ablation sweep instead of a single evaluation.
    #[arg(long, value_enum)]
    sweep: Option<SweepKind>,
    /// Calibration sizes for the samples sweep; 0 means zero-shot.
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,20")]
    s_values: Vec<usize>,
    /// Length fractions for the length sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,0.75,0.5,0.25")]
    fractions: Vec<f64>,
    #[command(flatten)]
    signal: SignalArgs,
    #[command(flatten)]
    calib: ThresholdArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "toy:7,4,16x16x1,64")]
    oracle: OracleSpec,
    /// Listen on 127.0.0.1:<port>; 0 picks a free port.
    #[arg(long, conflicts_with = "stdio")]
    port: Option<u16>,
    /// Serve one connection on stdin/stdout.
    #[arg(long)]
    stdio: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vidattr: {}", one_line(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain on one line, skipping causes already spelled out by the
/// message above them.
fn one_line(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !parts.last().is_some_and(|prev| prev.contains(&msg)) {
            parts.push(msg);
        }
    }
    parts.join(": ")
}

/// 3 for a degenerate calibration sample, 4 for an unreadable video, 1
/// otherwise. Usage errors exit with 2 from the argument parser.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(CalibrationError::DegenerateSample(_)) = cause.downcast_ref() {
            return 3;
        }
        if let Some(HarnessError::Calibration(CalibrationError::DegenerateSample(_))) = cause.downcast_ref() {
            return 3;
        }
        if cause.downcast_ref::<IoError>().is_some() {
            return 4;
        }
        if let Some(HarnessError::Video(_)) = cause.downcast_ref() {
            return 4;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Attribute(a) => attribute(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let OracleSpec::Toy(toy) = a.oracle else {
        bail!("synth needs a toy oracle, got `{}`", a.oracle);
    };
    let cfg = SynthConfig {
        toy,
        n_chunks: a.n_chunks,
        sigma_b: a.sigma_b,
        calib: a.calib,
        eval_belonging: a.eval_belonging,
        nonbelonging: a.nonbelonging,
        master_seed: a.seed,
    };
    let m = synthesize_dataset(&cfg, &a.out)?;
    println!("videos={}", m.entries.len());
    println!("manifest={}", a.out.join("manifest.tsv").display());
    Ok(())
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn signal_options(s: &SignalArgs, manifest: Option<&Manifest>, seed: u64) -> Result<SignalOptions> {
    let oracle = match (&s.oracle, manifest) {
        (Some(o), _) => o.clone(),
        (None, Some(m)) => m
            .oracle()?
            .ok_or_else(|| anyhow!("manifest names no oracle; pass --oracle"))?,
        (None, None) => bail!("--oracle is required"),
    };
    if !(s.timeout_s > 0.0 && s.timeout_s.is_finite()) {
        bail!("--timeout-s must be positive");
    }
    let mut o = SignalOptions::new(oracle, seed);
    o.metric = s.metric;
    o.transforms = s.transforms.clone();
    o.jobs = s.jobs.max(1);
    o.timeout = Duration::from_secs_f64(s.timeout_s);
    Ok(o)
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let model = if a.threshold.zero_shot {
        zero_shot()
    } else {
        let path = a.manifest.as_deref().expect("required unless zero-shot");
        let m = load_manifest(path)?;
        let mut opts = signal_options(&a.signal, Some(&m), a.seed)?;
        // Calibration videos get the same post-processing as the videos they
        // will be compared against.
        opts.calibration_transforms = std::mem::take(&mut opts.transforms);
        let pair = resolve_pair(&m, a.signal.pair, &opts)?;
        println!("pair={}", pair.pair);
        calibrate(&m, pair.pair, &opts, a.threshold.params(), a.threshold.samples)?
    };
    fs::write(&a.out, model.to_text()).with_context(|| format!("writing {}", a.out.display()))?;
    println!("tau={}", model.tau);
    println!("s={}", model.s());
    println!("mode={}", model.mode.name());
    Ok(())
}

fn read_threshold(path: &Path) -> Result<ThresholdModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ThresholdModel::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn attribute(a: AttributeArgs) -> Result<()> {
    let model = match &a.threshold {
        Some(p) => read_threshold(p)?,
        None => zero_shot(),
    };
    let opts = signal_options(&a.signal, None, a.seed)?;
    let loaded = load_video(&a.video, VideoFormat::detect(&a.video))?;
    let id = a.video.to_string_lossy();
    let video = vidattr_core::harness::run::apply_transforms(loaded.video, &id, &opts.transforms, opts.seed)
        .map_err(|e| anyhow!(e))?;
    let mut oracle = opts.oracle.open(opts.timeout)?;
    let pair = match a.signal.pair {
        PairStrategy::Fixed => WindowPair::fixed(oracle.chunk_frames())?,
        PairStrategy::Explicit { normal, corrupted } => WindowPair::new(normal, corrupted, oracle.chunk_frames())?,
        PairStrategy::Searched => bail!("--pair searched needs calibration videos; run `calibrate` and pass the printed pair"),
    };
    let signal = attribution_signal(&video, &mut *oracle, pair, opts.metric)?;
    println!("t={}", signal.t);
    println!("tau={}", model.tau);
    if a.verbose {
        println!("# oracle={}", signal.oracle_id);
        println!("# metric={}", signal.metric);
        println!("# pair={}", signal.pair);
        println!("# overlap={}..={}", signal.overlap.start, signal.overlap.end);
        println!("# capped_frames={}", signal.capped_frames);
        println!("# dropped_frames={}", signal.dropped_frames);
        println!("# clamped_elements={}", loaded.clamped);
    }
    println!("{}", signal.decide(model.tau));
    Ok(())
}

fn threshold_source(a: &EvaluateArgs) -> Result<ThresholdSource> {
    Ok(match &a.threshold {
        Some(p) => ThresholdSource::Fixed(read_threshold(p)?),
        None if a.calib.zero_shot => ThresholdSource::ZeroShot,
        None => ThresholdSource::Calibrate {
            params: a.calib.params(),
            samples: a.calib.samples,
        },
    })
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let opts = signal_options(&a.signal, Some(&m), a.seed)?;
    let Some(kind) = a.sweep else {
        let report = evaluate(
            &m,
            &EvalOptions {
                signal: opts,
                pair: a.signal.pair,
                threshold: threshold_source(&a)?,
            },
        )?;
        report.write_to(&a.out)?;
        let failed = report.failures().count();
        println!("pair={}", report.pair.pair);
        println!("tau={}", report.threshold.tau);
        println!("scored={}", report.confusion.total());
        println!("failed={failed}");
        println!("accuracy={:.6}", report.accuracy());
        println!("report={}", a.out.join("report.txt").display());
        return Ok(());
    };
    let params = a.calib.params();
    let model = |pair: WindowPair| -> Result<ThresholdModel> {
        Ok(match threshold_source(&a)? {
            ThresholdSource::Fixed(model) => model,
            ThresholdSource::ZeroShot => zero_shot(),
            ThresholdSource::Calibrate { params, samples } => calibrate(&m, pair, &opts, params, samples)?,
        })
    };
    let pair = || -> Result<WindowPair> { Ok(resolve_pair(&m, a.signal.pair, &opts)?.pair) };
    let tables = match kind {
        SweepKind::Samples => vec![samples_table(&sweep_samples(&m, pair()?, &opts, &a.s_values, params)?)],
        SweepKind::Length => vec![length_table(&sweep_length(&m, pair()?, &opts, params, &a.fractions)?)],
        SweepKind::Metric => {
            let rows = sweep_metric(&m, pair()?, &opts, &MetricKind::ALL, params)?;
            vec![calibrated_table("metric", "metric", &rows)]
        }
        SweepKind::Window => {
            let k = opts.oracle.open(opts.timeout)?.chunk_frames();
            let pairs = (1..k).map(|j| WindowPair::new(0, j, k)).collect::<Result<Vec<_>, _>>()?;
            window_tables(&sweep_window(&m, &opts, &pairs, params)?)
        }
        SweepKind::Robustness => {
            let p = pair()?;
            let rows = sweep_robustness(&m, p, &opts, &model(p)?, &ROBUSTNESS_TRANSFORMS)?;
            vec![robustness_table(&rows)]
        }
        SweepKind::Aedr => {
            let p = pair()?;
            vec![aedr_table(&sweep_aedr(&m, p, &opts, &model(p)?)?)]
        }
    };
    write_tables(&a.out, &tables)
}

fn write_tables(dir: &Path, tables: &[SweepTable]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for t in tables {
        print!("{}", t.render_text());
        let path = dir.join(format!("sweep_{}.csv", t.name));
        fs::write(&path, t.render_csv()).with_context(|| format!("writing {}", path.display()))?;
        let path = dir.join(format!("sweep_{}.txt", t.name));
        fs::write(&path, t.render_text()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    if matches!(a.oracle, OracleSpec::Exec(_) | OracleSpec::Tcp { .. }) {
        bail!("serve needs an in-process oracle (toy or identity)");
    }
    let opts = ServeOptions::default();
    if a.stdio || a.port.is_none() {
        let mut oracle = a.oracle.open(Duration::from_secs(1))?;
        let mut reader = BufReader::new(std::io::stdin().lock());
        let mut writer = BufWriter::new(std::io::stdout().lock());
        let result = serve_connection(&mut reader, &mut writer, &mut *oracle, opts);
        writer.flush().ok();
        return result.context("serving stdio");
    }
    let listener = TcpListener::bind(("127.0.0.1", a.port.unwrap_or(0))).context("binding listener")?;
    println!("listening={}", listener.local_addr()?);
    std::io::stdout().flush().ok();
    for stream in listener.incoming() {
        let stream = stream.context("accepting connection")?;
        let spec = a.oracle.clone();
        thread::spawn(move || {
            let Ok(mut oracle) = spec.open(Duration::from_secs(1)) else { return };
            let Ok(read_half) = stream.try_clone() else { return };
            let mut reader = BufReader::new(read_half);
            let mut writer = BufWriter::new(stream);
            if let Err(e) = serve_connection(&mut reader, &mut writer, &mut *oracle, opts) {
                eprintln!("vidattr serve: {e}");
            }
            writer.flush().ok();
        });
    }
    Ok(())
}
