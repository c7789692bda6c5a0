//! Command-line front end. `main.rs` only forwards to [`run`].
//!
//! Every subcommand accepts `--config FILE` with flat `key=value` lines
//! (`#` starts a comment). Keys are the long flag names with `_` or `-`.
//! Flags given on the command line win over file values.
//!
//! Exit codes: 0 success, 1 failed check or unreliable benchmark,
//! 2 usage error, 3 I/O error.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::audio_io::{read_wav, write_tensor, AudioBuffer};
use crate::benchmark::{build_paper_net, run_benchmark, BenchConfig, BenchReport};
use crate::error::Error;
use crate::filterbank::{build_filterbank, FilterNorm, Filterbank, FilterbankConfig, Scale};
use crate::gradcheck::{default_threshold, run_gradcheck, GradcheckConfig, GradcheckEntry};
use crate::norm_augment::{additive_noise, normalize2d, NoiseConfig, NormAxis, Phase};
use crate::tensor::{Scalar, Tensor};
use crate::time_frequency::{build_dft_kernels, melspectrogram, spectrogram, StftConfig, Window};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Check(_) => EXIT_CHECK,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Library errors split into bad parameters and bad files.
fn lib_err(context: &str) -> impl Fn(Error) -> CliError + '_ {
    move |e| match e {
        Error::Config(_) | Error::Domain(_) | Error::Unimplemented(_) => usage(e.to_string()),
        Error::Io(_) | Error::Corrupt(_) | Error::Format(_) | Error::Unsupported(_) | Error::UnsupportedCodec(_) => {
            CliError::Io(format!("{context}: {e}"))
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "audiolayers", version, about = "Spectrograms, filterbanks, gradient checks and overhead benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Power spectrogram of a WAV file, written as a KTF1 tensor.
    Spectrogram(SpectrogramArgs),
    /// Mel (or other filterbank) spectrogram of a WAV file.
    Melspectrogram(MelArgs),
    /// Build a filterbank and export its weights.
    Filterbank(FilterbankArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Time the benchmark network with and without on-the-fly spectrograms.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct StftArgs {
    #[arg(long)]
    pub n_dft: Option<usize>,
    #[arg(long)]
    pub n_hop: Option<usize>,
    /// hann or rectangular
    #[arg(long)]
    pub window: Option<String>,
    /// Decibel-scale the output.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub db: Option<bool>,
    /// 2 for power, 1 for magnitude.
    #[arg(long)]
    pub power: Option<f64>,
    /// Fail unless the input has this sample rate.
    #[arg(long)]
    pub sr: Option<u32>,
    /// Standardise the output per freq, time, channel, data or batch.
    #[arg(long)]
    pub normalize: Option<String>,
    /// Add training-phase Gaussian noise with this standard deviation.
    #[arg(long)]
    pub noise_power: Option<f64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SpectrogramArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub stft: StftArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub n_mels: Option<usize>,
    #[arg(long)]
    pub fmin: Option<f64>,
    #[arg(long)]
    pub fmax: Option<f64>,
    /// mel, log, linear or random
    #[arg(long)]
    pub scale: Option<String>,
    /// peak or area
    #[arg(long)]
    pub norm: Option<String>,
    /// Seed for the random scale.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MelArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub stft: StftArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterbankArgs {
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sr: Option<u32>,
    #[arg(long)]
    pub n_dft: Option<usize>,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// 32 or 64
    #[arg(long)]
    pub precision: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum relative error; defaults to 1e-6 (64-bit) or 1e-3 (32-bit).
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub n_dft: Option<usize>,
    #[arg(long)]
    pub n_hop: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub n_mels: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated conv-layer counts.
    #[arg(long)]
    pub depths: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Dummy clip length in seconds.
    #[arg(long)]
    pub seconds: Option<f64>,
    #[arg(long)]
    pub sr: Option<u32>,
    #[arg(long)]
    pub n_dft: Option<usize>,
    #[arg(long)]
    pub n_hop: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub db: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from 30 s clips, batches of 16 and 512 batches.
    #[arg(long)]
    pub full_scale: bool,
    /// Evaluate batch items in parallel (reported separately).
    #[arg(long)]
    pub parallel: bool,
    /// Exit 0 even if the timer is too coarse for the measured times.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Values loaded from `--config`, tracking which keys were consumed.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key=value, got '{line}'", i + 1)))?;
            let key = normalize_key(k);
            if key.is_empty() {
                return Err(usage(format!("config line {}: empty key", i + 1)));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(ConfigFile { values, used: RefCell::default() })
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    /// The flag if given, else the parsed file value, else `None`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let from_file = match self.values.get(key) {
            Some(raw) => {
                self.used.borrow_mut().insert(key.to_string());
                Some(raw.parse::<T>().map_err(|e| usage(format!("config value for {key}: {e}")))?)
            }
            None => None,
        };
        Ok(flag.or(from_file))
    }

    /// Rejects keys the subcommand never asked for.
    pub fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        match self.values.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(usage(format!("unknown config key '{k}'"))),
            None => Ok(()),
        }
    }
}

fn parse_named<T: FromStr<Err = Error>>(value: Option<String>, flag: &str) -> CliResult<Option<T>> {
    value
        .map(|v| v.parse::<T>().map_err(|e| usage(format!("--{flag}: {e}"))))
        .transpose()
}

fn parse_norm(value: Option<String>) -> CliResult<FilterNorm> {
    match value.as_deref().map(str::to_ascii_lowercase).as_deref() {
        None | Some("peak") => Ok(FilterNorm::Peak),
        Some("area") => Ok(FilterNorm::Area),
        Some(other) => Err(usage(format!("--norm: unknown filter normalisation '{other}'"))),
    }
}

/// Post-processing applied after the spectrogram.
struct Augment {
    normalize: Option<NormAxis>,
    noise: Option<NoiseConfig>,
}

fn resolve_stft(a: StftArgs, cfg: &ConfigFile, sample_rate: u32) -> CliResult<(StftConfig, Option<u32>, Augment)> {
    let d = StftConfig::default();
    let window = parse_named::<Window>(cfg.pick(a.window, "window")?, "window")?.unwrap_or(d.window);
    let stft = StftConfig {
        n_dft: cfg.pick(a.n_dft, "n_dft")?.unwrap_or(d.n_dft),
        n_hop: cfg.pick(a.n_hop, "n_hop")?.unwrap_or(d.n_hop),
        sample_rate,
        window,
        return_decibel: cfg.pick(a.db, "db")?.unwrap_or(false),
        power_exponent: cfg.pick(a.power, "power")?.unwrap_or(d.power_exponent),
    };
    let expected_sr = cfg.pick(a.sr, "sr")?;
    let normalize = parse_named::<NormAxis>(cfg.pick(a.normalize, "normalize")?, "normalize")?;
    let power = cfg.pick(a.noise_power, "noise_power")?;
    let seed = cfg.pick(a.noise_seed, "noise_seed")?.unwrap_or(0);
    let noise = match power {
        Some(p) => {
            let n = NoiseConfig::new(p, seed);
            n.validate().map_err(|e| usage(format!("--noise-power: {e}")))?;
            Some(n)
        }
        None => None,
    };
    Ok((stft, expected_sr, Augment { normalize, noise }))
}

fn load_audio(path: &Path, expected_sr: Option<u32>) -> CliResult<AudioBuffer> {
    let audio = read_wav(path).map_err(|e| match e {
        Error::Config(_) | Error::Domain(_) => CliError::Io(format!("{}: {e}", path.display())),
        other => lib_err(&path.display().to_string())(other),
    })?;
    if let Some(sr) = expected_sr {
        if sr != audio.sample_rate {
            return Err(usage(format!("--sr {sr} does not match the file's sample rate {}", audio.sample_rate)));
        }
    }
    Ok(audio)
}

fn check_length(audio: &AudioBuffer, stft: &StftConfig) -> CliResult<()> {
    if stft.n_frames(audio.len()).is_none() {
        return Err(usage(format!(
            "--n-dft {} is longer than the input ({} samples)",
            stft.n_dft,
            audio.len()
        )));
    }
    Ok(())
}

fn augment(t: Tensor<f32>, aug: &Augment) -> CliResult<Tensor<f32>> {
    if aug.normalize.is_none() && aug.noise.is_none() {
        return Ok(t);
    }
    let dims = t.dims().to_vec();
    let mut x = t.reshape(&[1, dims[0], dims[1], dims[2]]).map_err(lib_err("normalize"))?;
    if let Some(axis) = aug.normalize {
        x = normalize2d(&x, axis).map_err(lib_err("normalize"))?;
    }
    if let Some(noise) = &aug.noise {
        x = additive_noise(&x, noise, Phase::Training).map_err(lib_err("noise"))?;
    }
    x.reshape(&dims).map_err(lib_err("normalize"))
}

fn write_output<T: Scalar>(out: &mut dyn Write, path: &Path, t: &Tensor<T>) -> CliResult<()> {
    write_tensor(path, t).map_err(lib_err(&path.display().to_string()))?;
    writeln!(out, "shape: {}", t.shape()).ok();
    writeln!(out, "min: {} max: {}", t.min(), t.max()).ok();
    writeln!(out, "wrote {}", path.display()).ok();
    Ok(())
}

fn cmd_spectrogram(a: SpectrogramArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    // validate flags against a placeholder rate before touching the file
    let (mut stft, expected_sr, aug) = resolve_stft(a.stft, &cfg, 1)?;
    cfg.finish()?;
    stft.validate().map_err(lib_err("stft"))?;
    let audio = load_audio(&a.input, expected_sr)?;
    stft.sample_rate = audio.sample_rate;
    check_length(&audio, &stft)?;
    let bank = build_dft_kernels::<f32>(&stft).map_err(lib_err("stft"))?;
    let spec = spectrogram(&audio.samples, &bank, &stft).map_err(lib_err("stft"))?;
    let spec = augment(spec, &aug)?;
    write_output(out, &a.out, &spec)
}

fn filterbank_config(f: FilterArgs, cfg: &ConfigFile, n_bins: usize, sample_rate: u32) -> CliResult<FilterbankConfig> {
    let scale = parse_named::<Scale>(cfg.pick(f.scale, "scale")?, "scale")?.unwrap_or(Scale::Mel);
    let mut fc = FilterbankConfig::new(scale, cfg.pick(f.n_mels, "n_mels")?.unwrap_or(128), n_bins, sample_rate);
    fc.fmin = cfg.pick(f.fmin, "fmin")?.unwrap_or(0.0);
    fc.fmax = cfg.pick(f.fmax, "fmax")?;
    fc.seed = cfg.pick(f.seed, "seed")?;
    fc.norm = parse_norm(cfg.pick(f.norm, "norm")?)?;
    Ok(fc)
}

fn build_fb(fc: &FilterbankConfig, err: &mut dyn Write) -> CliResult<Filterbank<f32>> {
    let fb = build_filterbank::<f32>(fc).map_err(|e| {
        let msg = e.to_string();
        // name the flag the message is about
        let flag = ["fmax", "fmin", "n_mels"].into_iter().find(|f| msg.contains(f));
        match flag {
            Some(f) => usage(format!("--{}: {msg}", f.replace('_', "-"))),
            None => lib_err("filterbank")(e),
        }
    })?;
    for w in fb.warnings() {
        writeln!(err, "warning: {w:?}").ok();
    }
    Ok(fb)
}

fn cmd_melspectrogram(a: MelArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let (mut stft, expected_sr, aug) = resolve_stft(a.stft, &cfg, 1)?;
    stft.validate().map_err(lib_err("stft"))?;
    let audio = load_audio(&a.input, expected_sr)?;
    stft.sample_rate = audio.sample_rate;
    let fc = filterbank_config(a.filter, &cfg, stft.n_bins(), audio.sample_rate)?;
    cfg.finish()?;
    let fb = build_fb(&fc, err)?;
    check_length(&audio, &stft)?;
    let bank = build_dft_kernels::<f32>(&stft).map_err(lib_err("stft"))?;
    let mel = melspectrogram(&audio.samples, &bank, &fb, &stft).map_err(lib_err("melspectrogram"))?;
    let mel = augment(mel, &aug)?;
    write_output(out, &a.out, &mel)
}

fn cmd_filterbank(a: FilterbankArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let sr = cfg.pick(a.sr, "sr")?.ok_or_else(|| usage("--sr is required"))?;
    let n_dft = cfg.pick(a.n_dft, "n_dft")?.unwrap_or(StftConfig::default().n_dft);
    let stft = StftConfig { n_dft, sample_rate: sr, n_hop: n_dft / 2, ..StftConfig::default() };
    stft.validate().map_err(lib_err("stft"))?;
    let fc = filterbank_config(a.filter, &cfg, stft.n_bins(), sr)?;
    cfg.finish()?;
    let fb = build_fb(&fc, err)?;
    write_output(out, &a.out, fb.weights())
}

fn report_gradcheck(entries: &[GradcheckEntry], threshold: f64, out: &mut dyn Write) -> CliResult<()> {
    writeln!(out, "{:<28} {:>12}  {:>6}", "gradient", "max_rel_err", "worst").ok();
    for e in entries {
        let worst = e.report.worst_index.map_or("-".to_string(), |i| i.to_string());
        writeln!(out, "{:<28} {:>12.3e}  {:>6}", e.name, e.report.max_rel_err, worst).ok();
    }
    let failed: Vec<String> = entries
        .iter()
        .filter(|e| !e.report.passed(threshold))
        .map(|e| {
            let at = e.report.worst_index.map_or(String::new(), |i| format!(" at index {i}"));
            let why = e.report.failure.clone().map_or(String::new(), |f| format!(" ({f})"));
            format!("{} error {:.3e}{at}{why}", e.name, e.report.max_rel_err)
        })
        .collect();
    if failed.is_empty() {
        writeln!(out, "all gradients within {threshold:e}").ok();
        Ok(())
    } else {
        Err(CliError::Check(format!("threshold {threshold:e} exceeded: {}", failed.join("; "))))
    }
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let d = GradcheckConfig::default();
    let gc = GradcheckConfig {
        n_dft: cfg.pick(a.n_dft, "n_dft")?.unwrap_or(d.n_dft),
        n_hop: cfg.pick(a.n_hop, "n_hop")?.unwrap_or(d.n_hop),
        samples: cfg.pick(a.samples, "samples")?.unwrap_or(d.samples),
        channels: cfg.pick(a.channels, "channels")?.unwrap_or(d.channels),
        n_mels: cfg.pick(a.n_mels, "n_mels")?.unwrap_or(d.n_mels),
        seed: cfg.pick(a.seed, "seed")?.unwrap_or(d.seed),
        ..d
    };
    let precision = cfg.pick(a.precision, "precision")?.unwrap_or(64);
    let threshold = cfg.pick(a.threshold, "threshold")?;
    cfg.finish()?;
    if gc.channels == 0 || gc.n_mels == 0 {
        return Err(usage("--channels and --n-mels must be positive"));
    }
    if let Some(t) = threshold {
        if !(t >= 0.0) {
            return Err(usage(format!("--threshold must be >= 0, got {t}")));
        }
    }
    writeln!(out, "precision: {precision}-bit, seed {}", gc.seed).ok();
    match precision {
        32 => {
            let e = run_gradcheck::<f32>(&gc).map_err(lib_err("gradcheck"))?;
            report_gradcheck(&e, threshold.unwrap_or_else(default_threshold::<f32>), out)
        }
        64 => {
            let e = run_gradcheck::<f64>(&gc).map_err(lib_err("gradcheck"))?;
            report_gradcheck(&e, threshold.unwrap_or_else(default_threshold::<f64>), out)
        }
        p => Err(usage(format!("--precision must be 32 or 64, got {p}"))),
    }
}

fn parse_depths(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| usage(format!("--depths: '{p}': {e}"))))
        .collect()
}

fn write_report_file(path: &Path, report: &BenchReport, csv: bool) -> CliResult<()> {
    let io_err = |e: io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        let r = if csv { report.write_csv(&mut w) } else { report.write_jsonl(&mut w) };
        r.map_err(lib_err(&path.display().to_string()))?;
        w.flush().map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let base = if a.full_scale { BenchConfig::full_scale() } else { BenchConfig::default() };
    let depths = match cfg.pick(a.depths, "depths")? {
        Some(s) => parse_depths(&s)?,
        None => base.depths.clone(),
    };
    let sr = cfg.pick(a.sr, "sr")?.unwrap_or(base.sample_rate);
    let stft = StftConfig {
        n_dft: cfg.pick(a.n_dft, "n_dft")?.unwrap_or(base.stft.n_dft),
        n_hop: cfg.pick(a.n_hop, "n_hop")?.unwrap_or(base.stft.n_hop),
        return_decibel: cfg.pick(a.db, "db")?.unwrap_or(base.stft.return_decibel),
        sample_rate: sr,
        ..base.stft.clone()
    };
    let bc = BenchConfig {
        batch_size: cfg.pick(a.batch_size, "batch_size")?.unwrap_or(base.batch_size),
        batches: cfg.pick(a.batches, "batches")?.unwrap_or(base.batches),
        repeats: cfg.pick(a.repeats, "repeats")?.unwrap_or(base.repeats),
        dummy_audio_seconds: cfg.pick(a.seconds, "seconds")?.unwrap_or(base.dummy_audio_seconds),
        sample_rate: sr,
        stft,
        depths,
        seed: cfg.pick(a.seed, "seed")?.unwrap_or(base.seed),
        parallel: a.parallel,
    };
    let csv_path = cfg.pick(a.csv, "csv")?;
    let jsonl_path = cfg.pick(a.jsonl, "jsonl")?;
    cfg.finish()?;
    bc.validate().map_err(lib_err("bench"))?;

    let reference = build_paper_net(bc.stft.n_bins()).map_err(lib_err("bench"))?;
    writeln!(out, "reference net parameters: {}", reference.param_count()).ok();
    let report = run_benchmark(&bc).map_err(lib_err("bench"))?;

    writeln!(
        out,
        "{:>5} {:>12} {:>12} {:>8} {:>12}",
        "depth", "with_s", "without_s", "ratio", "overhead_s"
    )
    .ok();
    for s in &report.summaries {
        let med = |with: bool| {
            report
                .records
                .iter()
                .find(|r| r.depth == s.depth && r.with_preprocessing == with)
                .map_or(f64::NAN, |r| r.wall_time_per_batch_median)
        };
        writeln!(
            out,
            "{:>5} {:>12.6} {:>12.6} {:>8.4} {:>12.6}",
            s.depth,
            med(true),
            med(false),
            s.ratio,
            s.overhead_s
        )
        .ok();
    }
    if let Some(p) = &csv_path {
        write_report_file(p, &report, true)?;
        writeln!(out, "wrote {}", p.display()).ok();
    }
    if let Some(p) = &jsonl_path {
        write_report_file(p, &report, false)?;
        writeln!(out, "wrote {}", p.display()).ok();
    }
    if report.unreliable {
        let msg = format!(
            "timer resolution {:.3e} s is coarser than 1% of a per-batch median",
            report.timer_resolution_s
        );
        if a.force {
            writeln!(out, "warning: {msg}").ok();
        } else {
            return Err(CliError::Check(format!("{msg}; rerun with --force to accept")));
        }
    }
    Ok(())
}

/// Runs an already parsed command.
pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Spectrogram(a) => cmd_spectrogram(a, out),
        Command::Melspectrogram(a) => cmd_melspectrogram(a, out, err),
        Command::Filterbank(a) => cmd_filterbank(a, out, err),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Bench(a) => cmd_bench(a, out),
    }
}

/// Parses `args` (including the program name) and returns the exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                write!(err, "{text}").ok();
            } else {
                write!(out, "{text}").ok();
            }
            return code;
        }
    };
    match execute(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            writeln!(err, "{e}").ok();
            e.exit_code()
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
