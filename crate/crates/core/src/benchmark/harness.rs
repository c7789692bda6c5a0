use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::net::{build_depth_net, build_paper_net, ConvNet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::time_frequency::{build_dft_kernels, spectrogram, DftKernelBank, StftConfig};

const WARMUP_BATCHES: usize = 3;
/// Distinct dummy batches kept in memory; longer runs cycle through them.
const MAX_DISTINCT_BATCHES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub batches: usize,
    pub repeats: usize,
    pub dummy_audio_seconds: f64,
    pub sample_rate: u32,
    pub stft: StftConfig,
    pub depths: Vec<usize>,
    pub seed: u64,
    /// Evaluate batch items on the rayon pool instead of the calling thread.
    pub parallel: bool,
}

impl Default for BenchConfig {
    /// Desk-scale sizes: 4 s clips, small batches.
    fn default() -> Self {
        BenchConfig {
            batch_size: 1,
            batches: 8,
            repeats: 5,
            dummy_audio_seconds: 4.0,
            sample_rate: 32_000,
            stft: StftConfig { sample_rate: 32_000, return_decibel: true, ..StftConfig::default() },
            depths: vec![1, 3, 5, 7],
            seed: 0,
            parallel: false,
        }
    }
}

impl BenchConfig {
    /// 30 s clips, batches of 16, 512 batches per repeat.
    pub fn full_scale() -> Self {
        BenchConfig { batch_size: 16, batches: 512, repeats: 5, dummy_audio_seconds: 30.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batches == 0 || self.repeats == 0 {
            return Err(Error::config("batch_size, batches and repeats must be positive"));
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return Err(Error::config("depths must be non-empty and each at least 1"));
        }
        if !(self.dummy_audio_seconds > 0.0 && self.dummy_audio_seconds.is_finite()) {
            return Err(Error::config("dummy_audio_seconds must be positive"));
        }
        if self.sample_rate != self.stft.sample_rate {
            return Err(Error::config(format!(
                "sample_rate {} disagrees with stft sample_rate {}",
                self.sample_rate, self.stft.sample_rate
            )));
        }
        self.stft.validate()
    }

    fn samples(&self) -> usize {
        (self.dummy_audio_seconds * f64::from(self.sample_rate)).round() as usize
    }
}

/// Timing of one arm at one depth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub config_name: String,
    pub depth: usize,
    pub with_preprocessing: bool,
    pub parallel: bool,
    pub batch_size: usize,
    pub batches: usize,
    pub repeats: usize,
    pub wall_time_total: f64,
    pub wall_time_per_batch_median: f64,
    pub wall_time_per_batch_p10: f64,
    pub wall_time_per_batch_p90: f64,
    pub param_count: usize,
    /// Sum of the final batch's outputs; equal across runs with equal seeds.
    pub output_checksum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthSummary {
    pub depth: usize,
    /// Median per-batch time with preprocessing over median time without.
    pub ratio: f64,
    /// Median of paired per-batch differences `t_with - t_without`, seconds.
    pub overhead_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub summaries: Vec<DepthSummary>,
    pub reference_param_count: usize,
    pub timer_resolution_s: f64,
    /// Set when the timer resolution exceeds 1% of some per-batch median.
    pub unreliable: bool,
}

#[derive(Serialize)]
struct CsvRow {
    depth: usize,
    arm: &'static str,
    batch_size: usize,
    median_s: f64,
    p10_s: f64,
    p90_s: f64,
    ratio: f64,
}

impl BenchReport {
    pub fn summary(&self, depth: usize) -> Option<&DepthSummary> {
        self.summaries.iter().find(|s| s.depth == depth)
    }

    /// Largest over smallest absolute overhead; `None` if any is not positive.
    pub fn overhead_spread(&self) -> Option<f64> {
        let o: Vec<f64> = self.summaries.iter().map(|s| s.overhead_s).collect();
        if o.is_empty() || o.iter().any(|&v| v <= 0.0) {
            return None;
        }
        let max = o.iter().copied().fold(f64::MIN, f64::max);
        let min = o.iter().copied().fold(f64::MAX, f64::min);
        Some(max / min)
    }

    /// Ratios in order of increasing depth never go up.
    pub fn ratios_non_increasing(&self) -> bool {
        let mut s: Vec<&DepthSummary> = self.summaries.iter().collect();
        s.sort_by_key(|d| d.depth);
        s.windows(2).all(|w| w[1].ratio <= w[0].ratio)
    }

    /// Two rows per depth (`with`, `without`), both carrying that depth's ratio.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            let ratio = self.summary(r.depth).map_or(f64::NAN, |s| s.ratio);
            w.serialize(CsvRow {
                depth: r.depth,
                arm: if r.with_preprocessing { "with" } else { "without" },
                batch_size: r.batch_size,
                median_s: r.wall_time_per_batch_median,
                p10_s: r.wall_time_per_batch_p10,
                p90_s: r.wall_time_per_batch_p90,
                ratio,
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One JSON object per record, then one per depth summary.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(json_err)?;
            out.write_all(b"\n")?;
        }
        for s in &self.summaries {
            serde_json::to_writer(&mut out, s).map_err(json_err)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Format(format!("json: {e}"))
}

/// Smallest non-zero step of the monotonic clock, sampled briefly.
fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let t0 = Instant::now();
        let mut t1 = Instant::now();
        while t1 == t0 {
            t1 = Instant::now();
        }
        best = best.min(t1 - t0);
    }
    best
}

/// Linear-interpolated percentile of an unsorted sample, `q` in [0, 1].
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

struct Arm<'a> {
    net: ConvNet<f32>,
    bank: &'a DftKernelBank<f32>,
    stft: &'a StftConfig,
    parallel: bool,
}

impl Arm<'_> {
    fn preprocess(&self, clips: &[Tensor<f32>]) -> Result<Tensor<f32>> {
        let one = |c: &Tensor<f32>| {
            let s = spectrogram(c, self.bank, self.stft)?;
            let d = s.dims().to_vec();
            s.reshape(&[1, d[0] * d[1], d[2]])
        };
        let specs = if self.parallel {
            clips.par_iter().map(one).collect::<Result<Vec<_>>>()?
        } else {
            clips.iter().map(one).collect::<Result<Vec<_>>>()?
        };
        Tensor::stack(&specs)
    }

    fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        if self.parallel {
            self.net.forward_parallel(x)
        } else {
            self.net.forward(x)
        }
    }

    fn run_with(&self, clips: &[Tensor<f32>]) -> Result<(Duration, Tensor<f32>)> {
        let t0 = Instant::now();
        let y = self.forward(&self.preprocess(clips)?)?;
        Ok((t0.elapsed(), y))
    }

    fn run_without(&self, specs: &Tensor<f32>) -> Result<(Duration, Tensor<f32>)> {
        let t0 = Instant::now();
        let y = self.forward(specs)?;
        Ok((t0.elapsed(), y))
    }
}

/// Times the network at each depth with and without on-the-fly
/// spectrogram computation.
///
/// Dummy audio is drawn once from `cfg.seed` before any timing. The two
/// arms alternate batch by batch (and swap order every other batch) so
/// slow drift in machine load hits both equally.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let samples = cfg.samples();
    let n_frames = cfg.stft.n_frames(samples).ok_or_else(|| {
        Error::config(format!("{samples} dummy samples are shorter than n_dft {}", cfg.stft.n_dft))
    })?;
    let n_bins = cfg.stft.n_bins();
    let bank = build_dft_kernels::<f32>(&cfg.stft)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let distinct = cfg.batches.min(MAX_DISTINCT_BATCHES);
    let audio: Vec<Vec<Tensor<f32>>> = (0..distinct)
        .map(|_| {
            (0..cfg.batch_size)
                .map(|_| Tensor::from_fn(&[1, samples], |_| rng.gen_range(-1.0f32..1.0)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let resolution = timer_resolution().as_secs_f64();
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    let mut unreliable = false;

    for &depth in &cfg.depths {
        let spec = build_depth_net(n_bins, n_frames, depth)?;
        let param_count = spec.param_count();
        let arm = Arm {
            net: ConvNet::seeded(spec, cfg.seed ^ depth as u64)?,
            bank: &bank,
            stft: &cfg.stft,
            parallel: cfg.parallel,
        };
        // the precomputed arm's inputs are built outside every timer
        let precomputed: Vec<Tensor<f32>> = audio.iter().map(|b| arm.preprocess(b)).collect::<Result<_>>()?;

        for i in 0..WARMUP_BATCHES {
            arm.run_with(&audio[i % distinct])?;
            arm.run_without(&precomputed[i % distinct])?;
        }

        let mut with_t = Vec::new();
        let mut without_t = Vec::new();
        let mut last = (None, None);
        for rep in 0..cfg.repeats {
            for b in 0..cfg.batches {
                let k = b % distinct;
                let (tw, yw, tn, yn) = if (rep + b) % 2 == 0 {
                    let (tw, yw) = arm.run_with(&audio[k])?;
                    let (tn, yn) = arm.run_without(&precomputed[k])?;
                    (tw, yw, tn, yn)
                } else {
                    let (tn, yn) = arm.run_without(&precomputed[k])?;
                    let (tw, yw) = arm.run_with(&audio[k])?;
                    (tw, yw, tn, yn)
                };
                with_t.push(tw.as_secs_f64());
                without_t.push(tn.as_secs_f64());
                last = (Some(yw), Some(yn));
            }
        }

        let diffs: Vec<f64> = with_t.iter().zip(&without_t).map(|(w, n)| w - n).collect();
        let mut arm_record = |with: bool, times: &[f64], y: Option<Tensor<f32>>| {
            let median = percentile(times, 0.5);
            if median <= 0.0 || resolution > 0.01 * median {
                unreliable = true;
            }
            BenchRecord {
                config_name: format!("depth{depth}/{}", if with { "with" } else { "without" }),
                depth,
                with_preprocessing: with,
                parallel: cfg.parallel,
                batch_size: cfg.batch_size,
                batches: cfg.batches,
                repeats: cfg.repeats,
                wall_time_total: times.iter().sum(),
                wall_time_per_batch_median: median,
                wall_time_per_batch_p10: percentile(times, 0.1),
                wall_time_per_batch_p90: percentile(times, 0.9),
                param_count,
                output_checksum: y.map_or(0.0, |t| t.sum()),
            }
        };
        let rw = arm_record(true, &with_t, last.0);
        let rn = arm_record(false, &without_t, last.1);
        summaries.push(DepthSummary {
            depth,
            ratio: rw.wall_time_per_batch_median / rn.wall_time_per_batch_median,
            overhead_s: percentile(&diffs, 0.5),
        });
        records.push(rw);
        records.push(rn);
    }

    Ok(BenchReport {
        records,
        summaries,
        reference_param_count: build_paper_net(n_bins).map_or(0, |s| s.param_count()),
        timer_resolution_s: resolution,
        unreliable,
    })
}
