//! Axis-wise standardisation of `[batch, channel, freq, time]` tensors and
//! training-only additive noise.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{normalize_with_stats, reduce_stats, Scalar, Tensor};

/// Added to the standard deviation before dividing.
pub const NORM_EPS: f64 = 1e-8;

/// Which slice family gets its own statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormAxis {
    /// Each frequency row, pooled over batch, channel and time.
    Freq,
    /// Each time column, pooled over batch, channel and frequency.
    Time,
    /// Each channel, pooled over batch, frequency and time.
    Channel,
    /// Each item in the batch on its own.
    Data,
    /// The whole batch at once.
    Batch,
}

impl NormAxis {
    pub const ALL: [NormAxis; 5] = [
        NormAxis::Freq,
        NormAxis::Time,
        NormAxis::Channel,
        NormAxis::Data,
        NormAxis::Batch,
    ];

    /// Axes of a `[batch, channel, freq, time]` tensor that get pooled.
    pub fn pooled_axes(self) -> &'static [usize] {
        match self {
            NormAxis::Freq => &[0, 1, 3],
            NormAxis::Time => &[0, 1, 2],
            NormAxis::Channel => &[0, 2, 3],
            NormAxis::Data => &[1, 2, 3],
            NormAxis::Batch => &[0, 1, 2, 3],
        }
    }
}

impl FromStr for NormAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "freq" | "frequency" => Ok(NormAxis::Freq),
            "time" => Ok(NormAxis::Time),
            "channel" => Ok(NormAxis::Channel),
            "data" => Ok(NormAxis::Data),
            "batch" => Ok(NormAxis::Batch),
            other => Err(Error::config(format!("unknown normalization axis '{other}'"))),
        }
    }
}

impl fmt::Display for NormAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormAxis::Freq => "freq",
            NormAxis::Time => "time",
            NormAxis::Channel => "channel",
            NormAxis::Data => "data",
            NormAxis::Batch => "batch",
        })
    }
}

/// `(t - mean) / (std + NORM_EPS)` with statistics pooled per `axis`.
pub fn normalize2d<T: Scalar>(t: &Tensor<T>, axis: NormAxis) -> Result<Tensor<T>> {
    if t.rank() != 4 {
        return Err(Error::domain(format!(
            "normalize2d expects [batch, channel, freq, time], got {}",
            t.shape()
        )));
    }
    let (mean, std) = reduce_stats(t, axis.pooled_axes())?;
    normalize_with_stats(t, &mean, &std, NORM_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// Noise standard deviation, or the upper bound of the random gain.
    pub power: f64,
    /// Draw one gain per data item from `Uniform(0, power)`.
    pub randomize_gain: bool,
    pub seed: u64,
    pub kind: NoiseKind,
}

impl NoiseConfig {
    pub fn new(power: f64, seed: u64) -> Self {
        NoiseConfig { power, randomize_gain: false, seed, kind: NoiseKind::Gaussian }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power >= 0.0 && self.power.is_finite()) {
            return Err(Error::config(format!("noise power must be >= 0, got {}", self.power)));
        }
        Ok(())
    }
}

/// Number of independent data items: the batch axis of a 4-D tensor, or
/// the whole tensor otherwise.
fn item_count<T: Scalar>(t: &Tensor<T>) -> usize {
    if t.rank() == 4 {
        t.dims()[0]
    } else {
        1
    }
}

fn perturb_item<T: Scalar>(item: &mut [T], index: usize, cfg: &NoiseConfig) {
    // one stream per item, so the result does not depend on iteration order
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let gain = if cfg.randomize_gain {
        rng.gen::<f64>() * cfg.power
    } else {
        cfg.power
    };
    match cfg.kind {
        NoiseKind::Gaussian => {
            for v in item.iter_mut() {
                let eta: f64 = rng.sample(StandardNormal);
                *v = T::from_f64(v.as_f64() + gain * eta);
            }
        }
    }
}

/// Adds `gain * N(0, 1)` noise in the training phase; the inference phase
/// returns the input unchanged.
pub fn additive_noise<T: Scalar>(t: &Tensor<T>, cfg: &NoiseConfig, phase: Phase) -> Result<Tensor<T>> {
    cfg.validate()?;
    let mut out = t.clone();
    if phase == Phase::Inference || cfg.power == 0.0 {
        return Ok(out);
    }
    let per_item = t.len() / item_count(t);
    for (i, item) in out.data_mut().chunks_mut(per_item).enumerate() {
        perturb_item(item, i, cfg);
    }
    Ok(out)
}

/// Same result as [`additive_noise`], with data items processed in parallel.
pub fn additive_noise_parallel<T: Scalar>(t: &Tensor<T>, cfg: &NoiseConfig, phase: Phase) -> Result<Tensor<T>> {
    cfg.validate()?;
    let mut out = t.clone();
    if phase == Phase::Inference || cfg.power == 0.0 {
        return Ok(out);
    }
    let per_item = t.len() / item_count(t);
    out.data_mut()
        .par_chunks_mut(per_item)
        .enumerate()
        .for_each(|(i, item)| perturb_item(item, i, cfg));
    Ok(out)
}
