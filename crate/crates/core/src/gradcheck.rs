//! Finite-difference suites over every backward pass, shared by the
//! `gradcheck` subcommand and the test suites.
//!
//! Analytic gradients are computed in the requested precision. The
//! numeric side always evaluates the forward chain in f64 on the probed
//! values, so an f32 run measures the f32 gradients rather than the
//! rounding noise of f32 forward differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::filterbank::{apply_filterbank, build_filterbank, Filterbank, FilterbankConfig, Scale};
use crate::gradients::{
    decibel_backward, default_step, filterbank_backward, melspectrogram_backward, stft_backward, weighted_sum, FdCheck,
    FdReport, Trainable, COS_KERNELS, FILTERBANK_WEIGHTS, SIN_KERNELS,
};
use crate::tensor::{DType, Scalar, Tensor};
use crate::time_frequency::{amplitude_to_decibel, build_dft_kernels, melspectrogram, stft_conv, DftKernelBank, StftConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub n_dft: usize,
    pub n_hop: usize,
    pub samples: usize,
    pub channels: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
    pub seed: u64,
    /// Defaults to 1e-4 for f32 and 1e-6 for f64.
    pub step: Option<f64>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { n_dft: 8, n_hop: 4, samples: 24, channels: 1, n_mels: 4, sample_rate: 8000, seed: 0, step: None }
    }
}

impl GradcheckConfig {
    fn stft(&self, db: bool) -> StftConfig {
        StftConfig {
            n_dft: self.n_dft,
            n_hop: self.n_hop,
            sample_rate: self.sample_rate,
            return_decibel: db,
            ..StftConfig::default()
        }
    }
}

/// The forward side runs in f64, so f32 probes can use a step well below
/// [`default_step`]; the wider step leaves visible truncation error where
/// the decibel curve bends sharply.
fn suite_step<T: Scalar>() -> f64 {
    match T::DTYPE {
        DType::F32 => 1e-4,
        DType::F64 => default_step::<f64>(),
    }
}

/// Pass threshold on the maximum relative error.
pub fn default_threshold<T: Scalar>() -> f64 {
    match T::DTYPE {
        DType::F32 => 1e-3,
        DType::F64 => 1e-6,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    /// `suite/parameter`, e.g. `stft/cos_kernels`.
    pub name: String,
    pub report: FdReport,
}

fn rand_tensor<T: Scalar>(dims: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Result<Tensor<T>> {
    Tensor::from_fn(dims, |_| T::from_f64(rng.gen_range(lo..hi)))
}

fn wide(t: &Tensor<impl Scalar>) -> Tensor<f64> {
    t.cast()
}

/// `sum(w * (y - base))`: subtracting the unperturbed output keeps the
/// loss small so its rounding error does not swamp tiny steps.
fn centred_loss(y: &Tensor<f64>, base: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    y.data().iter().zip(base.data()).zip(w.data()).map(|((a, b), c)| (a - b) * c).sum()
}

/// Runs the stft, filterbank, decibel and composed-pipeline suites.
pub fn run_gradcheck<T: Scalar>(cfg: &GradcheckConfig) -> Result<Vec<GradcheckEntry>> {
    let check = FdCheck::new(cfg.step.unwrap_or_else(suite_step::<T>)).seed(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let mut push = |name: &str, report: FdReport| out.push(GradcheckEntry { name: name.to_string(), report });

    let plain = cfg.stft(false);
    plain.validate()?;
    let bank = build_dft_kernels::<T>(&plain)?;
    // the f64 side widens the exact T-valued parameters so both sides
    // differentiate at the same point
    let bank64 = DftKernelBank::from_kernels(wide(bank.cos_kernels()), wide(bank.sin_kernels()))?;
    let bins = plain.n_bins();
    let frames = plain
        .n_frames(cfg.samples)
        .ok_or_else(|| crate::Error::config(format!("samples {} shorter than n_dft {}", cfg.samples, cfg.n_dft)))?;
    let x: Tensor<T> = rand_tensor(&[cfg.channels, cfg.samples], &mut rng, -1.0, 1.0)?;
    let x64 = wide(&x);

    // stft: loss = <w_re, re> + <w_im, im>
    {
        let wr: Tensor<T> = rand_tensor(&[cfg.channels, bins, frames], &mut rng, -1.0, 1.0)?;
        let wi: Tensor<T> = rand_tensor(&[cfg.channels, bins, frames], &mut rng, -1.0, 1.0)?;
        let (wr64, wi64) = (wide(&wr), wide(&wi));
        let g = stft_backward(&x, &bank, &plain, &wr, &wi, true)?;
        let loss = |x: &Tensor<f64>, b: &DftKernelBank<f64>| -> f64 {
            match stft_conv(x, b, &plain) {
                Ok((re, im)) => weighted_sum(&re, &wr64) + weighted_sum(&im, &wi64),
                Err(_) => f64::NAN,
            }
        };
        push("stft/input", check.run(|v| loss(&wide(v), &bank64), &x, &g.d_input)?);
        let sin64 = bank64.sin_kernels().clone();
        let cos64 = bank64.cos_kernels().clone();
        push(
            "stft/cos_kernels",
            check.run(
                |c| loss(&x64, &DftKernelBank::from_kernels(wide(c), sin64.clone()).expect("same shape")),
                bank.cos_kernels(),
                g.param(COS_KERNELS).expect("trainable"),
            )?,
        );
        push(
            "stft/sin_kernels",
            check.run(
                |s| loss(&x64, &DftKernelBank::from_kernels(cos64.clone(), wide(s)).expect("same shape")),
                bank.sin_kernels(),
                g.param(SIN_KERNELS).expect("trainable"),
            )?,
        );
    }

    let fb_cfg = FilterbankConfig::new(Scale::Mel, cfg.n_mels, bins, cfg.sample_rate);
    let fb = build_filterbank::<T>(&fb_cfg)?;
    let fb64 = Filterbank::from_weights(wide(fb.weights()), cfg.sample_rate)?;

    // filterbank on a random non-negative power spectrogram
    {
        let p: Tensor<T> = rand_tensor(&[cfg.channels, bins, frames], &mut rng, 0.0, 2.0)?;
        let up: Tensor<T> = rand_tensor(&[cfg.channels, cfg.n_mels, frames], &mut rng, -1.0, 1.0)?;
        let (p64, up64) = (wide(&p), wide(&up));
        let g = filterbank_backward(&fb, &p, &up, true)?;
        let sr = cfg.sample_rate;
        push(
            "filterbank/weights",
            check.run(
                |w| match Filterbank::from_weights(wide(w), sr).and_then(|f| apply_filterbank(&f, &p64)) {
                    Ok(y) => weighted_sum(&y, &up64),
                    Err(_) => f64::NAN,
                },
                fb.weights(),
                g.param(FILTERBANK_WEIGHTS).expect("trainable"),
            )?,
        );
        push(
            "filterbank/input",
            check.run(
                |s| apply_filterbank(&fb64, &wide(s)).map_or(f64::NAN, |y| weighted_sum(&y, &up64)),
                &p,
                &g.d_input,
            )?,
        );
    }

    // decibel on values well inside the dynamic range
    {
        let t: Tensor<T> = rand_tensor(&[cfg.channels, cfg.n_mels, frames], &mut rng, 0.05, 3.0)?;
        let up: Tensor<T> = rand_tensor(&[cfg.channels, cfg.n_mels, frames], &mut rng, -1.0, 1.0)?;
        let up64 = wide(&up);
        let base = amplitude_to_decibel(&wide(&t))?;
        let g = decibel_backward(&t, &up)?;
        push(
            "decibel/input",
            check.run(
                |v| amplitude_to_decibel(&wide(v)).map_or(f64::NAN, |y| centred_loss(&y, &base, &up64)),
                &t,
                &g,
            )?,
        );
    }

    // full chain, without and with decibel scaling
    for (suite, db) in [("mel", false), ("mel_db", true)] {
        let scfg = cfg.stft(db);
        let up: Tensor<T> = rand_tensor(&[cfg.channels, cfg.n_mels, frames], &mut rng, -1.0, 1.0)?;
        let up64 = wide(&up);
        let g = melspectrogram_backward(&x, &bank, &fb, &scfg, &up, Trainable::ALL)?;
        let base = melspectrogram(&x64, &bank64, &fb64, &scfg)?;
        let loss = |x: &Tensor<f64>, b: &DftKernelBank<f64>, f: &Filterbank<f64>| {
            melspectrogram(x, b, f, &scfg).map_or(f64::NAN, |y| centred_loss(&y, &base, &up64))
        };
        let sr = cfg.sample_rate;
        push(&format!("{suite}/input"), check.run(|v| loss(&wide(v), &bank64, &fb64), &x, &g.d_input)?);
        push(
            &format!("{suite}/{FILTERBANK_WEIGHTS}"),
            check.run(
                |w| match Filterbank::from_weights(wide(w), sr) {
                    Ok(f) => loss(&x64, &bank64, &f),
                    Err(_) => f64::NAN,
                },
                fb.weights(),
                g.param(FILTERBANK_WEIGHTS).expect("trainable"),
            )?,
        );
        let sin64 = bank64.sin_kernels().clone();
        let cos64 = bank64.cos_kernels().clone();
        push(
            &format!("{suite}/{COS_KERNELS}"),
            check.run(
                |c| loss(&x64, &DftKernelBank::from_kernels(wide(c), sin64.clone()).expect("same shape"), &fb64),
                bank.cos_kernels(),
                g.param(COS_KERNELS).expect("trainable"),
            )?,
        );
        push(
            &format!("{suite}/{SIN_KERNELS}"),
            check.run(
                |s| loss(&x64, &DftKernelBank::from_kernels(cos64.clone(), wide(s)).expect("same shape"), &fb64),
                bank.sin_kernels(),
                g.param(SIN_KERNELS).expect("trainable"),
            )?,
        );
    }
    Ok(out)
}
