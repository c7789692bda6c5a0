//! Analytic backward passes for the trainable parts of the preprocessing
//! chain (DFT kernels, filterbank weights) and a central finite-difference
//! checker to verify them.
//!
//! The forward chain these gradients follow is
//! `stft -> power -> filterbank -> decibel`, matching
//! [`melspectrogram`](crate::time_frequency::melspectrogram).

use std::collections::BTreeMap;
use std::f64::consts::LN_10;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filterbank::{apply_filterbank, Filterbank};
use crate::tensor::{matmul, Scalar, Shape, Tensor};
use crate::time_frequency::{power_spectrogram, stft_conv, DecibelScale, DftKernelBank, StftConfig};

pub const COS_KERNELS: &str = "cos_kernels";
pub const SIN_KERNELS: &str = "sin_kernels";
pub const FILTERBANK_WEIGHTS: &str = "filterbank_weights";

/// Which parameters receive gradients. Disabled parameters are skipped
/// entirely and do not appear in [`GradResult::d_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Trainable {
    pub kernel: bool,
    pub filterbank: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable { kernel: true, filterbank: true };
    pub const NONE: Trainable = Trainable { kernel: false, filterbank: false };
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradResult<T = f32> {
    /// Gradient with respect to the forward input.
    pub d_input: Tensor<T>,
    pub d_params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> GradResult<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.d_params.get(name)
    }
}

fn to_tensor<T: Scalar>(dims: &[usize], data: Vec<f64>) -> Result<Tensor<T>> {
    let shape = Shape::new(dims)?;
    Ok(Tensor::from_parts(shape, data.into_iter().map(T::from_f64).collect()))
}

/// Backward pass of [`stft_conv`] given upstream gradients of the real and
/// imaginary outputs.
pub fn stft_backward<T: Scalar>(
    audio: &Tensor<T>,
    bank: &DftKernelBank<T>,
    cfg: &StftConfig,
    d_real: &Tensor<T>,
    d_imag: &Tensor<T>,
    trainable_kernel: bool,
) -> Result<GradResult<T>> {
    if audio.rank() != 2 {
        return Err(Error::domain("audio must be [channels, samples]"));
    }
    let (channels, samples) = (audio.dims()[0], audio.dims()[1]);
    let n = cfg.n_dft;
    if bank.n_dft() != n {
        return Err(Error::domain("kernel bank length does not match n_dft"));
    }
    let frames = cfg
        .n_frames(samples)
        .ok_or_else(|| Error::domain("audio shorter than n_dft"))?;
    let bins = bank.n_bins();
    let expect = [channels, bins, frames];
    if d_real.dims() != expect || d_imag.dims() != expect {
        return Err(Error::domain(format!(
            "upstream gradients must be {expect:?}, got {} and {}",
            d_real.shape(),
            d_imag.shape()
        )));
    }
    let x = audio.data();
    let cos = bank.cos_kernels().data();
    let sin = bank.sin_kernels().data();
    let (gr, gi) = (d_real.data(), d_imag.data());
    let mut d_cos = vec![0.0f64; if trainable_kernel { bins * n } else { 0 }];
    let mut d_sin = vec![0.0f64; d_cos.len()];
    let mut d_x = vec![0.0f64; channels * samples];
    for c in 0..channels {
        for t in 0..frames {
            let start = c * samples + t * cfg.n_hop;
            for k in 0..bins {
                let g_re = gr[(c * bins + k) * frames + t].as_f64();
                // imag = -conv(x, sin), so the sine branch carries a minus sign
                let g_im = -gi[(c * bins + k) * frames + t].as_f64();
                if g_re == 0.0 && g_im == 0.0 {
                    continue;
                }
                let frame = &x[start..start + n];
                if trainable_kernel {
                    let row = k * n;
                    for (i, &xv) in frame.iter().enumerate() {
                        let xv = xv.as_f64();
                        d_cos[row + i] += g_re * xv;
                        d_sin[row + i] += g_im * xv;
                    }
                }
                let dx = &mut d_x[start..start + n];
                for (i, d) in dx.iter_mut().enumerate() {
                    *d += g_re * cos[k * n + i].as_f64() + g_im * sin[k * n + i].as_f64();
                }
            }
        }
    }
    let mut d_params = BTreeMap::new();
    if trainable_kernel {
        d_params.insert(COS_KERNELS.to_string(), to_tensor(&[bins, n], d_cos)?);
        d_params.insert(SIN_KERNELS.to_string(), to_tensor(&[bins, n], d_sin)?);
    }
    Ok(GradResult { d_input: to_tensor(&[channels, samples], d_x)?, d_params })
}

/// Backward pass of [`power_spectrogram`]. Only exponent 2 is supported.
pub fn power_backward<T: Scalar>(
    real: &Tensor<T>,
    imag: &Tensor<T>,
    upstream: &Tensor<T>,
    exponent: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if exponent != 2.0 {
        return Err(Error::Unimplemented(format!(
            "power spectrogram gradient for exponent {exponent} (only 2.0 is supported)"
        )));
    }
    if real.shape() != imag.shape() || real.shape() != upstream.shape() {
        return Err(Error::domain("power_backward operands must share a shape"));
    }
    let two = T::from_f64(2.0);
    Ok((
        real.zip_map(upstream, |r, g| two * r * g)?,
        imag.zip_map(upstream, |i, g| two * i * g)?,
    ))
}

/// Backward pass of [`apply_filterbank`].
pub fn filterbank_backward<T: Scalar>(
    fb: &Filterbank<T>,
    power_spec: &Tensor<T>,
    upstream: &Tensor<T>,
    trainable_fb: bool,
) -> Result<GradResult<T>> {
    if power_spec.rank() != 3 || power_spec.dims()[1] != fb.n_bins() {
        return Err(Error::domain(format!(
            "spectrogram {} does not match a filterbank with {} bins",
            power_spec.shape(),
            fb.n_bins()
        )));
    }
    let (channels, bins, frames) = (power_spec.dims()[0], power_spec.dims()[1], power_spec.dims()[2]);
    let mels = fb.n_mels();
    if upstream.dims() != [channels, mels, frames] {
        return Err(Error::domain(format!(
            "upstream must be [{channels}, {mels}, {frames}], got {}",
            upstream.shape()
        )));
    }
    let w = fb.weights().data();
    let (p, g) = (power_spec.data(), upstream.data());
    let mut d_w = vec![0.0f64; if trainable_fb { mels * bins } else { 0 }];
    let mut d_p = vec![0.0f64; channels * bins * frames];
    for c in 0..channels {
        for m in 0..mels {
            let grow = &g[(c * mels + m) * frames..(c * mels + m + 1) * frames];
            for k in 0..bins {
                let prow = &p[(c * bins + k) * frames..(c * bins + k + 1) * frames];
                if trainable_fb {
                    d_w[m * bins + k] += grow.iter().zip(prow).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>();
                }
                let wv = w[m * bins + k].as_f64();
                if wv != 0.0 {
                    let drow = &mut d_p[(c * bins + k) * frames..(c * bins + k + 1) * frames];
                    for (d, gv) in drow.iter_mut().zip(grow) {
                        *d += wv * gv.as_f64();
                    }
                }
            }
        }
    }
    let mut d_params = BTreeMap::new();
    if trainable_fb {
        d_params.insert(FILTERBANK_WEIGHTS.to_string(), to_tensor(&[mels, bins], d_w)?);
    }
    Ok(GradResult { d_input: to_tensor(&[channels, bins, frames], d_p)?, d_params })
}

impl DecibelScale {
    /// Gradient of [`DecibelScale::apply`] with respect to its input.
    ///
    /// Elements below `amin` or clamped to the dynamic-range floor receive
    /// zero gradient. The floor itself moves with the maximum, so the
    /// upstream of clamped elements is credited to the (first) maximal
    /// element.
    pub fn backward<T: Scalar>(&self, t: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        if t.shape() != upstream.shape() {
            return Err(Error::domain("decibel_backward operands must share a shape"));
        }
        let (db, floor) = self.raw(t)?;
        let top = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let argmax = db.iter().position(|&d| d == top).unwrap_or(0);
        let slope = |v: f64| 10.0 / (LN_10 * v);
        let mut out = vec![0.0f64; t.len()];
        let mut routed = 0.0;
        for (i, (&v, &g)) in t.data().iter().zip(upstream.data()).enumerate() {
            let (v, g) = (v.as_f64(), g.as_f64());
            if db[i] < floor {
                routed += g;
            } else if v >= self.amin {
                out[i] = g * slope(v);
            }
        }
        let vmax = t.data()[argmax].as_f64();
        if routed != 0.0 && vmax >= self.amin {
            out[argmax] += routed * slope(vmax);
        }
        to_tensor(t.dims(), out)
    }
}

/// Gradient of [`amplitude_to_decibel`](crate::time_frequency::amplitude_to_decibel).
pub fn decibel_backward<T: Scalar>(t: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    DecibelScale::default().backward(t, upstream)
}

fn pipeline_backward<T: Scalar>(
    audio: &Tensor<T>,
    bank: &DftKernelBank<T>,
    fb: Option<&Filterbank<T>>,
    cfg: &StftConfig,
    upstream: &Tensor<T>,
    trainable: Trainable,
) -> Result<GradResult<T>> {
    let (re, im) = stft_conv(audio, bank, cfg)?;
    let power = power_spectrogram(&re, &im, cfg.power_exponent)?;
    let projected = match fb {
        Some(fb) => Some(apply_filterbank(fb, &power)?),
        None => None,
    };
    let pre_db = projected.as_ref().unwrap_or(&power);
    if upstream.shape() != pre_db.shape() {
        return Err(Error::domain(format!(
            "upstream gradient {} does not match output {}",
            upstream.shape(),
            pre_db.shape()
        )));
    }
    let mut g = if cfg.return_decibel {
        decibel_backward(pre_db, upstream)?
    } else {
        upstream.clone()
    };
    let mut d_params = BTreeMap::new();
    if let Some(fb) = fb {
        let fg = filterbank_backward(fb, &power, &g, trainable.filterbank)?;
        d_params.extend(fg.d_params);
        g = fg.d_input;
    }
    let (g_re, g_im) = power_backward(&re, &im, &g, cfg.power_exponent)?;
    let sg = stft_backward(audio, bank, cfg, &g_re, &g_im, trainable.kernel)?;
    d_params.extend(sg.d_params);
    Ok(GradResult { d_input: sg.d_input, d_params })
}

/// Gradients of [`spectrogram`](crate::time_frequency::spectrogram).
pub fn spectrogram_backward<T: Scalar>(
    audio: &Tensor<T>,
    bank: &DftKernelBank<T>,
    cfg: &StftConfig,
    upstream: &Tensor<T>,
    trainable: Trainable,
) -> Result<GradResult<T>> {
    pipeline_backward(audio, bank, None, cfg, upstream, trainable)
}

/// Gradients of [`melspectrogram`](crate::time_frequency::melspectrogram)
/// for the audio, the kernel bank and the filterbank weights.
pub fn melspectrogram_backward<T: Scalar>(
    audio: &Tensor<T>,
    bank: &DftKernelBank<T>,
    fb: &Filterbank<T>,
    cfg: &StftConfig,
    upstream: &Tensor<T>,
    trainable: Trainable,
) -> Result<GradResult<T>> {
    pipeline_backward(audio, bank, Some(fb), cfg, upstream, trainable)
}

/// Step factor for central differences: `h = factor * max(1, |x|)`.
pub fn default_step<T: Scalar>() -> f64 {
    match T::DTYPE {
        crate::tensor::DType::F32 => 1e-3,
        crate::tensor::DType::F64 => 1e-6,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// Largest relative error over the probed coordinates.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the coordinate with the largest relative error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Set when the forward function returned a non-finite value.
    pub failure: Option<String>,
}

impl FdReport {
    pub fn passed(&self, threshold: f64) -> bool {
        self.failure.is_none() && self.max_rel_err < threshold
    }
}

/// Central finite-difference gradient check.
///
/// Coordinate `i` is probed with `h = step * max(1, |x_i|)`. Tensors with
/// more than `max_coords` elements are checked on a seeded random subset.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, s)` where
/// `s = 1e-3 * max|a|` over the probed coordinates, so entries that are tiny
/// compared to the gradient as a whole are judged against its scale.
#[derive(Debug, Clone)]
pub struct FdCheck {
    pub step: f64,
    pub max_coords: usize,
    pub seed: u64,
}

impl FdCheck {
    pub fn new(step: f64) -> Self {
        FdCheck { step, max_coords: 512, seed: 0 }
    }

    pub fn max_coords(mut self, n: usize) -> Self {
        self.max_coords = n.max(64);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn run<T: Scalar, F>(&self, forward: F, at: &Tensor<T>, analytic: &Tensor<T>) -> Result<FdReport>
    where
        F: Fn(&Tensor<T>) -> f64,
    {
        if !(self.step > 0.0) {
            return Err(Error::domain("finite-difference step must be positive"));
        }
        if at.shape() != analytic.shape() {
            return Err(Error::domain(format!(
                "analytic gradient {} does not match point {}",
                analytic.shape(),
                at.shape()
            )));
        }
        let coords: Vec<usize> = if at.len() <= self.max_coords {
            (0..at.len()).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let mut picked = sample(&mut rng, at.len(), self.max_coords).into_vec();
            picked.sort_unstable();
            picked
        };

        let mut numeric = Vec::with_capacity(coords.len());
        let mut probe = at.clone();
        for &i in &coords {
            let x = at.data()[i];
            let h = T::from_f64(self.step * x.as_f64().abs().max(1.0));
            let (hi, lo) = (x + h, x - h);
            probe.data_mut()[i] = hi;
            let f_hi = forward(&probe);
            probe.data_mut()[i] = lo;
            let f_lo = forward(&probe);
            probe.data_mut()[i] = x;
            if !f_hi.is_finite() || !f_lo.is_finite() {
                return Ok(FdReport {
                    max_rel_err: f64::INFINITY,
                    max_abs_err: f64::INFINITY,
                    worst_index: Some(i),
                    checked: numeric.len(),
                    failure: Some(format!("forward returned a non-finite value probing index {i}")),
                });
            }
            // divide by the step actually representable in T
            numeric.push((f_hi - f_lo) / (hi.as_f64() - lo.as_f64()));
        }

        let scale = coords
            .iter()
            .map(|&i| analytic.data()[i].as_f64().abs())
            .fold(0.0, f64::max)
            * 1e-3;
        let mut report = FdReport {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst_index: None,
            checked: coords.len(),
            failure: None,
        };
        for (&i, &n) in coords.iter().zip(&numeric) {
            let a = analytic.data()[i].as_f64();
            let abs = (a - n).abs();
            let denom = a.abs().max(n.abs()).max(scale);
            let rel = if abs == 0.0 { 0.0 } else { abs / denom };
            report.max_abs_err = report.max_abs_err.max(abs);
            if report.worst_index.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_index = Some(i);
            }
        }
        Ok(report)
    }
}

/// [`FdCheck`] with its default coordinate budget and seed.
pub fn finite_difference_check<T: Scalar, F>(
    forward: F,
    at: &Tensor<T>,
    analytic: &Tensor<T>,
    step: f64,
) -> Result<FdReport>
where
    F: Fn(&Tensor<T>) -> f64,
{
    FdCheck::new(step).run(forward, at, analytic)
}

/// Weighted-sum loss `sum(w * y)`, whose gradient with respect to `y` is `w`.
pub fn weighted_sum<T: Scalar>(y: &Tensor<T>, w: &Tensor<T>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a.as_f64() * b.as_f64()).sum()
}

/// `W^T . upstream` per channel; exposed for callers that project
/// gradients through a fixed filterbank without needing parameter grads.
pub fn filterbank_input_grad<T: Scalar>(fb: &Filterbank<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.rank() != 3 || upstream.dims()[1] != fb.n_mels() {
        return Err(Error::domain("upstream must be [channels, n_mels, n_frames]"));
    }
    let wt = transpose(fb.weights());
    let parts = (0..upstream.dims()[0])
        .map(|c| matmul(&wt, &upstream.slice_outer(c)?))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&parts)
}

fn transpose<T: Scalar>(m: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (m.dims()[0], m.dims()[1]);
    let data = (0..r * c).map(|i| m.data()[(i % r) * c + i / r]).collect();
    Tensor::from_parts(Shape::new(&[c, r]).expect("valid transpose"), data)
}
