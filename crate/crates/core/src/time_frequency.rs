//! Short-time Fourier transform computed as two strided 1-D convolutions
//! against windowed cosine and sine kernel banks, plus power and decibel
//! scaling and the mel-spectrogram composition.
//!
//! Frames are taken in valid mode only: a signal of `N` samples yields
//! `(N - n_dft) / n_hop + 1` frames, with no centering or padding. The
//! spectrum is one-sided, `n_dft / 2 + 1` bins.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::filterbank::{apply_filterbank, Filterbank};
use crate::tensor::{conv1d_valid_into, Scalar, Shape, Tensor};

/// Floor applied before taking the logarithm in decibel scaling.
pub const AMIN: f64 = 1e-10;
/// Decibel outputs are clamped to `[max - DYNAMIC_RANGE_DB, max]`.
pub const DYNAMIC_RANGE_DB: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hann" => Ok(Window::Hann),
            "rectangular" | "rect" | "boxcar" => Ok(Window::Rectangular),
            other => Err(Error::config(format!("unknown window '{other}'"))),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    /// Window length in samples; a power of two.
    pub n_dft: usize,
    pub n_hop: usize,
    pub sample_rate: u32,
    pub window: Window,
    pub return_decibel: bool,
    /// 2.0 gives a power spectrogram, 1.0 a magnitude spectrogram.
    pub power_exponent: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            n_dft: 512,
            n_hop: 256,
            sample_rate: 22050,
            window: Window::Hann,
            return_decibel: false,
            power_exponent: 2.0,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_dft < 2 || !self.n_dft.is_power_of_two() {
            return Err(Error::config(format!("n_dft must be a power of two >= 2, got {}", self.n_dft)));
        }
        if self.n_hop == 0 || self.n_hop > self.n_dft {
            return Err(Error::config(format!(
                "n_hop must be in 1..={}, got {}",
                self.n_dft, self.n_hop
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        if !(self.power_exponent >= 1.0 && self.power_exponent.is_finite()) {
            return Err(Error::config(format!(
                "power_exponent must be >= 1, got {}",
                self.power_exponent
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_dft / 2 + 1
    }

    /// Valid-mode frame count, `None` when the signal is shorter than one window.
    pub fn n_frames(&self, samples: usize) -> Option<usize> {
        (samples >= self.n_dft && self.n_hop > 0).then(|| (samples - self.n_dft) / self.n_hop + 1)
    }
}

/// Windowed cosine and sine kernels, one row per one-sided frequency bin:
/// `cos[k][n] = w[n] cos(2 pi k n / N)`, `sin[k][n] = w[n] sin(2 pi k n / N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DftKernelBank<T = f32> {
    cos_kernels: Tensor<T>,
    sin_kernels: Tensor<T>,
}

impl<T: Scalar> DftKernelBank<T> {
    /// Wraps externally supplied (for example, trained) kernels.
    pub fn from_kernels(cos_kernels: Tensor<T>, sin_kernels: Tensor<T>) -> Result<Self> {
        if cos_kernels.rank() != 2 || cos_kernels.shape() != sin_kernels.shape() {
            return Err(Error::domain("cosine and sine kernels must be equally shaped matrices"));
        }
        Ok(DftKernelBank { cos_kernels, sin_kernels })
    }

    pub fn cos_kernels(&self) -> &Tensor<T> {
        &self.cos_kernels
    }

    pub fn sin_kernels(&self) -> &Tensor<T> {
        &self.sin_kernels
    }

    pub fn n_bins(&self) -> usize {
        self.cos_kernels.dims()[0]
    }

    pub fn n_dft(&self) -> usize {
        self.cos_kernels.dims()[1]
    }
}

pub fn build_dft_kernels<T: Scalar>(cfg: &StftConfig) -> Result<DftKernelBank<T>> {
    cfg.validate()?;
    let n = cfg.n_dft;
    let bins = cfg.n_bins();
    let w = cfg.window.coefficients(n);
    let mut cos = Vec::with_capacity(bins * n);
    let mut sin = Vec::with_capacity(bins * n);
    for k in 0..bins {
        for (i, &wi) in w.iter().enumerate() {
            // reduce k*n modulo N before scaling to keep the phase exact
            let phase = 2.0 * PI * ((k * i) % n) as f64 / n as f64;
            cos.push(T::from_f64(wi * phase.cos()));
            sin.push(if k == 0 { T::zero() } else { T::from_f64(wi * phase.sin()) });
        }
    }
    let shape = Shape::new(&[bins, n])?;
    Ok(DftKernelBank {
        cos_kernels: Tensor::from_parts(shape.clone(), cos),
        sin_kernels: Tensor::from_parts(shape, sin),
    })
}

/// Real and imaginary STFT parts, each `[channels, n_bins, n_frames]`.
///
/// `real = conv(x, cos)`, `imag = -conv(x, sin)`; channels are independent.
pub fn stft_conv<T: Scalar>(
    audio: &Tensor<T>,
    bank: &DftKernelBank<T>,
    cfg: &StftConfig,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if audio.rank() != 2 {
        return Err(Error::domain(format!(
            "audio must be [channels, samples], got {}",
            audio.shape()
        )));
    }
    if bank.n_dft() != cfg.n_dft {
        return Err(Error::domain(format!(
            "kernel bank length {} does not match n_dft {}",
            bank.n_dft(),
            cfg.n_dft
        )));
    }
    let (channels, samples) = (audio.dims()[0], audio.dims()[1]);
    let n_frames = cfg.n_frames(samples).ok_or_else(|| {
        Error::domain(format!("audio has {samples} samples, fewer than n_dft = {}", cfg.n_dft))
    })?;
    let bins = bank.n_bins();
    let plane = bins * n_frames;
    let mut real = vec![T::zero(); channels * plane];
    let mut imag = vec![T::zero(); channels * plane];
    for c in 0..channels {
        let x = &audio.data()[c * samples..(c + 1) * samples];
        conv1d_valid_into(x, bank.cos_kernels.data(), cfg.n_dft, cfg.n_hop, &mut real[c * plane..(c + 1) * plane])?;
        let im = &mut imag[c * plane..(c + 1) * plane];
        conv1d_valid_into(x, bank.sin_kernels.data(), cfg.n_dft, cfg.n_hop, im)?;
        for v in im.iter_mut() {
            *v = -*v;
        }
    }
    let shape = Shape::new(&[channels, bins, n_frames])?;
    Ok((Tensor::from_parts(shape.clone(), real), Tensor::from_parts(shape, imag)))
}

/// `(real^2 + imag^2)^(exponent / 2)`.
pub fn power_spectrogram<T: Scalar>(real: &Tensor<T>, imag: &Tensor<T>, exponent: f64) -> Result<Tensor<T>> {
    if exponent == 2.0 {
        real.zip_map(imag, |r, i| T::from_f64(r.as_f64() * r.as_f64() + i.as_f64() * i.as_f64()))
    } else {
        let half = exponent / 2.0;
        real.zip_map(imag, |r, i| {
            T::from_f64((r.as_f64() * r.as_f64() + i.as_f64() * i.as_f64()).powf(half))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecibelScale {
    pub amin: f64,
    pub dynamic_range: f64,
}

impl Default for DecibelScale {
    fn default() -> Self {
        DecibelScale { amin: AMIN, dynamic_range: DYNAMIC_RANGE_DB }
    }
}

impl DecibelScale {
    /// Unclamped `10 log10(max(v, amin))` per element, and the clamp floor.
    pub(crate) fn raw<T: Scalar>(&self, t: &Tensor<T>) -> Result<(Vec<f64>, f64)> {
        if let Some(i) = t.data().iter().position(|v| *v < T::zero()) {
            return Err(Error::domain(format!("decibel input is negative at flat index {i}")));
        }
        let db: Vec<f64> = t
            .data()
            .iter()
            .map(|v| 10.0 * v.as_f64().max(self.amin).log10())
            .collect();
        let top = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((db, top - self.dynamic_range))
    }

    /// The whole tensor is treated as one data item: the clamp is relative
    /// to its overall maximum.
    pub fn apply<T: Scalar>(&self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let (db, floor) = self.raw(t)?;
        Ok(Tensor::from_parts(
            t.shape().clone(),
            db.into_iter().map(|d| T::from_f64(d.max(floor))).collect(),
        ))
    }
}

/// Decibel scaling with the default floor and dynamic range.
pub fn amplitude_to_decibel<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    DecibelScale::default().apply(t)
}

/// Power (or magnitude) spectrogram `[channels, n_bins, n_frames]`, decibel
/// scaled when `cfg.return_decibel` is set.
pub fn spectrogram<T: Scalar>(audio: &Tensor<T>, bank: &DftKernelBank<T>, cfg: &StftConfig) -> Result<Tensor<T>> {
    let (re, im) = stft_conv(audio, bank, cfg)?;
    let p = power_spectrogram(&re, &im, cfg.power_exponent)?;
    if cfg.return_decibel {
        amplitude_to_decibel(&p)
    } else {
        Ok(p)
    }
}

/// `fb . power(stft(audio))` per channel, then optional decibel scaling.
pub fn melspectrogram<T: Scalar>(
    audio: &Tensor<T>,
    bank: &DftKernelBank<T>,
    fb: &Filterbank<T>,
    cfg: &StftConfig,
) -> Result<Tensor<T>> {
    if fb.n_bins() != bank.n_bins() {
        return Err(Error::domain(format!(
            "filterbank expects {} bins, kernel bank produces {}",
            fb.n_bins(),
            bank.n_bins()
        )));
    }
    let (re, im) = stft_conv(audio, bank, cfg)?;
    let p = power_spectrogram(&re, &im, cfg.power_exponent)?;
    let mel = apply_filterbank(fb, &p)?;
    if cfg.return_decibel {
        amplitude_to_decibel(&mel)
    } else {
        Ok(mel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::{build_filterbank, FilterbankConfig, Scale};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(n_dft: usize, n_hop: usize, window: Window) -> StftConfig {
        StftConfig { n_dft, n_hop, window, ..StftConfig::default() }
    }

    /// Naive per-frame DFT, one-sided, with the window applied.
    fn naive_dft(frame: &[f64], window: &[f64]) -> Vec<(f64, f64)> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (i, (&x, &w)) in frame.iter().zip(window).enumerate() {
                    let a = 2.0 * PI * (k * i) as f64 / n as f64;
                    re += w * x * a.cos();
                    im -= w * x * a.sin();
                }
                (re, im)
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(cfg(512, 256, Window::Hann).validate().is_ok());
        assert!(matches!(cfg(500, 250, Window::Hann).validate(), Err(Error::Config(_))));
        assert!(cfg(8, 0, Window::Hann).validate().is_err());
        assert!(cfg(8, 9, Window::Hann).validate().is_err());
        let mut c = cfg(8, 4, Window::Hann);
        c.power_exponent = 0.5;
        assert!(c.validate().is_err());
        assert_eq!(c.n_frames(7), None);
        assert_eq!(cfg(512, 256, Window::Hann).n_frames(32000), Some(124));
    }

    #[test]
    fn small_kernel_rows() {
        let bank = build_dft_kernels::<f64>(&cfg(4, 2, Window::Rectangular)).unwrap();
        assert_eq!(bank.cos_kernels().dims(), &[3, 4]);
        assert_eq!(&bank.cos_kernels().data()[0..4], &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(&bank.sin_kernels().data()[0..4], &[0.0; 4]);
        let row1 = &bank.cos_kernels().data()[4..8];
        for (g, e) in row1.iter().zip([1.0, 0.0, -1.0, 0.0]) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn hann_kernels_match_direct_evaluation() {
        let bank = build_dft_kernels::<f32>(&cfg(512, 256, Window::Hann)).unwrap();
        for k in [0usize, 1, 17, 128, 255, 256] {
            for n in 0..512 {
                let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / 512.0).cos();
                let a = 2.0 * PI * (k * n) as f64 / 512.0;
                let c = bank.cos_kernels().get(&[k, n]).unwrap() as f64;
                let s = bank.sin_kernels().get(&[k, n]).unwrap() as f64;
                assert!((c - w * a.cos()).abs() < 1e-6);
                assert!((s - w * a.sin()).abs() < 1e-6);
            }
        }
        assert!(bank.sin_kernels().data()[..512].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(
            build_dft_kernels::<f32>(&cfg(100, 50, Window::Hann)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dc_signal_lands_in_bin_zero() {
        let c = cfg(64, 64, Window::Rectangular);
        let bank = build_dft_kernels::<f64>(&c).unwrap();
        let x = Tensor::<f64>::ones(&[1, 64]).unwrap();
        let (re, im) = stft_conv(&x, &bank, &c).unwrap();
        assert_eq!(re.dims(), &[1, 33, 1]);
        assert!((re.data()[0] - 64.0).abs() < 1e-9);
        assert!(re.data()[1..].iter().all(|v| v.abs() < 1e-9));
        assert!(im.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn cosine_at_bin_eight() {
        let c = cfg(64, 64, Window::Rectangular);
        let bank = build_dft_kernels::<f32>(&c).unwrap();
        let x = Tensor::<f32>::from_fn(&[1, 64], |n| (2.0 * PI * 8.0 * n as f64 / 64.0).cos() as f32).unwrap();
        let (re, im) = stft_conv(&x, &bank, &c).unwrap();
        let mag = power_spectrogram(&re, &im, 1.0).unwrap();
        for k in 0..33 {
            let m = mag.get(&[0, k, 0]).unwrap() as f64;
            if k == 8 {
                assert!((m - 32.0).abs() < 1e-4);
            } else {
                assert!(m < 1e-4, "bin {k} magnitude {m}");
            }
        }
    }

    #[test]
    fn stereo_matches_naive_dft() {
        let c = cfg(16, 4, Window::Hann);
        let bank = build_dft_kernels::<f64>(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::from_fn(&[2, 40], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let (re, im) = stft_conv(&x, &bank, &c).unwrap();
        let w = Window::Hann.coefficients(16);
        for ch in 0..2 {
            for t in 0..7 {
                let frame: Vec<f64> = (0..16).map(|n| x.get(&[ch, t * 4 + n]).unwrap()).collect();
                for (k, (er, ei)) in naive_dft(&frame, &w).into_iter().enumerate() {
                    assert!((re.get(&[ch, k, t]).unwrap() - er).abs() < 1e-12);
                    assert!((im.get(&[ch, k, t]).unwrap() - ei).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn short_audio_is_rejected() {
        let c = cfg(64, 32, Window::Hann);
        let bank = build_dft_kernels::<f32>(&c).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 63]).unwrap();
        assert!(matches!(stft_conv(&x, &bank, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn power_examples() {
        let r = Tensor::<f32>::new(&[1], vec![3.0]).unwrap();
        let i = Tensor::<f32>::new(&[1], vec![4.0]).unwrap();
        assert_eq!(power_spectrogram(&r, &i, 2.0).unwrap().data(), &[25.0]);
        assert_eq!(power_spectrogram(&r, &i, 1.0).unwrap().data(), &[5.0]);
        let z = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        assert_eq!(power_spectrogram(&z, &z, 2.0).unwrap(), z);
        let other = Tensor::<f32>::zeros(&[3, 2]).unwrap();
        assert!(power_spectrogram(&z, &other, 2.0).is_err());
    }

    #[test]
    fn decibel_examples() {
        let t = Tensor::<f64>::new(&[1], vec![1.0]).unwrap();
        assert_eq!(amplitude_to_decibel(&t).unwrap().data(), &[0.0]);
        let t = Tensor::<f64>::new(&[2], vec![100.0, 1.0]).unwrap();
        assert_eq!(amplitude_to_decibel(&t).unwrap().data(), &[20.0, 0.0]);
        let t = Tensor::<f64>::new(&[2], vec![1.0, 1e-12]).unwrap();
        assert_eq!(amplitude_to_decibel(&t).unwrap().data(), &[0.0, -80.0]);
        let t = Tensor::<f64>::new(&[2], vec![1.0, -1e-3]).unwrap();
        assert!(matches!(amplitude_to_decibel(&t), Err(Error::Domain(_))));
    }

    #[test]
    fn identity_filterbank_gives_power_spectrogram() {
        let c = cfg(16, 8, Window::Hann);
        let bank = build_dft_kernels::<f64>(&c).unwrap();
        let fb = Filterbank::from_weights(Tensor::identity(9).unwrap(), c.sample_rate).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::from_fn(&[1, 64], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let mel = melspectrogram(&x, &bank, &fb, &c).unwrap();
        let spec = spectrogram(&x, &bank, &c).unwrap();
        assert!(mel.max_abs_diff(&spec).unwrap() < 1e-12);
    }

    #[test]
    fn silent_audio_gives_zero_mel() {
        let c = StftConfig { sample_rate: 16000, ..StftConfig::default() };
        let bank = build_dft_kernels::<f32>(&c).unwrap();
        let fb = build_filterbank::<f32>(&FilterbankConfig::new(Scale::Mel, 40, c.n_bins(), 16000)).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 2048]).unwrap();
        let mel = melspectrogram(&x, &bank, &fb, &c).unwrap();
        assert_eq!(mel.dims(), &[1, 40, 7]);
        assert!(mel.data().iter().all(|&v| v == 0.0));

        let wrong = build_filterbank::<f32>(&FilterbankConfig::new(Scale::Mel, 40, 129, 16000)).unwrap();
        assert!(matches!(melspectrogram(&x, &bank, &wrong, &c), Err(Error::Domain(_))));
    }
}
