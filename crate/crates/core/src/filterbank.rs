//! Frequency-conversion matrices: triangular filters with centers equally
//! spaced on the mel (HTK formula), log2 or linear scale, or a seeded random
//! non-negative initialisation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Shape, Tensor};

/// Lower frequency bound for the log scale when `fmin` is below it.
pub const LOG_SCALE_FLOOR_HZ: f64 = 27.5;

pub fn hz_to_mel(f: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::domain(format!("frequency must be non-negative, got {f}")));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64) -> Result<f64> {
    if !(m >= 0.0) {
        return Err(Error::domain(format!("mel value must be non-negative, got {m}")));
    }
    Ok(700.0 * (10f64.powf(m / 2595.0) - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scale {
    #[default]
    Mel,
    Log,
    Linear,
    Random,
    /// Weights supplied by the caller, e.g. after training.
    Custom,
}

impl Scale {
    pub fn is_triangular(self) -> bool {
        matches!(self, Scale::Mel | Scale::Log | Scale::Linear)
    }

    fn forward(self, f: f64) -> f64 {
        match self {
            Scale::Mel => 2595.0 * (1.0 + f / 700.0).log10(),
            Scale::Log => f.log2(),
            _ => f,
        }
    }

    fn inverse(self, v: f64) -> f64 {
        match self {
            Scale::Mel => 700.0 * (10f64.powf(v / 2595.0) - 1.0),
            Scale::Log => v.exp2(),
            _ => v,
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mel" => Ok(Scale::Mel),
            "log" => Ok(Scale::Log),
            "linear" => Ok(Scale::Linear),
            "random" => Ok(Scale::Random),
            other => Err(Error::config(format!("unknown filterbank scale '{other}'"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Mel => "mel",
            Scale::Log => "log",
            Scale::Linear => "linear",
            Scale::Random => "random",
            Scale::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterNorm {
    /// Every triangle peaks at 1.0.
    #[default]
    Peak,
    /// Triangles scaled to unit area in Hz.
    Area,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterbankWarning {
    /// More filters than frequency bins.
    MoreFiltersThanBins { n_mels: usize, n_bins: usize },
    /// Triangles narrower than the bin spacing were widened to one bin.
    WidenedFilters { count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankConfig {
    pub scale: Scale,
    pub n_mels: usize,
    pub n_bins: usize,
    pub sample_rate: u32,
    pub fmin: f64,
    /// Defaults to the Nyquist frequency.
    pub fmax: Option<f64>,
    pub seed: Option<u64>,
    pub norm: FilterNorm,
}

impl FilterbankConfig {
    pub fn new(scale: Scale, n_mels: usize, n_bins: usize, sample_rate: u32) -> Self {
        FilterbankConfig {
            scale,
            n_mels,
            n_bins,
            sample_rate,
            fmin: 0.0,
            fmax: None,
            seed: None,
            norm: FilterNorm::Peak,
        }
    }

    pub fn fmax(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be at least 1"));
        }
        if self.n_bins < 2 {
            return Err(Error::config("n_bins must be at least 2"));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let fmax = self.fmax();
        if !(self.fmin >= 0.0) {
            return Err(Error::config(format!("fmin must be >= 0, got {}", self.fmin)));
        }
        if fmax > nyquist {
            return Err(Error::config(format!("fmax {fmax} exceeds sample_rate/2 = {nyquist}")));
        }
        if !(self.fmin < fmax) {
            return Err(Error::config(format!("fmin {} must be below fmax {fmax}", self.fmin)));
        }
        if self.scale == Scale::Log && fmax <= self.fmin.max(LOG_SCALE_FLOOR_HZ) {
            return Err(Error::config(format!(
                "log scale needs fmax above {} Hz",
                self.fmin.max(LOG_SCALE_FLOOR_HZ)
            )));
        }
        if self.scale == Scale::Custom {
            return Err(Error::config("custom filterbanks are built with Filterbank::from_weights"));
        }
        Ok(())
    }
}

/// `[n_mels, n_bins]` conversion matrix from linear-frequency bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank<T = f32> {
    weights: Tensor<T>,
    scale: Scale,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
    centers_hz: Vec<f64>,
    warnings: Vec<FilterbankWarning>,
}

impl<T: Scalar> Filterbank<T> {
    pub fn from_weights(weights: Tensor<T>, sample_rate: u32) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::domain("filterbank weights must be a matrix"));
        }
        Ok(Filterbank {
            weights,
            scale: Scale::Custom,
            sample_rate,
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
            centers_hz: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn n_mels(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn n_bins(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frequency_range(&self) -> (f64, f64) {
        (self.fmin, self.fmax)
    }

    /// Center frequency of each triangle; empty for random or custom weights.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn warnings(&self) -> &[FilterbankWarning] {
        &self.warnings
    }
}

pub fn build_filterbank<T: Scalar>(cfg: &FilterbankConfig) -> Result<Filterbank<T>> {
    cfg.validate()?;
    let (n_mels, n_bins) = (cfg.n_mels, cfg.n_bins);
    let fmax = cfg.fmax();
    let mut warnings = Vec::new();
    if n_mels > n_bins {
        warnings.push(FilterbankWarning::MoreFiltersThanBins { n_mels, n_bins });
    }
    let shape = Shape::new(&[n_mels, n_bins])?;

    if cfg.scale == Scale::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(0));
        let mut data = Vec::with_capacity(n_mels * n_bins);
        for _ in 0..n_mels {
            let row: Vec<f64> = (0..n_bins).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = row.iter().sum();
            let total = if total > 0.0 { total } else { 1.0 };
            data.extend(row.into_iter().map(|v| T::from_f64(v / total)));
        }
        return Ok(Filterbank {
            weights: Tensor::from_parts(shape, data),
            scale: Scale::Random,
            sample_rate: cfg.sample_rate,
            fmin: cfg.fmin,
            fmax,
            centers_hz: Vec::new(),
            warnings,
        });
    }

    let low = if cfg.scale == Scale::Log { cfg.fmin.max(LOG_SCALE_FLOOR_HZ) } else { cfg.fmin };
    let (lo, hi) = (cfg.scale.forward(low), cfg.scale.forward(fmax));
    let step = (hi - lo) / (n_mels + 1) as f64;
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| cfg.scale.inverse(lo + step * i as f64))
        .collect();

    let n_dft = 2 * (n_bins - 1);
    let bin_hz = cfg.sample_rate as f64 / n_dft as f64;
    let mut widened = 0;
    let mut data = Vec::with_capacity(n_mels * n_bins);
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        // a triangle narrower than one bin could miss every bin center
        let rise = (center - left).max(bin_hz);
        let fall = (right - center).max(bin_hz);
        if rise > center - left || fall > right - center {
            widened += 1;
        }
        let gain = match cfg.norm {
            FilterNorm::Peak => 1.0,
            FilterNorm::Area => 2.0 / (rise + fall),
        };
        data.extend((0..n_bins).map(|k| {
            let f = k as f64 * bin_hz;
            let w = if f <= center { 1.0 - (center - f) / rise } else { 1.0 - (f - center) / fall };
            T::from_f64(w.max(0.0) * gain)
        }));
    }
    if widened > 0 {
        warnings.push(FilterbankWarning::WidenedFilters { count: widened });
    }
    Ok(Filterbank {
        weights: Tensor::from_parts(shape, data),
        scale: cfg.scale,
        sample_rate: cfg.sample_rate,
        fmin: cfg.fmin,
        fmax,
        centers_hz: edges[1..=n_mels].to_vec(),
        warnings,
    })
}

/// Projects `[channels, n_bins, n_frames]` to `[channels, n_mels, n_frames]`.
pub fn apply_filterbank<T: Scalar>(fb: &Filterbank<T>, power_spec: &Tensor<T>) -> Result<Tensor<T>> {
    if power_spec.rank() != 3 {
        return Err(Error::domain(format!(
            "expected [channels, n_bins, n_frames], got {}",
            power_spec.shape()
        )));
    }
    if power_spec.dims()[1] != fb.n_bins() {
        return Err(Error::domain(format!(
            "filterbank has {} bins, spectrogram has {}",
            fb.n_bins(),
            power_spec.dims()[1]
        )));
    }
    let channels = power_spec.dims()[0];
    let per_channel = (0..channels)
        .map(|c| matmul(&fb.weights, &power_spec.slice_outer(c)?))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&per_channel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mel_formula() {
        assert_eq!(hz_to_mel(0.0).unwrap(), 0.0);
        let direct = 2595.0 * 2f64.log10();
        assert!((hz_to_mel(700.0).unwrap() - direct).abs() < 1e-9);
        for f in [100.0, 1000.0, 8000.0] {
            let back = mel_to_hz(hz_to_mel(f).unwrap()).unwrap();
            assert!((back - f).abs() <= 1e-9 * f);
        }
        assert!(hz_to_mel(-1.0).is_err());
        assert!(mel_to_hz(-1.0).is_err());
    }

    #[test]
    fn single_linear_triangle() {
        let sr = 16000;
        let fb = build_filterbank::<f64>(&FilterbankConfig::new(Scale::Linear, 1, 257, sr)).unwrap();
        // oracle: triangle over [0, 8000] peaking at 4000 Hz, bins every 31.25 Hz
        let peak_bin = (4000.0f64 / 31.25).round() as usize;
        let row = fb.weights().data();
        assert_eq!(row[peak_bin], 1.0);
        for (k, &w) in row.iter().enumerate() {
            let f = k as f64 * 31.25;
            let expect = if f <= 4000.0 { f / 4000.0 } else { (8000.0 - f) / 4000.0 };
            assert!((w - expect.max(0.0)).abs() < 1e-12);
        }
        assert_eq!(fb.centers_hz(), &[4000.0]);
    }

    #[test]
    fn mel_128_by_257() {
        let fb = build_filterbank::<f32>(&FilterbankConfig::new(Scale::Mel, 128, 257, 44100)).unwrap();
        assert_eq!(fb.weights().dims(), &[128, 257]);
        let mut last_peak = 0;
        for m in 0..128 {
            let row = &fb.weights().data()[m * 257..(m + 1) * 257];
            assert!(row.iter().sum::<f32>() > 0.0, "row {m} is empty");
            let peak = row
                .iter()
                .enumerate()
                .fold((0, -1.0f32), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            assert!(peak >= last_peak);
            last_peak = peak;
        }
        assert!(fb.centers_hz().windows(2).all(|w| w[0] < w[1]));
        assert!(fb
            .warnings()
            .iter()
            .any(|w| matches!(w, FilterbankWarning::WidenedFilters { .. })));
    }

    #[test]
    fn random_is_seeded() {
        let mut cfg = FilterbankConfig::new(Scale::Random, 10, 33, 8000);
        cfg.seed = Some(42);
        let a = build_filterbank::<f32>(&cfg).unwrap();
        let b = build_filterbank::<f32>(&cfg).unwrap();
        assert_eq!(a, b);
        for row in a.weights().data().chunks(33) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&v| (0.0..1.0).contains(&v)));
        }
        cfg.seed = Some(43);
        assert_ne!(build_filterbank::<f32>(&cfg).unwrap(), a);
    }

    #[test]
    fn config_errors_and_warnings() {
        let mut cfg = FilterbankConfig::new(Scale::Mel, 40, 257, 16000);
        cfg.fmax = Some(8001.0);
        assert!(matches!(build_filterbank::<f32>(&cfg), Err(Error::Config(_))));
        cfg.fmax = Some(100.0);
        cfg.fmin = 200.0;
        assert!(build_filterbank::<f32>(&cfg).is_err());
        let mut cfg = FilterbankConfig::new(Scale::Log, 4, 257, 16000);
        cfg.fmax = Some(20.0);
        assert!(build_filterbank::<f32>(&cfg).is_err());
        let cfg = FilterbankConfig::new(Scale::Linear, 40, 17, 16000);
        let fb = build_filterbank::<f32>(&cfg).unwrap();
        assert!(fb
            .warnings()
            .contains(&FilterbankWarning::MoreFiltersThanBins { n_mels: 40, n_bins: 17 }));
    }

    #[test]
    fn log_centers_are_geometric() {
        let fb = build_filterbank::<f64>(&FilterbankConfig::new(Scale::Log, 12, 513, 32000)).unwrap();
        let c = fb.centers_hz();
        let ratios: Vec<f64> = c.windows(2).map(|w| w[1] / w[0]).collect();
        assert!(ratios.windows(2).all(|r| (r[0] - r[1]).abs() < 1e-9));
        assert!(c[0] > LOG_SCALE_FLOOR_HZ);
    }

    #[test]
    fn area_norm_scales_rows() {
        let mut cfg = FilterbankConfig::new(Scale::Linear, 3, 129, 8000);
        let peak = build_filterbank::<f64>(&cfg).unwrap();
        cfg.norm = FilterNorm::Area;
        let area = build_filterbank::<f64>(&cfg).unwrap();
        // width of each triangle is 2 * 1000 Hz, so area gain is 1/1000
        assert!(peak.weights().data().iter().zip(area.weights().data()).all(|(p, a)| (p / 1000.0 - a).abs() < 1e-15));
    }

    #[test]
    fn apply_examples() {
        let spec = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64).unwrap();
        let id = Filterbank::from_weights(Tensor::identity(3).unwrap(), 8000).unwrap();
        assert_eq!(apply_filterbank(&id, &spec).unwrap(), spec);
        let ones = Filterbank::from_weights(Tensor::ones(&[1, 3]).unwrap(), 8000).unwrap();
        let out = apply_filterbank(&ones, &spec).unwrap();
        assert_eq!(out.dims(), &[2, 1, 4]);
        for c in 0..2 {
            for t in 0..4 {
                let e: f64 = (0..3).map(|k| spec.get(&[c, k, t]).unwrap()).sum();
                assert_eq!(out.get(&[c, 0, t]).unwrap(), e);
            }
        }
        let bad = Tensor::<f64>::zeros(&[2, 4, 4]).unwrap();
        assert!(matches!(apply_filterbank(&id, &bad), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn triangular_invariants(
            scale in prop_oneof![Just(Scale::Mel), Just(Scale::Log), Just(Scale::Linear)],
            n_mels in 1usize..48,
            log_n in 5u32..11,
            sr in prop_oneof![Just(8000u32), Just(16000), Just(22050), Just(44100)],
            fmin_frac in 0.0f64..0.3,
            fmax_frac in 0.5f64..=1.0,
        ) {
            let n_bins = (1usize << log_n) / 2 + 1;
            let nyq = sr as f64 / 2.0;
            let mut cfg = FilterbankConfig::new(scale, n_mels, n_bins, sr);
            cfg.fmin = fmin_frac * nyq;
            cfg.fmax = Some(fmax_frac * nyq);
            let fb = build_filterbank::<f64>(&cfg).unwrap();
            let w = fb.weights();
            let bin_hz = sr as f64 / (2 * (n_bins - 1)) as f64;
            for row in w.data().chunks(n_bins) {
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!(row.iter().any(|&v| v > 0.0));
                let first = row.iter().position(|&v| v > 0.0).unwrap();
                let last = row.iter().rposition(|&v| v > 0.0).unwrap();
                prop_assert!(row[first..=last].iter().all(|&v| v > 0.0), "support is not contiguous");
            }
            // no coverage gaps strictly inside the frequency range
            let low = if scale == Scale::Log { cfg.fmin.max(LOG_SCALE_FLOOR_HZ) } else { cfg.fmin };
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                if f > low && f < cfg.fmax() {
                    let col: f64 = (0..n_mels).map(|m| w.data()[m * n_bins + k]).sum();
                    prop_assert!(col > 0.0, "bin {} at {} Hz uncovered", k, f);
                }
            }
            let centers = fb.centers_hz();
            prop_assert!(centers.windows(2).all(|p| p[0] < p[1]));
            if n_mels >= 3 {
                let mapped: Vec<f64> = match scale {
                    Scale::Mel => centers.iter().map(|&c| hz_to_mel(c).unwrap()).collect(),
                    Scale::Log => centers.iter().map(|c| c.log2()).collect(),
                    _ => centers.to_vec(),
                };
                let step = mapped[1] - mapped[0];
                let unit = match scale { Scale::Linear => bin_hz, _ => step };
                for p in mapped.windows(2) {
                    prop_assert!(((p[1] - p[0]) - step).abs() <= 0.5 * unit);
                }
            }
        }

        #[test]
        fn apply_is_linear_and_nonnegative(seed in any::<u64>(), a in 0.0f64..3.0, b in 0.0f64..3.0) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fb = build_filterbank::<f64>(&FilterbankConfig::new(Scale::Mel, 6, 33, 16000)).unwrap();
            let x = Tensor::<f64>::from_fn(&[2, 33, 5], |_| rng.gen()).unwrap();
            let y = Tensor::<f64>::from_fn(&[2, 33, 5], |_| rng.gen()).unwrap();
            let mix = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
            let lhs = apply_filterbank(&fb, &mix).unwrap();
            let rhs = apply_filterbank(&fb, &x).unwrap()
                .zip_map(&apply_filterbank(&fb, &y).unwrap(), |p, q| a * p + b * q).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
            prop_assert!(lhs.data().iter().all(|&v| v >= 0.0));
        }
    }
}
