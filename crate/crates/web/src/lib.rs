//! Browser bindings: each export renders an RGBA image for a `<canvas>`.
//!
//! The rendering functions are plain Rust and are exercised natively by the
//! tests; the `#[wasm_bindgen]` wrappers only convert errors.

use std::f64::consts::PI;

use wasm_bindgen::prelude::*;

use audiolayers::audio_io::parse_wav;
use audiolayers::filterbank::{build_filterbank, FilterbankConfig, Scale};
use audiolayers::norm_augment::{additive_noise, normalize2d, NoiseConfig, NormAxis, Phase};
use audiolayers::time_frequency::{build_dft_kernels, melspectrogram, spectrogram, StftConfig};
use audiolayers::Tensor;

const SAMPLE_RATE: u32 = 16_000;

/// RGBA pixels, row-major, top row first.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    min: f32,
    max: f32,
}

#[wasm_bindgen]
impl Image {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Copy of the pixel buffer (a `Uint8Array` in JavaScript).
    #[wasm_bindgen(getter)]
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }

    /// Smallest value in the rendered matrix.
    #[wasm_bindgen(getter)]
    pub fn min(&self) -> f32 {
        self.min
    }

    #[wasm_bindgen(getter)]
    pub fn max(&self) -> f32 {
        self.max
    }
}

// dark blue -> teal -> yellow
const STOPS: [[f32; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colour(v: f32) -> [u8; 4] {
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let t = x - i as f32;
    let mut px = [255u8; 4];
    for c in 0..3 {
        px[c] = (STOPS[i][c] + (STOPS[i + 1][c] - STOPS[i][c]) * t).round() as u8;
    }
    px
}

/// Renders a `[rows, cols]` matrix with row 0 at the bottom, scaled to its
/// own min and max.
fn render(rows: usize, cols: usize, data: &[f32]) -> Image {
    let min = data.iter().copied().fold(f32::INFINITY, f32::min);
    let max = data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if max > min { max - min } else { 1.0 };
    let mut pixels = Vec::with_capacity(rows * cols * 4);
    for r in (0..rows).rev() {
        for c in 0..cols {
            pixels.extend(colour((data[r * cols + c] - min) / span));
        }
    }
    Image { width: cols as u32, height: rows as u32, pixels, min, max }
}

/// Mono test signal of `seconds` at 16 kHz: `tone`, `chirp` or `noise`.
fn synth(kind: &str, freq: f64, seconds: f64, seed: u32) -> Result<Tensor<f32>, String> {
    if !(seconds > 0.0 && seconds <= 10.0) {
        return Err(format!("duration must be in (0, 10] s, got {seconds}"));
    }
    let sr = SAMPLE_RATE as f64;
    let n = (seconds * sr) as usize;
    let nyquist = sr / 2.0;
    let mut state = u64::from(seed).wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = || {
        // xorshift is plenty for a picture of white noise
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let samples: Vec<f32> = match kind {
        "tone" => {
            if !(freq > 0.0 && freq < nyquist) {
                return Err(format!("tone frequency must be in (0, {nyquist}) Hz"));
            }
            (0..n).map(|i| (0.5 * (2.0 * PI * freq * i as f64 / sr).sin()) as f32).collect()
        }
        "chirp" => {
            // linear sweep from 50 Hz up to `freq`
            let top = freq.clamp(100.0, nyquist * 0.95);
            let rate = (top - 50.0) / seconds;
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    (0.5 * (2.0 * PI * (50.0 * t + 0.5 * rate * t * t)).sin()) as f32
                })
                .collect()
        }
        "noise" => (0..n).map(|_| (0.3 * next()) as f32).collect(),
        other => return Err(format!("unknown signal '{other}'")),
    };
    Tensor::new(&[1, n], samples).map_err(|e| e.to_string())
}

fn stft_config(n_dft: usize, sample_rate: u32) -> StftConfig {
    StftConfig { n_dft, n_hop: n_dft / 4, sample_rate, return_decibel: true, ..StftConfig::default() }
}

fn mel_of(audio: &Tensor<f32>, sample_rate: u32, n_dft: usize, n_mels: usize, scale: &str) -> Result<Tensor<f32>, String> {
    let cfg = stft_config(n_dft, sample_rate);
    cfg.validate().map_err(|e| e.to_string())?;
    let scale: Scale = scale.parse().map_err(|e: audiolayers::Error| e.to_string())?;
    let fb = build_filterbank::<f32>(&FilterbankConfig::new(scale, n_mels, cfg.n_bins(), sample_rate))
        .map_err(|e| e.to_string())?;
    let bank = build_dft_kernels::<f32>(&cfg).map_err(|e| e.to_string())?;
    melspectrogram(audio, &bank, &fb, &cfg).map_err(|e| e.to_string())
}

fn first_channel(t: &Tensor<f32>) -> (usize, usize, &[f32]) {
    let (rows, cols) = (t.dims()[1], t.dims()[2]);
    (rows, cols, &t.data()[..rows * cols])
}

pub fn mel_image(kind: &str, freq: f64, seconds: f64, n_dft: usize, n_mels: usize, scale: &str) -> Result<Image, String> {
    let audio = synth(kind, freq, seconds, 1)?;
    let mel = mel_of(&audio, SAMPLE_RATE, n_dft, n_mels, scale)?;
    let (r, c, d) = first_channel(&mel);
    Ok(render(r, c, d))
}

pub fn wav_mel_image(bytes: &[u8], n_dft: usize, n_mels: usize, scale: &str) -> Result<Image, String> {
    let audio = parse_wav(bytes).map_err(|e| e.to_string())?;
    let mel = mel_of(&audio.samples, audio.sample_rate, n_dft, n_mels, scale)?;
    let (r, c, d) = first_channel(&mel);
    Ok(render(r, c, d))
}

pub fn filterbank_image(scale: &str, n_mels: usize, n_dft: usize, fmin: f64, fmax: f64) -> Result<Image, String> {
    let scale: Scale = scale.parse().map_err(|e: audiolayers::Error| e.to_string())?;
    let mut cfg = FilterbankConfig::new(scale, n_mels, n_dft / 2 + 1, SAMPLE_RATE);
    cfg.fmin = fmin;
    cfg.fmax = Some(fmax);
    cfg.seed = Some(7);
    let fb = build_filterbank::<f32>(&cfg).map_err(|e| e.to_string())?;
    Ok(render(fb.n_mels(), fb.n_bins(), fb.weights().data()))
}

/// Spectrogram of a synthetic signal, standardised along `axis` (or left
/// alone for `none`), then with training-phase noise of `noise_power`.
pub fn normalized_image(kind: &str, axis: &str, noise_power: f64, seed: u32) -> Result<Image, String> {
    let audio = synth(kind, 1000.0, 1.5, seed)?;
    let cfg = stft_config(256, SAMPLE_RATE);
    let bank = build_dft_kernels::<f32>(&cfg).map_err(|e| e.to_string())?;
    let spec = spectrogram(&audio, &bank, &cfg).map_err(|e| e.to_string())?;
    let d = spec.dims().to_vec();
    let mut x = spec.reshape(&[1, d[0], d[1], d[2]]).map_err(|e| e.to_string())?;
    if axis != "none" {
        let axis: NormAxis = axis.parse().map_err(|e: audiolayers::Error| e.to_string())?;
        x = normalize2d(&x, axis).map_err(|e| e.to_string())?;
    }
    let noise = NoiseConfig::new(noise_power, u64::from(seed));
    x = additive_noise(&x, &noise, Phase::Training).map_err(|e| e.to_string())?;
    Ok(render(d[1], d[2], &x.data()[..d[1] * d[2]]))
}

fn js(r: Result<Image, String>) -> Result<Image, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Mel-spectrogram of a synthetic `tone`, `chirp` or `noise` signal.
#[wasm_bindgen(js_name = melImage)]
pub fn mel_image_js(kind: &str, freq: f64, seconds: f64, n_dft: usize, n_mels: usize, scale: &str) -> Result<Image, JsError> {
    js(mel_image(kind, freq, seconds, n_dft, n_mels, scale))
}

/// Mel-spectrogram (first channel) of an uploaded WAV file.
#[wasm_bindgen(js_name = wavMelImage)]
pub fn wav_mel_image_js(bytes: &[u8], n_dft: usize, n_mels: usize, scale: &str) -> Result<Image, JsError> {
    js(wav_mel_image(bytes, n_dft, n_mels, scale))
}

/// Filterbank matrix: one row per filter, one column per frequency bin.
#[wasm_bindgen(js_name = filterbankImage)]
pub fn filterbank_image_js(scale: &str, n_mels: usize, n_dft: usize, fmin: f64, fmax: f64) -> Result<Image, JsError> {
    js(filterbank_image(scale, n_mels, n_dft, fmin, fmax))
}

#[wasm_bindgen(js_name = normalizedImage)]
pub fn normalized_image_js(kind: &str, axis: &str, noise_power: f64, seed: u32) -> Result<Image, JsError> {
    js(normalized_image(kind, axis, noise_power, seed))
}
