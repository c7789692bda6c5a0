use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;
const MAX_SAMPLES: usize = 1 << 31;

/// Decoded PCM audio: `[channels, length]` samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Tensor<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Tensor<f32>, sample_rate: u32) -> Result<Self> {
        if samples.rank() != 2 || !(1..=2).contains(&samples.dims()[0]) {
            return Err(Error::domain(format!(
                "audio must be [1 or 2 channels, length], got {}",
                samples.shape()
            )));
        }
        if sample_rate == 0 {
            return Err(Error::domain("sample rate must be positive"));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn channels(&self) -> usize {
        self.samples.dims()[0]
    }

    pub fn len(&self) -> usize {
        self.samples.dims()[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

struct Format {
    codec: u16,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    bits: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<Format> {
    if body.len() < 16 {
        return Err(Error::Corrupt(format!("fmt chunk is {} bytes, need 16", body.len())));
    }
    let mut codec = u16_at(body, 0);
    if codec == WAVE_FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the sub-format GUID
        if body.len() < 40 {
            return Err(Error::Corrupt("extensible fmt chunk is truncated".into()));
        }
        codec = u16_at(body, 24);
    }
    Ok(Format {
        codec,
        channels: u16_at(body, 2),
        sample_rate: u32_at(body, 4),
        block_align: u16_at(body, 12),
        bits: u16_at(body, 14),
    })
}

/// Decodes an in-memory RIFF/WAVE file.
///
/// 16-bit integer samples are divided by 32768; 32-bit float samples are
/// taken as is. Channels are de-interleaved.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 {
        return Err(Error::Corrupt("file too short for a RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "chunk '{}' declares {size} bytes but only {} remain",
                    String::from_utf8_lossy(id),
                    bytes.len() - start
                ))
            })?;
        match id {
            b"fmt " => format = Some(parse_fmt(&bytes[start..end])?),
            b"data" => {
                data = Some(&bytes[start..end]);
                break;
            }
            _ => {}
        }
        pos = end + (size & 1);
    }
    let fmt = format.ok_or_else(|| Error::Corrupt("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Corrupt("missing data chunk".into()))?;

    let sample_bytes = match (fmt.codec, fmt.bits) {
        (WAVE_FORMAT_PCM, 16) => 2,
        (WAVE_FORMAT_IEEE_FLOAT, 32) => 4,
        (WAVE_FORMAT_PCM, b) | (WAVE_FORMAT_IEEE_FLOAT, b) => {
            return Err(Error::Unsupported(format!("{b}-bit samples for codec {}", fmt.codec)))
        }
        (codec, _) => return Err(Error::UnsupportedCodec(codec)),
    };
    let channels = fmt.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::Unsupported(format!("{channels} channels (only mono and stereo)")));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::Corrupt("sample rate is zero".into()));
    }
    let frame_bytes = channels * sample_bytes;
    if fmt.block_align as usize != frame_bytes {
        return Err(Error::Corrupt(format!(
            "block align {} does not match {channels} x {sample_bytes} bytes",
            fmt.block_align
        )));
    }
    if data.len() % frame_bytes != 0 {
        return Err(Error::Corrupt("data chunk ends mid-frame".into()));
    }
    let frames = data.len() / frame_bytes;
    if frames == 0 {
        return Err(Error::Corrupt("data chunk holds no samples".into()));
    }
    if frames * channels > MAX_SAMPLES {
        return Err(Error::Unsupported("more than 2^31 samples".into()));
    }

    let mut planar = vec![0.0f32; frames * channels];
    for (f, frame) in data.chunks_exact(frame_bytes).enumerate() {
        for (c, s) in frame.chunks_exact(sample_bytes).enumerate() {
            planar[c * frames + f] = if sample_bytes == 2 {
                i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0
            } else {
                f32::from_le_bytes([s[0], s[1], s[2], s[3]])
            };
        }
    }
    let samples = Tensor::new(&[channels, frames], planar)
        .map_err(|_| Error::Corrupt("non-finite float sample".into()))?;
    AudioBuffer::new(samples, fmt.sample_rate)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    parse_wav(&fs::read(path)?)
}
