//! PCM16 mono wav loading, head-keeping truncation, and sliding-window framing.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const RIFF_MAGIC: [u8; 4] = *b"RIFF";
const WAVE_MAGIC: [u8; 4] = *b"WAVE";
const FMT_CHUNK: [u8; 4] = *b"fmt ";
const DATA_CHUNK: [u8; 4] = *b"data";
const PCM_FORMAT: u16 = 1;

/// Decoded mono audio, samples normalized to [-1, 1) by dividing PCM16 by 32768.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub id: String,
}

impl AudioClip {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Sliding-window framing parameters in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpec {
    pub window_ms: u32,
    pub stride_ms: u32,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            window_ms: 25,
            stride_ms: 20,
        }
    }
}

impl FrameSpec {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms as u64 * sample_rate as u64 / 1000) as usize
    }

    pub fn stride_samples(&self, sample_rate: u32) -> usize {
        (self.stride_ms as u64 * sample_rate as u64 / 1000) as usize
    }

    /// Number of whole windows that fit: floor((len - window) / stride) + 1.
    /// Returns 0 when the clip is shorter than one window.
    pub fn frame_count(&self, samples: usize, sample_rate: u32) -> usize {
        let window = self.window_samples(sample_rate);
        let stride = self.stride_samples(sample_rate);
        if samples < window || window == 0 || stride == 0 {
            return 0;
        }
        (samples - window) / stride + 1
    }
}

fn read_exact_or(reader: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|_| Error::CorruptHeader {
        path: path.display().to_string(),
        detail: format!("unexpected end of file in {what}"),
    })
}

/// Loads a PCM16 mono wav file. Anything else (stereo, float, other bit
/// depths) is rejected rather than resampled or mixed down.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_or(&mut reader, &mut magic, path, "riff magic")?;
    if magic != RIFF_MAGIC {
        return Err(Error::CorruptHeader {
            path: path.display().to_string(),
            detail: "missing RIFF magic".into(),
        });
    }
    let mut size = [0u8; 4];
    read_exact_or(&mut reader, &mut size, path, "riff size")?;
    read_exact_or(&mut reader, &mut magic, path, "wave magic")?;
    if magic != WAVE_MAGIC {
        return Err(Error::CorruptHeader {
            path: path.display().to_string(),
            detail: "missing WAVE magic".into(),
        });
    }

    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut chunk_id = [0u8; 4];
        match reader.read_exact(&mut chunk_id) {
            Ok(()) => {}
            Err(_) => break,
        }
        let mut len_bytes = [0u8; 4];
        read_exact_or(&mut reader, &mut len_bytes, path, "chunk length")?;
        let chunk_len = u32::from_le_bytes(len_bytes) as usize;

        match chunk_id {
            FMT_CHUNK => {
                if chunk_len < 16 {
                    return Err(Error::CorruptHeader {
                        path: path.display().to_string(),
                        detail: format!("fmt chunk too small ({chunk_len} bytes)"),
                    });
                }
                let mut fmt = vec![0u8; chunk_len];
                read_exact_or(&mut reader, &mut fmt, path, "fmt chunk")?;
                format = Some((
                    u16::from_le_bytes([fmt[0], fmt[1]]),
                    u16::from_le_bytes([fmt[2], fmt[3]]),
                    u32::from_le_bytes([fmt[4], fmt[5], fmt[6], fmt[7]]),
                    u16::from_le_bytes([fmt[14], fmt[15]]),
                ));
            }
            DATA_CHUNK => {
                let mut payload = vec![0u8; chunk_len];
                read_exact_or(&mut reader, &mut payload, path, "data chunk")?;
                data = Some(payload);
            }
            _ => {
                // Skip unknown chunks, honoring the RIFF word-alignment pad byte.
                let skip = chunk_len + (chunk_len & 1);
                let mut sink = vec![0u8; skip];
                read_exact_or(&mut reader, &mut sink, path, "chunk body")?;
                continue;
            }
        }
        if chunk_len & 1 == 1 {
            let mut pad = [0u8; 1];
            let _ = reader.read_exact(&mut pad);
        }
    }

    let (audio_format, channels, sample_rate, bits) =
        format.ok_or_else(|| Error::CorruptHeader {
            path: path.display().to_string(),
            detail: "no fmt chunk".into(),
        })?;
    let payload = data.ok_or_else(|| Error::CorruptHeader {
        path: path.display().to_string(),
        detail: "no data chunk".into(),
    })?;

    if audio_format != PCM_FORMAT {
        return Err(Error::UnsupportedFormat {
            path: path.display().to_string(),
            detail: format!("audio format tag {audio_format}, only PCM (1) is supported"),
        });
    }
    if channels != 1 {
        return Err(Error::UnsupportedFormat {
            path: path.display().to_string(),
            detail: format!("{channels} channels, only mono is supported"),
        });
    }
    if bits != 16 {
        return Err(Error::UnsupportedFormat {
            path: path.display().to_string(),
            detail: format!("{bits}-bit samples, only 16-bit is supported"),
        });
    }
    if payload.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if payload.len() % 2 != 0 {
        return Err(Error::CorruptHeader {
            path: path.display().to_string(),
            detail: "data chunk has an odd byte count".into(),
        });
    }

    let samples: Vec<f32> = payload
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
        .collect();

    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into());

    Ok(AudioClip {
        samples,
        sample_rate,
        id,
    })
}

/// Writes a clip as PCM16 mono. Samples are clamped to [-1, 1) and quantized
/// by rounding, so a load/save/load cycle agrees within one quantization step.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if clip.samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let data_len = (clip.samples.len() * 2) as u32;
    let byte_rate = clip.sample_rate * 2;

    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(&RIFF_MAGIC);
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(&WAVE_MAGIC);
    out.extend_from_slice(&FMT_CHUNK);
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(&DATA_CHUNK);
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let q = (s * 32768.0)
            .round()
            .clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Keeps at most the first `max_seconds` of the clip. Already-short clips
/// come back unchanged, so applying this twice is the same as applying it once.
pub fn truncate(clip: &AudioClip, max_seconds: f64) -> AudioClip {
    let cap = (max_seconds.max(0.0) * clip.sample_rate as f64).floor() as usize;
    if clip.samples.len() <= cap {
        return clip.clone();
    }
    AudioClip {
        samples: clip.samples[..cap].to_vec(),
        sample_rate: clip.sample_rate,
        id: clip.id.clone(),
    }
}

/// Splits the clip into overlapping windows. Frame `i` starts at
/// `i * stride` samples and spans one window.
pub fn frame_signal<'a>(clip: &'a AudioClip, spec: &FrameSpec) -> Result<Vec<&'a [f32]>> {
    if spec.window_ms == 0 || spec.stride_ms == 0 {
        return Err(Error::BadConfig(
            "window_ms and stride_ms must be positive".into(),
        ));
    }
    let window = spec.window_samples(clip.sample_rate);
    let stride = spec.stride_samples(clip.sample_rate);
    if clip.samples.len() < window {
        return Err(Error::TooShort {
            needed: window,
            got: clip.samples.len(),
        });
    }
    let count = spec.frame_count(clip.samples.len(), clip.sample_rate);
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * stride;
        frames.push(&clip.samples[start..start + window]);
    }
    Ok(frames)
}
