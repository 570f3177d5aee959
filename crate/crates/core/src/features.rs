//! Log-mel feature extraction and the feature file format.
//!
//! Features are natural-log mel filterbank energies: one row per analysis
//! frame, one column per mel band. Files use a small little-endian binary
//! layout (magic "SAPF") described in docs/formats.md.

use crate::audio::{frame_signal, AudioClip, FrameSpec};
use crate::error::{Error, Result};
use crate::mat::Mat;
use rustfft::{num_complex::Complex, FftPlanner};
use std::io::{Read, Write};
use std::path::Path;

const FEATURE_MAGIC: [u8; 4] = *b"SAPF";
const FEATURE_VERSION: u32 = 1;

/// Frame-level features for one utterance, rows = frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Mat<f32>,
    pub window_ms: u16,
    pub stride_ms: u16,
    pub utterance_id: String,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn cols(&self) -> usize {
        self.data.cols()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        self.data.row(r)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MelConfig {
    pub n_mels: usize,
    pub fft_size: usize,
    pub fmin_hz: f32,
    pub fmax_hz: f32,
    /// Added to each band energy before taking the log.
    pub log_floor: f32,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            n_mels: 40,
            fft_size: 512,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over FFT bins, peak height 1. Returned as
/// (bin weights, first bin index) per band so the dot products skip zeros.
fn mel_filterbank(cfg: &MelConfig, sample_rate: u32) -> Vec<(usize, Vec<f64>)> {
    let n_bins = cfg.fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / cfg.fft_size as f64;

    let mel_lo = hz_to_mel(cfg.fmin_hz as f64);
    let mel_hi = hz_to_mel(cfg.fmax_hz as f64);
    let centers: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();

    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (centers[m], centers[m + 1], centers[m + 2]);
            let mut first = None;
            let mut weights = Vec::new();
            for bin in 0..n_bins {
                let f = bin as f64 * bin_hz;
                let w = if f <= left || f >= right {
                    0.0
                } else if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                };
                if w > 0.0 {
                    if first.is_none() {
                        first = Some(bin);
                    }
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            (first.unwrap_or(0), weights)
        })
        .collect()
}

/// Extracts log-mel features: Hann window, FFT power spectrum, triangular
/// mel bands, then ln(energy + log_floor) per band.
pub fn extract_logmel(
    clip: &AudioClip,
    spec: &FrameSpec,
    cfg: &MelConfig,
) -> Result<FeatureMatrix> {
    if cfg.n_mels == 0 {
        return Err(Error::BadConfig("n_mels must be at least 1".into()));
    }
    if cfg.log_floor <= 0.0 {
        return Err(Error::BadConfig("log_floor must be positive".into()));
    }
    let nyquist = clip.sample_rate as f32 / 2.0;
    if !(cfg.fmin_hz >= 0.0 && cfg.fmin_hz < cfg.fmax_hz && cfg.fmax_hz <= nyquist) {
        return Err(Error::BadConfig(format!(
            "mel range {}..{} Hz invalid for nyquist {} Hz",
            cfg.fmin_hz, cfg.fmax_hz, nyquist
        )));
    }
    let window_samples = spec.window_samples(clip.sample_rate);
    if cfg.fft_size < window_samples {
        return Err(Error::BadConfig(format!(
            "fft_size {} shorter than the {}-sample window",
            cfg.fft_size, window_samples
        )));
    }

    let frames = frame_signal(clip, spec)?;
    let filterbank = mel_filterbank(cfg, clip.sample_rate);
    let hann: Vec<f32> = (0..window_samples)
        .map(|i| {
            let x = std::f32::consts::PI * i as f32 / window_samples as f32;
            x.sin() * x.sin()
        })
        .collect();

    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let n_bins = cfg.fft_size / 2 + 1;

    let mut out = Mat::zeros(frames.len(), cfg.n_mels);
    let mut buf = vec![Complex::new(0.0f32, 0.0); cfg.fft_size];
    let mut power = vec![0.0f64; n_bins];
    for (row, frame) in frames.iter().enumerate() {
        for item in buf.iter_mut() {
            *item = Complex::new(0.0, 0.0);
        }
        for (i, (&s, &w)) in frame.iter().zip(&hann).enumerate() {
            buf[i] = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        for (bin, p) in power.iter_mut().enumerate() {
            *p = buf[bin].norm_sqr() as f64;
        }

        let out_row = out.row_mut(row);
        for (m, (first, weights)) in filterbank.iter().enumerate() {
            let mut acc = 0.0f64;
            for (w, p) in weights.iter().zip(&power[*first..]) {
                acc += w * p;
            }
            out_row[m] = (acc + cfg.log_floor as f64).ln() as f32;
        }
    }

    Ok(FeatureMatrix {
        data: out,
        window_ms: spec.window_ms as u16,
        stride_ms: spec.stride_ms as u16,
        utterance_id: clip.id.clone(),
    })
}

/// Serializes a feature matrix. Refuses non-finite entries so a written
/// file always satisfies the loader's checks.
pub fn save_features(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for r in 0..features.rows() {
        for (c, v) in features.row(r).iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { row: r, col: c });
            }
        }
    }

    let mut out = Vec::with_capacity(24 + features.rows() * features.cols() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    out.extend_from_slice(&features.window_ms.to_le_bytes());
    out.extend_from_slice(&features.stride_ms.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &v in features.data.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Loads a feature file, validating magic, version, payload length, and
/// that every entry is finite.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(file);

    let mut header = [0u8; 24];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::TruncatedPayload {
            path: path.display().to_string(),
            detail: "file shorter than the 24-byte header".into(),
        })?;

    if header[0..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic(path.display().to_string()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let window_ms = u16::from_le_bytes(header[16..18].try_into().unwrap());
    let stride_ms = u16::from_le_bytes(header[18..20].try_into().unwrap());
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyMatrix);
    }

    let mut payload = vec![0u8; rows * cols * 4];
    reader
        .read_exact(&mut payload)
        .map_err(|_| Error::TruncatedPayload {
            path: path.display().to_string(),
            detail: format!("expected {} f32 values", rows * cols),
        })?;

    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFiniteEntry {
                row: i / cols,
                col: i % cols,
            });
        }
        data.push(v);
    }

    let utterance_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "features".into());

    Ok(FeatureMatrix {
        data: Mat::from_vec(rows, cols, data),
        window_ms,
        stride_ms,
        utterance_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tone_clip(rate: u32, seconds: f64, freq: f64, amp: f32) -> AudioClip {
        let n = (rate as f64 * seconds) as usize;
        AudioClip {
            samples: (0..n)
                .map(|i| {
                    amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32
                })
                .collect(),
            sample_rate: rate,
            id: "tone".into(),
        }
    }

    #[test]
    fn one_second_default_config_is_49_by_40() {
        let clip = tone_clip(16000, 1.0, 440.0, 0.5);
        let fm = extract_logmel(&clip, &FrameSpec::default(), &MelConfig::default()).unwrap();
        assert_eq!(fm.rows(), 49);
        assert_eq!(fm.cols(), 40);
        assert_eq!(fm.window_ms, 25);
        assert_eq!(fm.stride_ms, 20);
        assert!(fm.data.is_finite());
    }

    #[test]
    fn silence_rows_equal_log_of_floor() {
        let clip = AudioClip {
            samples: vec![0.0; 16000],
            sample_rate: 16000,
            id: "z".into(),
        };
        let cfg = MelConfig::default();
        let fm = extract_logmel(&clip, &FrameSpec::default(), &cfg).unwrap();
        let expected = (cfg.log_floor as f64).ln() as f32;
        for r in 0..fm.rows() {
            for &v in fm.row(r) {
                assert_eq!(v, expected);
            }
        }
    }

    #[test]
    fn amplification_never_lowers_an_entry() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(42);
        let samples: Vec<f32> = (0..8000).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let quiet = AudioClip {
            samples: samples.clone(),
            sample_rate: 16000,
            id: "q".into(),
        };
        let loud = AudioClip {
            samples: samples.iter().map(|s| s * 3.0).collect(),
            sample_rate: 16000,
            id: "l".into(),
        };
        let spec = FrameSpec::default();
        let cfg = MelConfig::default();
        let a = extract_logmel(&quiet, &spec, &cfg).unwrap();
        let b = extract_logmel(&loud, &spec, &cfg).unwrap();
        for r in 0..a.rows() {
            for (x, y) in a.row(r).iter().zip(b.row(r)) {
                assert!(y >= x, "amplified entry dropped: {y} < {x}");
            }
        }
    }

    #[test]
    fn shifting_by_one_stride_shifts_rows_by_one() {
        let base = tone_clip(16000, 1.0, 523.0, 0.6);
        let stride = FrameSpec::default().stride_samples(16000);
        let mut shifted_samples = vec![0.0f32; stride];
        shifted_samples.extend_from_slice(&base.samples[..base.samples.len() - stride]);
        let shifted = AudioClip {
            samples: shifted_samples,
            sample_rate: 16000,
            id: "shift".into(),
        };

        let spec = FrameSpec::default();
        let cfg = MelConfig::default();
        let a = extract_logmel(&base, &spec, &cfg).unwrap();
        let b = extract_logmel(&shifted, &spec, &cfg).unwrap();
        for r in 1..b.rows() {
            for (x, y) in b.row(r).iter().zip(a.row(r - 1)) {
                assert!(
                    (x - y).abs() < 1e-5,
                    "row {r} differs after shift: {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn tone_energy_lands_in_the_matching_band() {
        let cfg = MelConfig::default();
        let clip = tone_clip(16000, 0.5, 1000.0, 0.8);
        let fm = extract_logmel(&clip, &FrameSpec::default(), &cfg).unwrap();

        let mel_lo = hz_to_mel(cfg.fmin_hz as f64);
        let mel_hi = hz_to_mel(cfg.fmax_hz as f64);
        let expected_band = (0..cfg.n_mels)
            .min_by(|&a, &b| {
                let fa = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (a + 1) as f64 / 41.0);
                let fb = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (b + 1) as f64 / 41.0);
                (fa - 1000.0)
                    .abs()
                    .partial_cmp(&(fb - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();

        let mid = fm.rows() / 2;
        let argmax = fm
            .row(mid)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(
            (argmax as i64 - expected_band as i64).abs() <= 1,
            "tone at 1 kHz peaked in band {argmax}, expected near {expected_band}"
        );
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.sapf");
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let fm = FeatureMatrix {
            data: Mat::from_fn(17, 12, |_, _| rng.gen_range(-30.0f32..5.0)),
            window_ms: 25,
            stride_ms: 20,
            utterance_id: "f".into(),
        };
        save_features(&fm, &path).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(back.data.data(), fm.data.data());
        assert_eq!(back.window_ms, 25);
        assert_eq!(back.stride_ms, 20);
        assert_eq!(back.utterance_id, "f");
    }

    #[test]
    fn loader_rejects_bad_magic_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();

        let bad_magic = dir.path().join("bad.sapf");
        std::fs::write(&bad_magic, b"NOPE00000000000000000000").unwrap();
        assert!(matches!(load_features(&bad_magic), Err(Error::BadMagic(_))));

        let fm = FeatureMatrix {
            data: Mat::from_fn(3, 4, |r, c| (r + c) as f32),
            window_ms: 25,
            stride_ms: 20,
            utterance_id: "x".into(),
        };
        let good = dir.path().join("good.sapf");
        save_features(&fm, &good).unwrap();
        let bytes = std::fs::read(&good).unwrap();

        let mut v2 = bytes.clone();
        v2[4] = 2;
        let v2_path = dir.path().join("v2.sapf");
        std::fs::write(&v2_path, &v2).unwrap();
        assert!(matches!(
            load_features(&v2_path),
            Err(Error::VersionUnsupported(2))
        ));

        let cut_path = dir.path().join("cut.sapf");
        std::fs::write(&cut_path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_features(&cut_path),
            Err(Error::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn loader_rejects_nan_payload() {
        let dir = tempfile::tempdir().unwrap();
        let fm = FeatureMatrix {
            data: Mat::from_fn(2, 2, |_, _| 1.0f32),
            window_ms: 25,
            stride_ms: 20,
            utterance_id: "n".into(),
        };
        let path = dir.path().join("nan.sapf");
        save_features(&fm, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let nan = f32::NAN.to_le_bytes();
        // Third value, row 1 col 0.
        bytes[24 + 8..24 + 12].copy_from_slice(&nan);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_features(&path),
            Err(Error::NonFiniteEntry { row: 1, col: 0 })
        ));
    }

    #[test]
    fn save_refuses_non_finite_features() {
        let dir = tempfile::tempdir().unwrap();
        let mut fm = FeatureMatrix {
            data: Mat::from_fn(2, 2, |_, _| 0.0f32),
            window_ms: 25,
            stride_ms: 20,
            utterance_id: "inf".into(),
        };
        fm.data.set(0, 1, f32::INFINITY);
        assert!(matches!(
            save_features(&fm, dir.path().join("x.sapf")),
            Err(Error::NonFiniteEntry { row: 0, col: 1 })
        ));
    }

    #[test]
    fn mel_range_wider_than_nyquist_is_rejected() {
        let clip = tone_clip(8000, 1.0, 300.0, 0.5);
        let cfg = MelConfig::default(); // fmax 8000 > nyquist 4000
        assert!(matches!(
            extract_logmel(&clip, &FrameSpec::default(), &cfg),
            Err(Error::BadConfig(_))
        ));
    }
}
