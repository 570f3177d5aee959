//! Sub-band energy voice activity detection.
//!
//! The detector splits the signal into six fixed bands (80-250, 250-500,
//! 500-1000, 1000-2000, 2000-3000, 3000-4000 Hz), tracks a per-band noise
//! floor, and marks a frame as speech when the aggregate band SNR clears a
//! threshold picked by the aggressiveness mode. A hangover counter keeps a
//! few trailing frames after each detection so word endings are not clipped.

use crate::error::{Error, Result};
use crate::AudioClip;
use std::io::Write;
use std::path::Path;

const BAND_EDGES_HZ: [f32; 7] = [80.0, 250.0, 500.0, 1000.0, 2000.0, 3000.0, 4000.0];
const NUM_BANDS: usize = 6;

/// dB thresholds indexed by aggressiveness. Strictly increasing, so a higher
/// mode can only ever reject frames that a lower mode also saw.
const SNR_THRESHOLD_DB: [f32; 4] = [3.0, 6.0, 9.0, 12.0];

/// Frames whose energy statistics seed the noise floor before any decision.
const NOISE_SEED_FRAMES: usize = 3;

const ENERGY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct VadConfig {
    /// Analysis frame length; 10, 20, or 30 ms.
    pub frame_ms: u32,
    /// 0 (permissive) through 3 (strict).
    pub aggressiveness: u8,
    /// Frames kept as speech after the SNR drops back below threshold.
    pub hangover_frames: u32,
    /// Noise floor smoothing factor in (0, 1).
    pub noise_adapt_rate: f32,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig {
            frame_ms: 30,
            aggressiveness: 2,
            hangover_frames: 4,
            noise_adapt_rate: 0.05,
        }
    }
}

impl VadConfig {
    fn validate(&self) -> Result<()> {
        if !matches!(self.frame_ms, 10 | 20 | 30) {
            return Err(Error::BadConfig(format!(
                "vad frame_ms must be 10, 20 or 30, got {}",
                self.frame_ms
            )));
        }
        if self.aggressiveness > 3 {
            return Err(Error::BadConfig(format!(
                "aggressiveness must be 0..=3, got {}",
                self.aggressiveness
            )));
        }
        if !(self.noise_adapt_rate > 0.0 && self.noise_adapt_rate < 1.0) {
            return Err(Error::BadConfig(format!(
                "noise_adapt_rate must be in (0, 1), got {}",
                self.noise_adapt_rate
            )));
        }
        Ok(())
    }
}

/// Per-frame speech decisions on a fixed `frame_ms` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VadMask {
    /// One entry per frame, 0 = non-speech, 1 = speech.
    pub decisions: Vec<u8>,
    pub frame_ms: u32,
    pub utterance_id: String,
}

impl VadMask {
    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }
}

/// Fraction of frames marked speech.
pub fn speech_ratio(mask: &VadMask) -> Result<f64> {
    if mask.decisions.is_empty() {
        return Err(Error::EmptyMask);
    }
    let on = mask.decisions.iter().filter(|&&d| d == 1).count();
    Ok(on as f64 / mask.decisions.len() as f64)
}

/// One section of a cascaded band-pass filter, transposed direct form II.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl Biquad {
    fn low_pass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * cutoff_hz / sample_rate;
        // alpha = sin(w) / (2 Q) with Butterworth damping Q = 1/sqrt(2)
        let alpha = w.sin() * std::f64::consts::FRAC_1_SQRT_2;
        let cw = w.cos();
        let a0 = 1.0 + alpha;
        Biquad {
            b0: (1.0 - cw) / 2.0 / a0,
            b1: (1.0 - cw) / a0,
            b2: (1.0 - cw) / 2.0 / a0,
            a1: -2.0 * cw / a0,
            a2: (1.0 - alpha) / a0,
            z1: 0.0,
            z2: 0.0,
        }
    }

    fn high_pass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * cutoff_hz / sample_rate;
        let alpha = w.sin() * std::f64::consts::FRAC_1_SQRT_2;
        let cw = w.cos();
        let a0 = 1.0 + alpha;
        Biquad {
            b0: (1.0 + cw) / 2.0 / a0,
            b1: -(1.0 + cw) / a0,
            b2: (1.0 + cw) / 2.0 / a0,
            a1: -2.0 * cw / a0,
            a2: (1.0 - alpha) / a0,
            z1: 0.0,
            z2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.z1;
        self.z1 = self.b1 * x - self.a1 * y + self.z2;
        self.z2 = self.b2 * x - self.a2 * y;
        y
    }
}

/// Mean-square energy of each band for every whole frame in the clip.
fn band_frame_energies(
    samples: &[f32],
    sample_rate: u32,
    frame_samples: usize,
) -> Vec<[f64; NUM_BANDS]> {
    let n_frames = samples.len() / frame_samples;
    let rate = sample_rate as f64;
    // Band edges are clamped away from Nyquist so the biquads stay well
    // conditioned at 8 kHz, where the top edge would sit exactly on it.
    let max_edge = 0.45 * rate;

    let mut energies = vec![[0.0f64; NUM_BANDS]; n_frames];
    for band in 0..NUM_BANDS {
        let lo = (BAND_EDGES_HZ[band] as f64).min(max_edge);
        let hi = (BAND_EDGES_HZ[band + 1] as f64).min(max_edge);
        let mut hp = Biquad::high_pass(lo, rate);
        let mut lp = Biquad::low_pass(hi, rate);
        for (frame_idx, frame) in samples.chunks_exact(frame_samples).enumerate() {
            let mut acc = 0.0f64;
            for &s in frame {
                let y = lp.step(hp.step(s as f64));
                acc += y * y;
            }
            energies[frame_idx][band] = acc / frame_samples as f64;
        }
    }
    energies
}

/// Runs the detector over a clip. Only 8 and 16 kHz input is accepted.
pub fn detect(clip: &AudioClip, config: &VadConfig) -> Result<VadMask> {
    config.validate()?;
    if !matches!(clip.sample_rate, 8000 | 16000) {
        return Err(Error::UnsupportedRate(clip.sample_rate));
    }
    let frame_samples = (clip.sample_rate as u64 * config.frame_ms as u64 / 1000) as usize;
    if clip.samples.len() < frame_samples {
        return Err(Error::TooShort {
            needed: frame_samples,
            got: clip.samples.len(),
        });
    }

    let energies = band_frame_energies(&clip.samples, clip.sample_rate, frame_samples);
    let n_frames = energies.len();
    let rate = config.noise_adapt_rate as f64;
    let threshold_db = SNR_THRESHOLD_DB[config.aggressiveness as usize] as f64;

    // Seed the floor from the leading frames, assumed to be background.
    let seed = NOISE_SEED_FRAMES.min(n_frames);
    let mut noise = [ENERGY_FLOOR; NUM_BANDS];
    for band in 0..NUM_BANDS {
        let mean: f64 = energies[..seed].iter().map(|e| e[band]).sum::<f64>() / seed as f64;
        noise[band] = mean.max(ENERGY_FLOOR);
    }

    let mut decisions = vec![0u8; n_frames];
    let mut hangover = 0u32;
    for (i, frame_energy) in energies.iter().enumerate() {
        let total_e: f64 = frame_energy.iter().sum();
        let total_n: f64 = noise.iter().sum();
        let snr_db = 10.0 * ((total_e + ENERGY_FLOOR) / (total_n + ENERGY_FLOOR)).log10();

        let raw_speech = snr_db > threshold_db;
        if raw_speech {
            decisions[i] = 1;
            hangover = config.hangover_frames;
        } else if hangover > 0 {
            decisions[i] = 1;
            hangover -= 1;
        }

        // The floor chases each band's energy: quickly downward, and upward
        // only by a bounded multiplicative step, so a loud burst cannot drag
        // it up to the burst's own level. The update never looks at the
        // speech decision, which keeps the detector monotone in the
        // aggressiveness mode.
        for band in 0..NUM_BANDS {
            let target = frame_energy[band].min(noise[band] * (1.0 + rate));
            noise[band] = ((1.0 - rate) * noise[band] + rate * target).max(ENERGY_FLOOR);
        }
    }

    Ok(VadMask {
        decisions,
        frame_ms: config.frame_ms,
        utterance_id: clip.id.clone(),
    })
}

/// Writes a mask as a single line of space-separated 0/1 tokens.
pub fn save_mask(mask: &VadMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let line: Vec<&str> = mask
        .decisions
        .iter()
        .map(|&d| if d == 1 { "1" } else { "0" })
        .collect();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "{}", line.join(" ")).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a mask from any source that emits whitespace-separated 0/1
/// tokens. Lines starting with '#' and trailing '#' comments are ignored.
/// The token count is taken as-is; timeline coverage is checked later when
/// the mask is aligned against a feature matrix.
pub fn read_mask(path: impl AsRef<Path>, frame_ms: u32) -> Result<VadMask> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut decisions = Vec::new();
    for (line_idx, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("");
        for token in content.split_whitespace() {
            match token {
                "0" => decisions.push(0),
                "1" => decisions.push(1),
                other => {
                    return Err(Error::ParseError {
                        path: path.display().to_string(),
                        line: line_idx + 1,
                        detail: format!("expected 0 or 1, got '{other}'"),
                    })
                }
            }
        }
    }
    if decisions.is_empty() {
        return Err(Error::EmptyMask);
    }

    let utterance_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mask".into());

    Ok(VadMask {
        decisions,
        frame_ms,
        utterance_id,
    })
}

/// Like [`read_mask`] but the token count must match `expected_frames`
/// exactly, for callers that know the clip length up front.
pub fn load_external_mask(
    path: impl AsRef<Path>,
    expected_frames: usize,
    frame_ms: u32,
) -> Result<VadMask> {
    let mask = read_mask(path, frame_ms)?;
    if mask.decisions.len() != expected_frames {
        return Err(Error::LengthMismatch {
            expected: expected_frames,
            got: mask.decisions.len(),
        });
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn clip(samples: Vec<f32>, rate: u32) -> AudioClip {
        AudioClip {
            samples,
            sample_rate: rate,
            id: "test".into(),
        }
    }

    fn tone_burst(
        rate: u32,
        total_s: f64,
        start_s: f64,
        end_s: f64,
        freq: f64,
        amp: f32,
    ) -> Vec<f32> {
        let n = (rate as f64 * total_s) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / rate as f64;
                if t >= start_s && t < end_s {
                    amp * (2.0 * std::f64::consts::PI * freq * t).sin() as f32
                } else {
                    0.0
                }
            })
            .collect()
    }

    #[test]
    fn silence_yields_no_speech_at_any_mode() {
        let c = clip(vec![0.0; 16000], 16000);
        for mode in 0..=3u8 {
            let cfg = VadConfig {
                aggressiveness: mode,
                ..VadConfig::default()
            };
            let mask = detect(&c, &cfg).unwrap();
            assert_eq!(mask.decisions.iter().sum::<u8>(), 0, "mode {mode}");
        }
    }

    #[test]
    fn tone_burst_overlaps_truth_with_iou_at_least_09() {
        let c = clip(tone_burst(16000, 1.0, 0.5, 1.0, 300.0, 0.95), 16000);
        let mask = detect(&c, &VadConfig::default()).unwrap();

        let frame_samples = 480;
        let n_frames = 16000 / frame_samples;
        assert_eq!(mask.decisions.len(), n_frames);
        let truth: Vec<u8> = (0..n_frames)
            .map(|i| {
                let start = i * frame_samples;
                let end = start + frame_samples;
                let overlap = end.min(16000).saturating_sub(start.max(8000));
                u8::from(overlap * 2 >= frame_samples)
            })
            .collect();

        let inter = mask
            .decisions
            .iter()
            .zip(&truth)
            .filter(|(a, b)| **a == 1 && **b == 1)
            .count();
        let union = mask
            .decisions
            .iter()
            .zip(&truth)
            .filter(|(a, b)| **a == 1 || **b == 1)
            .count();
        let iou = inter as f64 / union as f64;
        assert!(iou >= 0.9, "IoU {iou} (inter {inter}, union {union})");
    }

    #[test]
    fn higher_aggressiveness_never_adds_speech_frames() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut samples = vec![0.0f32; 16000];
            let bursts = rng.gen_range(1..4);
            for _ in 0..bursts {
                let start = rng.gen_range(1600..12000);
                let len = rng.gen_range(800..3200);
                let freq = rng.gen_range(150.0..3500.0);
                let amp = rng.gen_range(0.05..0.9);
                let end = (start + len).min(16000);
                for (i, s) in samples[start..end].iter_mut().enumerate() {
                    let t = (start + i) as f32 / 16000.0;
                    *s += amp * (2.0 * std::f32::consts::PI * freq * t).sin();
                }
            }
            for s in samples.iter_mut() {
                *s += rng.gen_range(-0.004..0.004);
            }
            let c = clip(samples, 16000);

            let mut prev: Option<Vec<u8>> = None;
            for mode in 0..=3u8 {
                let cfg = VadConfig {
                    aggressiveness: mode,
                    ..VadConfig::default()
                };
                let mask = detect(&c, &cfg).unwrap();
                if let Some(p) = &prev {
                    for (i, (lo, hi)) in p.iter().zip(&mask.decisions).enumerate() {
                        assert!(
                            hi <= lo,
                            "mode {mode} added a speech frame at {i} that mode {} lacked",
                            mode - 1
                        );
                    }
                }
                prev = Some(mask.decisions);
            }
        }
    }

    #[test]
    fn louder_burst_keeps_every_detected_frame() {
        // The noise floor is seeded from a shared silent prefix, so growing
        // the burst amplitude can only raise frame SNR.
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        for _ in 0..10 {
            let base_amp = rng.gen_range(0.02..0.3);
            let k = rng.gen_range(1.0..8.0);
            let freq = rng.gen_range(200.0..3000.0);
            let quiet = clip(tone_burst(16000, 1.0, 0.4, 0.8, freq, base_amp), 16000);
            let loud = clip(tone_burst(16000, 1.0, 0.4, 0.8, freq, base_amp * k), 16000);
            let cfg = VadConfig::default();
            let quiet_mask = detect(&quiet, &cfg).unwrap();
            let loud_mask = detect(&loud, &cfg).unwrap();
            for (i, (q, l)) in quiet_mask
                .decisions
                .iter()
                .zip(&loud_mask.decisions)
                .enumerate()
            {
                assert!(l >= q, "frame {i} lost when amplified by {k}");
            }
        }
    }

    #[test]
    fn hangover_extends_speech_by_exactly_its_frame_count() {
        // Raw decisions are observable by running with hangover disabled;
        // the held run must end exactly `hangover_frames` later and must
        // not invent speech anywhere before the raw onset.
        let c = clip(tone_burst(16000, 1.5, 0.3, 0.6, 440.0, 0.9), 16000);
        let bare_cfg = VadConfig {
            hangover_frames: 0,
            ..VadConfig::default()
        };
        let held_cfg = VadConfig {
            hangover_frames: 4,
            ..VadConfig::default()
        };
        let bare = detect(&c, &bare_cfg).unwrap();
        let held = detect(&c, &held_cfg).unwrap();

        let last_one = |m: &VadMask| m.decisions.iter().rposition(|&d| d == 1).unwrap();
        let first_one = |m: &VadMask| m.decisions.iter().position(|&d| d == 1).unwrap();
        assert_eq!(
            last_one(&held),
            last_one(&bare) + 4,
            "speech must end exactly four frames later"
        );
        assert_eq!(first_one(&held), first_one(&bare), "onset must not move");
        for (i, (b, h)) in bare.decisions.iter().zip(&held.decisions).enumerate() {
            assert!(h >= b, "hangover dropped raw speech frame {i}");
        }
        assert_eq!(held.decisions[last_one(&held) + 1], 0);
    }

    #[test]
    fn rejects_bad_rates_and_configs() {
        let c = clip(vec![0.0; 44100], 44100);
        assert!(matches!(
            detect(&c, &VadConfig::default()),
            Err(Error::UnsupportedRate(44100))
        ));

        let c16 = clip(vec![0.0; 16000], 16000);
        let bad_frame = VadConfig {
            frame_ms: 25,
            ..VadConfig::default()
        };
        assert!(matches!(detect(&c16, &bad_frame), Err(Error::BadConfig(_))));
        let bad_mode = VadConfig {
            aggressiveness: 4,
            ..VadConfig::default()
        };
        assert!(matches!(detect(&c16, &bad_mode), Err(Error::BadConfig(_))));

        let short = clip(vec![0.0; 100], 16000);
        assert!(matches!(
            detect(&short, &VadConfig::default()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn eight_khz_input_is_accepted() {
        let c = clip(tone_burst(8000, 1.0, 0.5, 1.0, 300.0, 0.9), 8000);
        let mask = detect(&c, &VadConfig::default()).unwrap();
        assert_eq!(mask.decisions.len(), 8000 / 240);
        assert!(mask.decisions.contains(&1));
        assert_eq!(mask.decisions[0], 0);
    }

    #[test]
    fn mask_file_round_trip_and_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let mask = VadMask {
            decisions: vec![0, 1, 1, 0, 1],
            frame_ms: 30,
            utterance_id: "m".into(),
        };
        save_mask(&mask, &path).unwrap();
        let back = load_external_mask(&path, 5, 30).unwrap();
        assert_eq!(back.decisions, mask.decisions);
        assert_eq!(back.frame_ms, 30);

        assert!(matches!(
            load_external_mask(&path, 4, 30),
            Err(Error::LengthMismatch {
                expected: 4,
                got: 5
            })
        ));

        let commented = dir.path().join("c.txt");
        std::fs::write(&commented, "# header\n0 1 # trailing\n1\n").unwrap();
        let m = load_external_mask(&commented, 3, 30).unwrap();
        assert_eq!(m.decisions, vec![0, 1, 1]);

        let bad = dir.path().join("bad.txt");
        std::fs::write(&bad, "0 2 1\n").unwrap();
        match load_external_mask(&bad, 3, 30) {
            Err(Error::ParseError { line, detail, .. }) => {
                assert_eq!(line, 1);
                assert!(detail.contains('2'), "detail was: {detail}");
            }
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn speech_ratio_counts_ones() {
        let mask = VadMask {
            decisions: vec![0, 1, 1, 0],
            frame_ms: 30,
            utterance_id: "r".into(),
        };
        assert_eq!(speech_ratio(&mask).unwrap(), 0.5);

        let empty = VadMask {
            decisions: vec![],
            frame_ms: 30,
            utterance_id: "e".into(),
        };
        assert!(matches!(speech_ratio(&empty), Err(Error::EmptyMask)));
    }

    #[test]
    fn detection_is_deterministic() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let samples: Vec<f32> = (0..16000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let c = clip(samples, 16000);
        let a = detect(&c, &VadConfig::default()).unwrap();
        let b = detect(&c, &VadConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
