//! Synthetic corpus generator.
//!
//! Each utterance alternates speech and non-speech segments on a 30 ms
//! grid. Speech segments carry a three-tone chord whose frequencies encode
//! the emotion class (plus a small per-speaker detune), so class identity
//! lives only inside speech. Non-speech segments carry a distractor chord
//! drawn per utterance from the same frequency pool regardless of class:
//! pooling that averages over the whole utterance mixes these distractors
//! into the representation, while speech-gated pooling does not. Ground
//! truth masks for the grid are written next to the audio.

use crate::audio::{save_wav, AudioClip};
use crate::error::{Error, Result};
use crate::harness::manifest::CLASS_LABELS;
use crate::vad::{save_mask, VadMask};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::path::{Path, PathBuf};

pub const SYNTH_FRAME_MS: u32 = 30;

/// Tone pool size; classes take every fourth entry, so each of the four
/// classes owns three interleaved frequencies spanning the whole range.
const POOL: usize = 12;
const TONE_AMPLITUDE: f64 = 0.22;

const CLASS_VALENCE: [f64; 4] = [0.20, 0.90, 0.50, 0.15];
const CLASS_AROUSAL: [f64; 4] = [0.90, 0.80, 0.40, 0.20];

/// Neutral-heavy class mix resembling a call-style corpus.
const SKEWED_WEIGHTS: [f64; 4] = [0.19, 0.16, 0.55, 0.10];
const BALANCED_WEIGHTS: [f64; 4] = [0.25, 0.25, 0.25, 0.25];

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub sample_rate: u32,
    /// Fraction of each utterance's frames that carry speech.
    pub speech_fraction: f64,
    /// Uniform noise amplitude added to every sample.
    pub noise_level: f64,
    /// false selects the neutral-heavy mix; true makes classes uniform.
    pub balanced: bool,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            speakers: 8,
            utterances_per_speaker: 12,
            sample_rate: 16000,
            speech_fraction: 0.3,
            noise_level: 0.02,
            balanced: false,
            seed: 7,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 {
            return Err(Error::BadSpec("need at least one speaker".into()));
        }
        if self.utterances_per_speaker < 4 {
            return Err(Error::BadSpec(
                "need at least four utterances per speaker, one per class".into(),
            ));
        }
        if !matches!(self.sample_rate, 8000 | 16000) {
            return Err(Error::BadSpec(format!(
                "sample_rate must be 8000 or 16000, got {}",
                self.sample_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.speech_fraction) {
            return Err(Error::BadSpec(format!(
                "speech_fraction must lie in [0, 1], got {}",
                self.speech_fraction
            )));
        }
        if !self.noise_level.is_finite() || self.noise_level < 0.0 {
            return Err(Error::BadSpec(format!(
                "noise_level must be non-negative, got {}",
                self.noise_level
            )));
        }
        Ok(())
    }
}

/// Log-spaced pool from 300 Hz to 6 kHz at a 16 kHz rate, scaled down
/// proportionally for 8 kHz so every tone stays below Nyquist.
fn tone_pool(sample_rate: u32) -> [f64; POOL] {
    let scale = sample_rate as f64 / 16000.0;
    std::array::from_fn(|j| scale * 300.0 * 20f64.powf(j as f64 / (POOL - 1) as f64))
}

/// Largest-remainder apportionment with a floor of one per class.
fn class_quota(total: usize, weights: &[f64; 4]) -> [usize; 4] {
    let mut quota = [0usize; 4];
    let mut remainders = [0f64; 4];
    let mut assigned = 0;
    for c in 0..4 {
        let raw = weights[c] * total as f64;
        quota[c] = raw.floor() as usize;
        remainders[c] = raw - raw.floor();
        assigned += quota[c];
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| remainders[b].partial_cmp(&remainders[a]).unwrap());
    for &c in order.iter().cycle().take(total - assigned) {
        quota[c] += 1;
    }
    // Every class must appear so per-speaker folds always contain all four.
    for c in 0..4 {
        while quota[c] == 0 {
            let donor = (0..4).max_by_key(|&d| quota[d]).unwrap();
            quota[donor] -= 1;
            quota[c] += 1;
        }
    }
    quota
}

/// Frame-level speech layout: two bursts separated by silence, placed
/// deterministically from the frame count and fraction alone.
fn speech_layout(frames: usize, fraction: f64) -> Vec<u8> {
    let speech = ((frames as f64) * fraction).round() as usize;
    let speech = speech.min(frames);
    if speech == 0 {
        return vec![0; frames];
    }
    if speech == frames {
        return vec![1; frames];
    }
    let s1 = speech / 2;
    let s2 = speech - s1;
    let rest = frames - speech;
    let g1 = rest / 3;
    let g2 = (rest - g1) / 2;
    let g3 = rest - g1 - g2;
    let mut mask = Vec::with_capacity(frames);
    mask.extend(std::iter::repeat_n(0, g1));
    mask.extend(std::iter::repeat_n(1, s1));
    mask.extend(std::iter::repeat_n(0, g2));
    mask.extend(std::iter::repeat_n(1, s2));
    mask.extend(std::iter::repeat_n(0, g3));
    mask
}

fn synth_signal(
    rng: &mut ChaCha20Rng,
    spec: &GeneratorSpec,
    class: usize,
    speaker_mult: f64,
    layout: &[u8],
) -> Vec<f32> {
    let pool = tone_pool(spec.sample_rate);
    let rate = spec.sample_rate as f64;
    let frame_samples = (spec.sample_rate as u64 * SYNTH_FRAME_MS as u64 / 1000) as usize;

    let speech_tones: Vec<f64> = (0..POOL)
        .filter(|j| j % 4 == class)
        .map(|j| pool[j] * speaker_mult)
        .collect();
    let speech_phases: Vec<f64> = speech_tones
        .iter()
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();

    // Distractor chord: three distinct pool entries, drawn independently of
    // the class and without the speaker detune.
    let mut picks: Vec<usize> = (0..POOL).collect();
    for i in 0..3 {
        let j = rng.gen_range(i..POOL);
        picks.swap(i, j);
    }
    let distractor_tones: Vec<f64> = picks[..3].iter().map(|&j| pool[j]).collect();
    let distractor_phases: Vec<f64> = distractor_tones
        .iter()
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();

    let mut samples = Vec::with_capacity(layout.len() * frame_samples);
    for (frame, &is_speech) in layout.iter().enumerate() {
        let (tones, phases) = if is_speech == 1 {
            (&speech_tones, &speech_phases)
        } else {
            (&distractor_tones, &distractor_phases)
        };
        for s in 0..frame_samples {
            let t = (frame * frame_samples + s) as f64 / rate;
            let mut v = 0.0;
            for (f, p) in tones.iter().zip(phases) {
                v += TONE_AMPLITUDE * (std::f64::consts::TAU * f * t + p).sin();
            }
            if spec.noise_level > 0.0 {
                v += rng.gen_range(-spec.noise_level..spec.noise_level);
            }
            samples.push(v as f32);
        }
    }
    samples
}

/// Generates wav files, ground-truth masks, and the manifest under
/// `out_dir` (layout: manifest.csv, wav/<id>.wav, vad/<id>.txt). The same
/// spec and seed always produce byte-identical files. Returns the manifest
/// path.
pub fn generate_corpus(spec: &GeneratorSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wav");
    let vad_dir = out_dir.join("vad");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    std::fs::create_dir_all(&vad_dir).map_err(|e| Error::io(&vad_dir, e))?;

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let speaker_mults: Vec<f64> = (0..spec.speakers)
        .map(|_| 1.0 + rng.gen_range(-0.03..0.03))
        .collect();
    let weights = if spec.balanced {
        &BALANCED_WEIGHTS
    } else {
        &SKEWED_WEIGHTS
    };
    let quota = class_quota(spec.utterances_per_speaker, weights);

    let mut manifest = String::from(
        "id,audio_path,feature_path,speaker_id,session_id,label,valence,arousal,\
         valence_min,valence_max,arousal_min,arousal_max,duration_s\n",
    );

    for (s, &detune) in speaker_mults.iter().enumerate() {
        let speaker = format!("spk{s:02}");
        let session = format!("sess{:02}", s / 2);

        let mut labels = Vec::with_capacity(spec.utterances_per_speaker);
        for (c, &q) in quota.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c, q));
        }
        labels.shuffle(&mut rng);

        for (u, &class) in labels.iter().enumerate() {
            let id = format!("{speaker}_u{u:03}");
            let frames = rng.gen_range(40..=60usize);
            let layout = speech_layout(frames, spec.speech_fraction);
            let samples = synth_signal(&mut rng, spec, class, detune, &layout);
            let valence = (CLASS_VALENCE[class] + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
            let arousal = (CLASS_AROUSAL[class] + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);

            let clip = AudioClip {
                samples,
                sample_rate: spec.sample_rate,
                id: id.clone(),
            };
            save_wav(&clip, wav_dir.join(format!("{id}.wav")))?;
            let mask = VadMask {
                decisions: layout,
                frame_ms: SYNTH_FRAME_MS,
                utterance_id: id.clone(),
            };
            save_mask(&mask, vad_dir.join(format!("{id}.txt")))?;

            let duration = frames as f64 * SYNTH_FRAME_MS as f64 / 1000.0;
            manifest.push_str(&format!(
                "{id},wav/{id}.wav,,{speaker},{session},{label},{valence:.4},{arousal:.4},\
                 0,1,0,1,{duration:.3}\n",
                label = CLASS_LABELS[class],
            ));
        }
    }

    let manifest_path = out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}
