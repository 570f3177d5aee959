//! Deterministic fixtures shared by the criterion benchmarks: random
//! feature matrices, speech masks, and a synthetic clip of alternating
//! tone bursts and silence so the detector has real transitions to find.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use segpool::{AlignedMask, AudioClip, Mat};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat<f32> {
    let mut rng = rng(seed);
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random mask with roughly `fraction` speech; the first frame is always
/// speech so pooling never takes the empty-mask fallback.
pub fn speech_mask(rows: usize, fraction: f64, seed: u64) -> AlignedMask {
    let mut rng = rng(seed);
    let mut keep: Vec<u8> = (0..rows)
        .map(|_| u8::from(rng.gen_bool(fraction)))
        .collect();
    keep[0] = 1;
    AlignedMask { keep }
}

/// 440 Hz bursts of 250 ms every half second, silence in between.
pub fn tone_clip(seconds: f64, sample_rate: u32) -> AudioClip {
    let n = (seconds * sample_rate as f64) as usize;
    let samples: Vec<f32> = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            if (t * 2.0).fract() < 0.5 {
                (0.3 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()) as f32
            } else {
                0.0
            }
        })
        .collect();
    AudioClip {
        samples,
        sample_rate,
        id: "bench".into(),
    }
}
