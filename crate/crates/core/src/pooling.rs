//! Utterance-level pooling of frame features.
//!
//! Three summaries of a (frames x dims) matrix:
//!   - global average pooling over every frame,
//!   - segmental average pooling over speech frames only, with the kept
//!     frames contextualized by self-attention before averaging,
//!   - their concatenation.
//!
//! Speech frames come from a voice-activity mask on its own time grid, which
//! is resampled onto the feature grid by duration-weighted overlap.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::mat::{Mat, Scalar};
use crate::neural::AttentionBlock;
use crate::vad::VadMask;

/// Per-feature-frame keep bits, aligned to a specific feature matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedMask {
    pub keep: Vec<u8>,
}

impl AlignedMask {
    pub fn all_ones(len: usize) -> Self {
        AlignedMask { keep: vec![1; len] }
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k == 1).count()
    }
}

/// Column means over every row.
pub fn gap<T: Scalar>(m: &Mat<T>) -> Result<Vec<T>> {
    if m.rows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let n = T::from_f64_lossy(m.rows() as f64);
    let mut acc = vec![T::zero(); m.cols()];
    for r in 0..m.rows() {
        for (a, &v) in acc.iter_mut().zip(m.row(r)) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a = *a / n;
    }
    Ok(acc)
}

/// Projects a voice-activity mask onto the feature frame grid.
///
/// Feature frame i spans [i*stride, i*stride + window) ms. It is kept when
/// at least half of its duration that the mask covers overlaps speech
/// frames. The mask may stop up to one VAD frame short of the feature
/// timeline (trailing partial frames); anything worse is a mismatch.
pub fn align_mask(mask: &VadMask, features: &FeatureMatrix) -> Result<AlignedMask> {
    if mask.decisions.is_empty() {
        return Err(Error::EmptyMask);
    }
    if features.rows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let window = features.window_ms as u64;
    let stride = features.stride_ms as u64;
    let vad_frame = mask.frame_ms as u64;
    let mask_end = mask.decisions.len() as u64 * vad_frame;
    let features_end = (features.rows() as u64 - 1) * stride + window;

    if features_end > mask_end + vad_frame {
        return Err(Error::TimelineMismatch {
            gap_ms: features_end - mask_end,
        });
    }

    let mut keep = Vec::with_capacity(features.rows());
    for i in 0..features.rows() as u64 {
        let start = i * stride;
        let end = start + window;
        let covered_end = end.min(mask_end);
        if covered_end <= start {
            keep.push(0);
            continue;
        }
        let covered = covered_end - start;

        let first = (start / vad_frame) as usize;
        let last = (covered_end.saturating_sub(1) / vad_frame) as usize;
        let mut speech = 0u64;
        for (j, &d) in mask.decisions[first..=last.min(mask.decisions.len() - 1)]
            .iter()
            .enumerate()
        {
            if d != 1 {
                continue;
            }
            let frame_start = (first + j) as u64 * vad_frame;
            let frame_end = frame_start + vad_frame;
            speech += frame_end.min(covered_end) - frame_start.max(start);
        }
        keep.push(u8::from(2 * speech >= covered));
    }
    Ok(AlignedMask { keep })
}

/// Rows of `m` whose keep bit is set, in their original order.
pub fn gather_speech<T: Scalar>(m: &Mat<T>, mask: &AlignedMask) -> Result<Mat<T>> {
    if mask.keep.len() != m.rows() {
        return Err(Error::LengthMismatch {
            expected: m.rows(),
            got: mask.keep.len(),
        });
    }
    let kept = mask.kept();
    let mut out = Mat::zeros(kept, m.cols());
    let mut w = 0;
    for (r, &k) in mask.keep.iter().enumerate() {
        if k == 1 {
            out.row_mut(w).copy_from_slice(m.row(r));
            w += 1;
        }
    }
    Ok(out)
}

/// Segmental average pooling output.
#[derive(Debug, Clone)]
pub struct SapOutput<T> {
    pub vector: Vec<T>,
    /// Set when the mask kept nothing and the pool fell back to all frames.
    pub used_fallback: bool,
}

/// Mean over the speech frames, contextualized by `attention` when given.
/// Passing `None` bypasses attention and averages the gathered rows
/// directly, which makes the all-speech case equal [`gap`] exactly.
///
/// An all-zero mask falls back to keeping every frame and reports it.
pub fn sap<T: Scalar>(
    m: &Mat<T>,
    mask: &AlignedMask,
    attention: Option<&AttentionBlock<T>>,
) -> Result<SapOutput<T>> {
    if m.rows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if mask.keep.len() != m.rows() {
        return Err(Error::LengthMismatch {
            expected: m.rows(),
            got: mask.keep.len(),
        });
    }
    // A mask with no speech falls back to a plain mean over every frame,
    // skipping attention so the result coincides with gap(m) exactly.
    if mask.kept() == 0 {
        return Ok(SapOutput {
            vector: gap(m)?,
            used_fallback: true,
        });
    }

    let gathered = gather_speech(m, mask)?;
    let vector = match attention {
        Some(block) => gap(&block.forward(&gathered)?)?,
        None => gap(&gathered)?,
    };
    Ok(SapOutput {
        vector,
        used_fallback: false,
    })
}

/// Concatenated global and segmental summaries, dimension 2 * dims.
#[derive(Debug, Clone)]
pub struct SpeechRepresentation<T> {
    pub values: Vec<T>,
    pub sap_fallback: bool,
}

pub fn speech_representation<T: Scalar>(
    m: &Mat<T>,
    mask: &AlignedMask,
    attention: Option<&AttentionBlock<T>>,
) -> Result<SpeechRepresentation<T>> {
    let mut values = gap(m)?;
    let sap_out = sap(m, mask, attention)?;
    values.extend_from_slice(&sap_out.vector);
    Ok(SpeechRepresentation {
        values,
        sap_fallback: sap_out.used_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn features_of(m: Mat<f32>, window_ms: u16, stride_ms: u16) -> FeatureMatrix {
        FeatureMatrix {
            data: m,
            window_ms,
            stride_ms,
            utterance_id: "t".into(),
        }
    }

    fn vad(decisions: Vec<u8>, frame_ms: u32) -> VadMask {
        VadMask {
            decisions,
            frame_ms,
            utterance_id: "t".into(),
        }
    }

    /// Kahan-compensated column means, an independent reference for gap.
    fn gap_oracle(m: &Mat<f32>) -> Vec<f32> {
        (0..m.cols())
            .map(|c| {
                let mut sum = 0.0f64;
                let mut comp = 0.0f64;
                for r in 0..m.rows() {
                    let y = m.get(r, c) as f64 - comp;
                    let t = sum + y;
                    comp = (t - sum) - y;
                    sum = t;
                }
                (sum / m.rows() as f64) as f32
            })
            .collect()
    }

    #[test]
    fn gap_matches_compensated_summation() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(31);
        for _ in 0..50 {
            let rows = rng.gen_range(1..60);
            let cols = rng.gen_range(1..20);
            let m = Mat::from_fn(rows, cols, |_, _| rng.gen_range(-100.0f32..100.0));
            let got = gap(&m).unwrap();
            let want = gap_oracle(&m);
            for (g, w) in got.iter().zip(&want) {
                assert!(
                    (g - w).abs() <= 1e-3 * w.abs().max(1.0),
                    "gap {g} vs oracle {w}"
                );
            }
        }
    }

    #[test]
    fn gap_of_empty_matrix_errors() {
        assert!(matches!(
            gap(&Mat::<f32>::zeros(0, 4)),
            Err(Error::EmptyMatrix)
        ));
    }

    #[test]
    fn align_follows_duration_weighted_overlap() {
        // 25 ms windows, 20 ms stride against 30 ms VAD frames [1, 0, 1].
        // Worked out by hand:
        //   frame 0 spans  0..25  -> 25 ms speech / 25 ms      -> keep
        //   frame 1 spans 20..45  -> 10 ms speech / 25 ms      -> drop
        //   frame 2 spans 40..65  ->  5 ms speech / 25 ms      -> drop
        //   frame 3 spans 60..85  -> 25 ms speech / 25 ms      -> keep
        //   frame 4 spans 80..105 -> 10 ms speech / 10 covered -> keep
        let fm = features_of(Mat::zeros(5, 3), 25, 20);
        let mask = vad(vec![1, 0, 1], 30);
        let aligned = align_mask(&mask, &fm).unwrap();
        assert_eq!(aligned.keep, vec![1, 0, 0, 1, 1]);
    }

    #[test]
    fn exactly_half_overlap_keeps_the_frame() {
        // 20 ms windows on 10 ms VAD frames: [1, 0] gives exactly half.
        let fm = features_of(Mat::zeros(1, 2), 20, 20);
        let mask = vad(vec![1, 0], 10);
        let aligned = align_mask(&mask, &fm).unwrap();
        assert_eq!(aligned.keep, vec![1]);
    }

    #[test]
    fn short_mask_within_one_frame_is_tolerated_beyond_that_errors() {
        let fm = features_of(Mat::zeros(5, 2), 25, 20); // timeline 105 ms
                                                        // 3 frames * 30 ms = 90; short by 15 ms which is < 30.
        assert!(align_mask(&vad(vec![1, 1, 1], 30), &fm).is_ok());
        // 2 frames * 30 ms = 60; short by 45 ms.
        match align_mask(&vad(vec![1, 1], 30), &fm) {
            Err(Error::TimelineMismatch { gap_ms }) => assert_eq!(gap_ms, 45),
            other => panic!("expected TimelineMismatch, got {other:?}"),
        }
    }

    #[test]
    fn gather_matches_brute_force_filter() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(32);
        for _ in 0..200 {
            let rows = rng.gen_range(1..40);
            let cols = rng.gen_range(1..12);
            let m = Mat::from_fn(rows, cols, |_, _| rng.gen_range(-5.0f32..5.0));
            let keep: Vec<u8> = (0..rows).map(|_| rng.gen_range(0..=1)).collect();
            let mask = AlignedMask { keep: keep.clone() };

            let got = gather_speech(&m, &mask).unwrap();
            let want: Vec<&[f32]> = (0..rows)
                .filter(|&r| keep[r] == 1)
                .map(|r| m.row(r))
                .collect();
            assert_eq!(got.rows(), want.len());
            for (r, row) in want.iter().enumerate() {
                assert_eq!(got.row(r), *row);
            }
        }
    }

    #[test]
    fn gather_rejects_mismatched_mask_length() {
        let m = Mat::<f32>::zeros(4, 2);
        let mask = AlignedMask { keep: vec![1; 5] };
        assert!(matches!(
            gather_speech(&m, &mask),
            Err(Error::LengthMismatch {
                expected: 4,
                got: 5
            })
        ));
    }

    #[test]
    fn bypass_sap_with_all_speech_equals_gap() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(33);
        let m = Mat::from_fn(24, 8, |_, _| rng.gen_range(-3.0f32..3.0));
        let mask = AlignedMask::all_ones(24);
        let sap_out = sap(&m, &mask, None).unwrap();
        let gap_out = gap(&m).unwrap();
        assert_eq!(sap_out.vector, gap_out);
        assert!(!sap_out.used_fallback);
    }

    #[test]
    fn empty_mask_falls_back_to_all_frames_and_reports_it() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(34);
        let m = Mat::from_fn(10, 4, |_, _| rng.gen_range(-1.0f32..1.0));
        let mask = AlignedMask { keep: vec![0; 10] };

        let out = sap(&m, &mask, None).unwrap();
        assert!(out.used_fallback);
        assert_eq!(out.vector, gap(&m).unwrap());

        // Fallback skips attention entirely, so even with a block supplied
        // the result is the plain all-frame mean.
        let block = AttentionBlock::<f32>::new(4, 2, true, &mut rng).unwrap();
        let with_attn = sap(&m, &mask, Some(&block)).unwrap();
        assert!(with_attn.used_fallback);
        assert_eq!(with_attn.vector, gap(&m).unwrap());
    }

    #[test]
    fn constant_rows_pool_to_that_row() {
        let row = [2.5f32, -1.0, 0.25];
        let m = Mat::from_fn(7, 3, |_, c| row[c]);
        let mask = AlignedMask {
            keep: vec![0, 1, 0, 1, 1, 0, 0],
        };
        let out = sap(&m, &mask, None).unwrap();
        for (v, r) in out.vector.iter().zip(&row) {
            assert!((v - r).abs() < 1e-6);
        }
    }

    #[test]
    fn representation_concatenates_gap_then_sap() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(35);
        let m = Mat::from_fn(12, 5, |_, _| rng.gen_range(-2.0f32..2.0));
        let mask = AlignedMask {
            keep: (0..12).map(|r| u8::from(r % 3 == 0)).collect(),
        };
        let block = AttentionBlock::<f32>::new(5, 1, true, &mut rng).unwrap();
        let rep = speech_representation(&m, &mask, Some(&block)).unwrap();
        assert_eq!(rep.values.len(), 10);
        assert_eq!(&rep.values[..5], gap(&m).unwrap().as_slice());
        assert_eq!(
            &rep.values[5..],
            sap(&m, &mask, Some(&block)).unwrap().vector.as_slice()
        );
        assert!(!rep.sap_fallback);
    }

    #[test]
    fn gather_keeps_relative_order_under_permutation() {
        // Permuting rows and the mask the same way permutes the gathered
        // rows identically: gather commutes with row permutation.
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(36);
        let rows = 15;
        let m = Mat::from_fn(rows, 3, |r, c| (r * 3 + c) as f32);
        let keep: Vec<u8> = (0..rows).map(|_| rng.gen_range(0..=1)).collect();

        let mut perm: Vec<usize> = (0..rows).collect();
        for i in (1..rows).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let pm = Mat::from_fn(rows, 3, |r, c| m.get(perm[r], c));
        let pkeep: Vec<u8> = (0..rows).map(|r| keep[perm[r]]).collect();

        let direct = gather_speech(&pm, &AlignedMask { keep: pkeep }).unwrap();
        // Brute force on the permuted matrix.
        let mut expected = Vec::new();
        for r in 0..rows {
            if keep[perm[r]] == 1 {
                expected.push(m.row(perm[r]).to_vec());
            }
        }
        assert_eq!(direct.rows(), expected.len());
        for (r, row) in expected.iter().enumerate() {
            assert_eq!(direct.row(r), row.as_slice());
        }
    }
}
