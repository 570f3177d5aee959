//! Leave-one-speaker-out fold construction.
//!
//! Each speaker forms one fold. Run r holds out speaker r for testing,
//! speaker (r + 1) mod n for validation, and trains on the rest, so with
//! 10 speakers every run splits 8/1/1 and each speaker is tested exactly
//! once.

use crate::error::{Error, Result};
use crate::harness::manifest::UtteranceRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRun {
    pub test: String,
    pub validation: String,
    pub train: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FoldPlan {
    /// All speakers, sorted; fold i belongs to speakers[i].
    pub speakers: Vec<String>,
    pub runs: Vec<FoldRun>,
}

pub fn build_folds(records: &[UtteranceRecord]) -> Result<FoldPlan> {
    let mut speakers: Vec<String> = records.iter().map(|r| r.speaker_id.clone()).collect();
    speakers.sort();
    speakers.dedup();

    let n = speakers.len();
    if n < 3 {
        return Err(Error::SingleSpeaker(n));
    }

    let runs = (0..n)
        .map(|r| {
            let test = speakers[r].clone();
            let validation = speakers[(r + 1) % n].clone();
            let train = speakers
                .iter()
                .filter(|s| **s != test && **s != validation)
                .cloned()
                .collect();
            FoldRun {
                test,
                validation,
                train,
            }
        })
        .collect();
    Ok(FoldPlan { speakers, runs })
}
