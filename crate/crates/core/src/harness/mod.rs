//! Corpus handling and the cross-validation sweep: manifest parsing,
//! speaker-exclusive fold planning, a synthetic corpus generator, and the
//! driver that trains and scores one model per held-out speaker.

pub mod crossval;
pub mod folds;
pub mod manifest;
pub mod synth;

pub use crossval::{
    evaluate_split, prepare_items, run_cross_validation, CrossvalOptions, EvalOutcome,
    PreparedItem, VadSource,
};
pub use folds::{build_folds, FoldPlan, FoldRun};
pub use manifest::{load_manifest, EmotionLabel, UtteranceRecord, CLASS_LABELS};
pub use synth::{generate_corpus, GeneratorSpec, SYNTH_FRAME_MS};
