//! Speech emotion recognition built around voice-activity-gated pooling.
//!
//! The pipeline: load mono 16-bit wav audio, locate speech with a sub-band
//! energy detector, extract log-mel features, pool frame features into a
//! fixed-size utterance vector (mean over all frames, attention-refined mean
//! over speech frames, or both concatenated), and train a small multi-task
//! head that predicts a discrete emotion plus valence and arousal. A
//! leave-one-speaker-out harness ties the stages together and aggregates
//! fold metrics with Student-t confidence intervals.

pub mod audio;
pub mod error;
pub mod features;
pub mod harness;
pub mod mat;
pub mod metrics;
pub mod neural;
pub mod pooling;
pub mod training;
pub mod vad;

pub use audio::{AudioClip, FrameSpec};
pub use error::{Error, Result};
pub use features::{FeatureMatrix, MelConfig};
pub use harness::{
    CrossvalOptions, EmotionLabel, FoldPlan, GeneratorSpec, UtteranceRecord, VadSource,
};
pub use mat::{Mat, Scalar};
pub use metrics::{ConfusionMatrix, FoldMetrics, FoldSummary, MetricsReport};
pub use pooling::{AlignedMask, SapOutput, SpeechRepresentation};
pub use training::{
    verify_gradients, EmotionModel, GradSuiteEntry, ModelConfig, PoolingMode, TrainItem,
    TrainedModel,
};
pub use vad::{VadConfig, VadMask};
