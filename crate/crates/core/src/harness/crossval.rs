//! Leave-one-speaker-out cross-validation driver.
//!
//! One run per speaker: that speaker is held out for testing, the next
//! speaker in sorted order validates early stopping, everyone else trains.
//! Features and masks are prepared once up front, so a broken input file
//! surfaces before any training starts. Each run writes its own directory
//! (checkpoint, training log, per-fold report, status); the sweep finishes
//! with aggregate.json plus confusion table exports at the top level.
//! Every output byte is a pure function of the manifest and the config.

use crate::audio::{load_wav, truncate, FrameSpec};
use crate::error::{Error, Result};
use crate::features::{extract_logmel, load_features, FeatureMatrix, MelConfig};
use crate::harness::folds::{build_folds, FoldRun};
use crate::harness::manifest::{load_manifest, UtteranceRecord, CLASS_LABELS};
use crate::metrics::{
    argmax, confusion_csv, confusion_svg, unweighted_accuracy, weighted_accuracy, ConfusionMatrix,
    FoldMetrics, MetricsReport,
};
use crate::pooling::align_mask;
use crate::training::{save_checkpoint, train, EmotionModel, ModelConfig, TrainItem};
use crate::vad::{detect, read_mask, VadConfig};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Where per-frame speech decisions come from.
#[derive(Debug, Clone)]
pub enum VadSource {
    /// Run the detector on each utterance's audio.
    Builtin,
    /// Read `<dir>/<utterance id>.txt` mask files.
    External(PathBuf),
    /// Read masks from the `vad/` directory next to the manifest.
    Truth,
}

#[derive(Debug, Clone)]
pub struct CrossvalOptions {
    pub vad: VadSource,
    pub vad_config: VadConfig,
    pub mel: MelConfig,
    pub frame: FrameSpec,
    /// Audio longer than this is cut before feature extraction.
    pub max_seconds: Option<f64>,
}

impl Default for CrossvalOptions {
    fn default() -> Self {
        CrossvalOptions {
            vad: VadSource::Builtin,
            vad_config: VadConfig::default(),
            mel: MelConfig::default(),
            frame: FrameSpec::default(),
            max_seconds: Some(19.0),
        }
    }
}

/// One manifest row converted to model inputs.
pub struct PreparedItem {
    pub id: String,
    pub speaker: String,
    pub item: TrainItem<f32>,
}

fn with_id<T>(id: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::BadConfig(msg) => Error::BadConfig(format!("{id}: {msg}")),
        other => other,
    })
}

fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.txt"))
}

/// Loads or extracts features and a speech mask for every record. The
/// feature column count must match `feature_dim` exactly.
pub fn prepare_items(
    records: &[UtteranceRecord],
    manifest_dir: &Path,
    feature_dim: usize,
    opts: &CrossvalOptions,
) -> Result<Vec<PreparedItem>> {
    let mut prepared = Vec::with_capacity(records.len());
    for record in records {
        let clip = match &record.audio_path {
            Some(path) => {
                let full = load_wav(path)?;
                Some(match opts.max_seconds {
                    Some(cap) => truncate(&full, cap),
                    None => full,
                })
            }
            None => None,
        };

        let features: FeatureMatrix = match &record.feature_path {
            Some(path) => load_features(path)?,
            None => {
                let clip = clip.as_ref().ok_or_else(|| {
                    Error::BadConfig(format!(
                        "{}: no feature file and no audio to extract from",
                        record.id
                    ))
                })?;
                extract_logmel(clip, &opts.frame, &opts.mel)?
            }
        };
        if features.cols() != feature_dim {
            return Err(Error::ShapeMismatch {
                op: "prepare_items",
                detail: format!(
                    "{}: features have {} columns, model expects {}",
                    record.id,
                    features.cols(),
                    feature_dim
                ),
            });
        }

        let mask = match &opts.vad {
            VadSource::Builtin => {
                let clip = clip.as_ref().ok_or_else(|| {
                    Error::BadConfig(format!(
                        "{}: builtin vad needs audio, record has only features",
                        record.id
                    ))
                })?;
                detect(clip, &opts.vad_config)?
            }
            VadSource::External(dir) => with_id(
                &record.id,
                read_mask(mask_path(dir, &record.id), opts.vad_config.frame_ms),
            )?,
            VadSource::Truth => with_id(
                &record.id,
                read_mask(
                    mask_path(&manifest_dir.join("vad"), &record.id),
                    opts.vad_config.frame_ms,
                ),
            )?,
        };
        let keep = align_mask(&mask, &features)?;

        prepared.push(PreparedItem {
            id: record.id.clone(),
            speaker: record.speaker_id.clone(),
            item: TrainItem {
                features: features.data,
                keep,
                label: record.label.index(),
                valence: record.valence_unit() as f32,
                arousal: record.arousal_unit() as f32,
            },
        });
    }
    Ok(prepared)
}

/// Test-set metrics for one trained model.
pub struct EvalOutcome {
    pub confusion: ConfusionMatrix,
    pub metrics: FoldMetrics,
}

/// Runs every item through the model and scores predictions against labels.
pub fn evaluate_split(
    model: &EmotionModel<f32>,
    items: &[TrainItem<f32>],
    name: &str,
) -> Result<EvalOutcome> {
    let classes = model.config.classes;
    let mut cm = ConfusionMatrix::new(classes);
    let mut val_err = 0.0f64;
    let mut aro_err = 0.0f64;
    let mut fallbacks = 0u64;
    for item in items {
        let pred = model.forward_utterance(&item.features, &item.keep)?;
        cm.add(item.label, argmax(&pred.logits))?;
        val_err += (pred.valence as f64 - item.valence as f64).abs();
        aro_err += (pred.arousal as f64 - item.arousal as f64).abs();
        if pred.used_fallback {
            fallbacks += 1;
        }
    }
    let n = items.len().max(1) as f64;
    Ok(EvalOutcome {
        metrics: FoldMetrics {
            name: name.to_string(),
            ua: unweighted_accuracy(&cm)?,
            wa: weighted_accuracy(&cm)?,
            valence_mae: val_err / n,
            arousal_mae: aro_err / n,
            test_items: items.len(),
            sap_fallbacks: fallbacks,
        },
        confusion: cm,
    })
}

#[derive(Serialize)]
struct RunReport<'a> {
    labels: &'a [String],
    fold: &'a FoldMetrics,
    confusion: Vec<Vec<u64>>,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn write_status(run_dir: &Path, error: Option<&str>) {
    let body = match error {
        None => "{\n  \"status\": \"ok\"\n}\n".to_string(),
        Some(e) => {
            let msg = serde_json::to_string(e).unwrap_or_default();
            format!("{{\n  \"status\": \"failed\",\n  \"error\": {msg}\n}}\n")
        }
    };
    // Best effort: a run that cannot even write its status directory has
    // already been reported through the returned error.
    let _ = std::fs::write(run_dir.join("status.json"), body);
}

fn run_one(
    run: &FoldRun,
    run_index: usize,
    run_dir: &Path,
    model_config: &ModelConfig,
    prepared: &[PreparedItem],
    labels: &[String],
) -> Result<(FoldMetrics, ConfusionMatrix)> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;

    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    let mut test_set = Vec::new();
    for p in prepared {
        if p.speaker == run.test {
            test_set.push(p.item.clone());
        } else if p.speaker == run.validation {
            val_set.push(p.item.clone());
        } else {
            debug_assert!(run.train.contains(&p.speaker));
            train_set.push(p.item.clone());
        }
    }

    // Decorrelate runs while keeping the whole sweep a function of one seed.
    let mut config = model_config.clone();
    config.seed = model_config
        .seed
        .wrapping_add((run_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));

    let log_path = run_dir.join("train_log.jsonl");
    let file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let mut trained = train(&config, &train_set, &val_set, Some(&mut log))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    save_checkpoint(&mut trained.model, run_dir.join("model.ckpt"))?;

    let outcome = evaluate_split(&trained.model, &test_set, &run.test)?;
    write_json(
        &run_dir.join("report.json"),
        &RunReport {
            labels,
            fold: &outcome.metrics,
            confusion: outcome.confusion.rows_as_vecs(),
        },
    )?;
    Ok((outcome.metrics, outcome.confusion))
}

/// Runs the full leave-one-speaker-out sweep and writes all artifacts under
/// `out_dir`. A failing run records its error in `run_<speaker>/status.json`
/// and the sweep keeps going; the first error is returned once the remaining
/// runs finish, so partial results stay on disk for inspection.
pub fn run_cross_validation(
    manifest_path: impl AsRef<Path>,
    model_config: &ModelConfig,
    opts: &CrossvalOptions,
    out_dir: impl AsRef<Path>,
) -> Result<MetricsReport> {
    let manifest_path = manifest_path.as_ref();
    let out_dir = out_dir.as_ref();
    model_config.validate()?;
    if model_config.classes != CLASS_LABELS.len() {
        return Err(Error::BadConfig(format!(
            "manifest corpora carry {} classes, config says {}",
            CLASS_LABELS.len(),
            model_config.classes
        )));
    }

    let records = load_manifest(manifest_path)?;
    let manifest_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let plan = build_folds(&records)?;
    let prepared = prepare_items(&records, manifest_dir, model_config.feature_dim, opts)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let labels: Vec<String> = CLASS_LABELS.iter().map(|&l| l.to_string()).collect();
    let mut folds = Vec::with_capacity(plan.runs.len());
    let mut matrices = Vec::with_capacity(plan.runs.len());
    let mut first_error: Option<Error> = None;

    for (r, run) in plan.runs.iter().enumerate() {
        let run_dir = out_dir.join(format!("run_{}", sanitize(&run.test)));
        match run_one(run, r, &run_dir, model_config, &prepared, &labels) {
            Ok((fold, cm)) => {
                write_status(&run_dir, None);
                folds.push(fold);
                matrices.push(cm);
            }
            Err(e) => {
                write_status(&run_dir, Some(&e.to_string()));
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }

    let report = MetricsReport::aggregate(labels, folds, &matrices)?;
    write_json(&out_dir.join("aggregate.json"), &report)?;
    let csv_path = out_dir.join("confusion.csv");
    std::fs::write(&csv_path, confusion_csv(&report.labels, &report.confusion))
        .map_err(|e| Error::io(&csv_path, e))?;
    let svg_path = out_dir.join("confusion.svg");
    std::fs::write(&svg_path, confusion_svg(&report.labels, &report.confusion))
        .map_err(|e| Error::io(&svg_path, e))?;
    Ok(report)
}
