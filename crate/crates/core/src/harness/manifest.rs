//! Dataset manifests: one CSV row per utterance.
//!
//! Columns: id, audio_path, feature_path, speaker_id, session_id, label,
//! valence, arousal, valence_min, valence_max, arousal_min, arousal_max,
//! duration_s. Relative paths resolve against the manifest's directory.
//! feature_path may be empty, meaning features are extracted from the audio.

use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

pub const CLASS_LABELS: [&str; 4] = ["angry", "happy", "neutral", "sad"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmotionLabel {
    Angry,
    Happy,
    Neutral,
    Sad,
}

impl EmotionLabel {
    pub fn index(&self) -> usize {
        match self {
            EmotionLabel::Angry => 0,
            EmotionLabel::Happy => 1,
            EmotionLabel::Neutral => 2,
            EmotionLabel::Sad => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<EmotionLabel> {
        match i {
            0 => Some(EmotionLabel::Angry),
            1 => Some(EmotionLabel::Happy),
            2 => Some(EmotionLabel::Neutral),
            3 => Some(EmotionLabel::Sad),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        CLASS_LABELS[self.index()]
    }

    /// Parses a label, merging "excited" into happy; anything outside the
    /// four-class set is rejected.
    pub fn parse(s: &str) -> Result<EmotionLabel> {
        match s {
            "angry" => Ok(EmotionLabel::Angry),
            "happy" | "excited" => Ok(EmotionLabel::Happy),
            "neutral" => Ok(EmotionLabel::Neutral),
            "sad" => Ok(EmotionLabel::Sad),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio_path: Option<PathBuf>,
    pub feature_path: Option<PathBuf>,
    pub speaker_id: String,
    pub session_id: String,
    pub label: EmotionLabel,
    pub valence: f64,
    pub arousal: f64,
    pub valence_min: f64,
    pub valence_max: f64,
    pub arousal_min: f64,
    pub arousal_max: f64,
    pub duration_s: f64,
}

impl UtteranceRecord {
    /// Valence rescaled to [0, 1] from the manifest-declared range.
    pub fn valence_unit(&self) -> f64 {
        (self.valence - self.valence_min) / (self.valence_max - self.valence_min)
    }

    /// Arousal rescaled to [0, 1] from the manifest-declared range.
    pub fn arousal_unit(&self) -> f64 {
        (self.arousal - self.arousal_min) / (self.arousal_max - self.arousal_min)
    }
}

const REQUIRED_COLUMNS: [&str; 13] = [
    "id",
    "audio_path",
    "feature_path",
    "speaker_id",
    "session_id",
    "label",
    "valence",
    "arousal",
    "valence_min",
    "valence_max",
    "arousal_min",
    "arousal_max",
    "duration_s",
];

fn parse_f64(path: &Path, line: usize, field: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::ParseError {
        path: path.display().to_string(),
        line,
        detail: format!("{field} is not a number: '{raw}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::ParseError {
            path: path.display().to_string(),
            line,
            detail: format!("{field} must be finite, got {v}"),
        });
    }
    Ok(v)
}

/// Loads and validates a manifest. Every record carries at least one of
/// audio_path / feature_path, a label from the four-class set (with the
/// excited-to-happy merge applied), and valence/arousal values inside
/// their declared ranges.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::ParseError {
            path: path.display().to_string(),
            line: 0,
            detail: e.to_string(),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::ParseError {
            path: path.display().to_string(),
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    let mut col = std::collections::HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        col.insert(name.to_string(), i);
    }
    for required in REQUIRED_COLUMNS {
        if !col.contains_key(required) {
            return Err(Error::MissingColumn(required.to_string()));
        }
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::ParseError {
            path: path.display().to_string(),
            line: 0,
            detail: e.to_string(),
        })?;
        let line = row
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(records.len() + 2);
        let field = |name: &str| row.get(col[name]).unwrap_or("").to_string();

        let id = field("id");
        if id.is_empty() {
            return Err(Error::ParseError {
                path: path.display().to_string(),
                line,
                detail: "id must not be empty".into(),
            });
        }

        let resolve = |raw: String| -> Option<PathBuf> {
            if raw.is_empty() {
                None
            } else {
                let p = PathBuf::from(raw);
                Some(if p.is_absolute() { p } else { base.join(p) })
            }
        };
        let audio_path = resolve(field("audio_path"));
        let feature_path = resolve(field("feature_path"));
        if audio_path.is_none() && feature_path.is_none() {
            return Err(Error::ParseError {
                path: path.display().to_string(),
                line,
                detail: format!("{id}: need audio_path or feature_path"),
            });
        }

        let label = EmotionLabel::parse(&field("label"))?;
        let valence = parse_f64(path, line, "valence", &field("valence"))?;
        let arousal = parse_f64(path, line, "arousal", &field("arousal"))?;
        let valence_min = parse_f64(path, line, "valence_min", &field("valence_min"))?;
        let valence_max = parse_f64(path, line, "valence_max", &field("valence_max"))?;
        let arousal_min = parse_f64(path, line, "arousal_min", &field("arousal_min"))?;
        let arousal_max = parse_f64(path, line, "arousal_max", &field("arousal_max"))?;
        let duration_s = parse_f64(path, line, "duration_s", &field("duration_s"))?;

        if valence_min >= valence_max || arousal_min >= arousal_max {
            return Err(Error::ParseError {
                path: path.display().to_string(),
                line,
                detail: format!("{id}: annotation ranges must have min < max"),
            });
        }
        if !(valence_min..=valence_max).contains(&valence) {
            return Err(Error::ParseError {
                path: path.display().to_string(),
                line,
                detail: format!("{id}: valence {valence} outside [{valence_min}, {valence_max}]"),
            });
        }
        if !(arousal_min..=arousal_max).contains(&arousal) {
            return Err(Error::ParseError {
                path: path.display().to_string(),
                line,
                detail: format!("{id}: arousal {arousal} outside [{arousal_min}, {arousal_max}]"),
            });
        }
        if duration_s <= 0.0 {
            return Err(Error::ParseError {
                path: path.display().to_string(),
                line,
                detail: format!("{id}: duration_s must be positive"),
            });
        }

        records.push(UtteranceRecord {
            id,
            audio_path,
            feature_path,
            speaker_id: field("speaker_id"),
            session_id: field("session_id"),
            label,
            valence,
            arousal,
            valence_min,
            valence_max,
            arousal_min,
            arousal_max,
            duration_s,
        });
    }
    Ok(records)
}
