//! Model assembly and the training loop.
//!
//! An utterance flows feature matrix -> pooled representation -> linear
//! projection -> three heads (discrete classifier plus valence and arousal
//! regressors). Pooling happens per utterance before batching, so batches
//! are matrices of fixed-size vectors and no padding or attention masking
//! is ever needed. Training minimizes
//! alpha * L_discrete + beta * L_valence + gamma * L_arousal
//! with Adam under a warmup-plus-cosine schedule, early-stopping on total
//! validation loss and returning the best-epoch parameters.

use crate::error::{Error, Result};
use crate::mat::{Mat, Scalar};
use crate::neural::params::with_prefix;
use crate::neural::{
    class_weights, mae_loss, weighted_cross_entropy, Adam, AdamConfig, AttentionBlock,
    AttentionCache, LinearLayer, ParamBlockMut, Parameterized,
};
use crate::pooling::{gap, gather_speech, AlignedMask};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Which pooled representation feeds the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    GapOnly,
    SapOnly,
    Sr,
}

impl PoolingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PoolingMode::GapOnly => "gap_only",
            PoolingMode::SapOnly => "sap_only",
            PoolingMode::Sr => "sr",
        }
    }
}

impl std::str::FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gap_only" => Ok(PoolingMode::GapOnly),
            "sap_only" => Ok(PoolingMode::SapOnly),
            "sr" => Ok(PoolingMode::Sr),
            other => Err(Error::BadConfig(format!(
                "unknown pooling mode '{other}', expected gap_only, sap_only, or sr"
            ))),
        }
    }
}

impl std::fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything needed to build the model and run one training job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub classes: usize,
    pub projection_dim: usize,
    pub heads: usize,
    pub residual: bool,
    pub bypass_attention: bool,
    pub pooling: PoolingMode,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 40,
            classes: 4,
            projection_dim: 32,
            heads: 4,
            residual: true,
            bypass_attention: false,
            pooling: PoolingMode::Sr,
            alpha: 0.5,
            beta: 0.25,
            gamma: 0.25,
            batch_size: 64,
            epochs: 30,
            base_lr: 3e-5,
            warmup_ratio: 0.1,
            patience: 5,
            seed: 17,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::BadConfig("feature_dim must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::BadConfig("need at least two classes".into()));
        }
        if self.projection_dim == 0 {
            return Err(Error::BadConfig("projection_dim must be positive".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::BadConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.alpha + self.beta + self.gamma <= 0.0 {
            return Err(Error::BadConfig(
                "loss coefficients must not all be zero".into(),
            ));
        }
        if self.uses_attention()
            && (self.heads == 0 || !self.feature_dim.is_multiple_of(self.heads))
        {
            return Err(Error::BadConfig(format!(
                "feature_dim {} must divide into {} heads",
                self.feature_dim, self.heads
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::BadConfig("epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::BadConfig("patience must be at least 1 epoch".into()));
        }
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(Error::BadConfig(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::BadConfig(format!(
                "warmup_ratio must lie in [0, 1], got {}",
                self.warmup_ratio
            )));
        }
        Ok(())
    }

    /// Attention is built only when a speech-gated path exists and is not
    /// explicitly bypassed.
    pub fn uses_attention(&self) -> bool {
        matches!(self.pooling, PoolingMode::SapOnly | PoolingMode::Sr) && !self.bypass_attention
    }

    /// Width of the pooled vector feeding the projection.
    pub fn rep_dim(&self) -> usize {
        match self.pooling {
            PoolingMode::GapOnly | PoolingMode::SapOnly => self.feature_dim,
            PoolingMode::Sr => 2 * self.feature_dim,
        }
    }

    /// True when both configs build byte-compatible parameter sets.
    pub fn architecture_matches(&self, other: &ModelConfig) -> bool {
        self.feature_dim == other.feature_dim
            && self.classes == other.classes
            && self.projection_dim == other.projection_dim
            && self.heads == other.heads
            && self.residual == other.residual
            && self.bypass_attention == other.bypass_attention
            && self.pooling == other.pooling
    }
}

/// One utterance ready for training: pooled-input features, the aligned
/// speech mask, and its three targets. Valence and arousal are expected
/// already rescaled to [0, 1].
#[derive(Debug, Clone)]
pub struct TrainItem<T: Scalar> {
    pub features: Mat<T>,
    pub keep: AlignedMask,
    pub label: usize,
    pub valence: T,
    pub arousal: T,
}

/// Prediction for one utterance.
#[derive(Debug, Clone)]
pub struct UtterancePrediction<T> {
    pub logits: Vec<T>,
    pub valence: T,
    pub arousal: T,
    pub used_fallback: bool,
}

/// Loss components for one batch, reported in f64 regardless of the
/// model's working precision.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: f64,
    pub discrete: f64,
    pub valence: f64,
    pub arousal: f64,
    pub sap_fallbacks: u64,
}

struct RepForward<T: Scalar> {
    rep: Vec<T>,
    fallback: bool,
    attn: Option<(AttentionCache<T>, usize)>,
}

struct BatchOutput<T: Scalar> {
    reps: Mat<T>,
    proj: Mat<T>,
    logits: Mat<T>,
    val_pred: Vec<T>,
    aro_pred: Vec<T>,
    caches: Vec<Option<(AttentionCache<T>, usize)>>,
    fallbacks: u64,
}

#[derive(Debug, Clone)]
pub struct EmotionModel<T: Scalar> {
    pub config: ModelConfig,
    attention: Option<AttentionBlock<T>>,
    projection: LinearLayer<T>,
    classifier: LinearLayer<T>,
    valence_head: LinearLayer<T>,
    arousal_head: LinearLayer<T>,
}

impl<T: Scalar> EmotionModel<T> {
    /// Builds a freshly initialized model; identical configs (including the
    /// seed) always produce bit-identical parameters.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let attention = if config.uses_attention() {
            Some(AttentionBlock::new(
                config.feature_dim,
                config.heads,
                config.residual,
                &mut rng,
            )?)
        } else {
            None
        };
        let rep_dim = config.rep_dim();
        Ok(EmotionModel {
            config: config.clone(),
            attention,
            projection: LinearLayer::new(rep_dim, config.projection_dim, &mut rng),
            classifier: LinearLayer::new(config.projection_dim, config.classes, &mut rng),
            valence_head: LinearLayer::new(config.projection_dim, 1, &mut rng),
            arousal_head: LinearLayer::new(config.projection_dim, 1, &mut rng),
        })
    }

    pub fn attention(&self) -> Option<&AttentionBlock<T>> {
        self.attention.as_ref()
    }

    fn rep_forward(
        &self,
        features: &Mat<T>,
        keep: &AlignedMask,
        want_cache: bool,
    ) -> Result<RepForward<T>> {
        if features.cols() != self.config.feature_dim {
            return Err(Error::ShapeMismatch {
                op: "representation",
                detail: format!(
                    "features have {} columns, model expects {}",
                    features.cols(),
                    self.config.feature_dim
                ),
            });
        }
        if matches!(self.config.pooling, PoolingMode::GapOnly) {
            return Ok(RepForward {
                rep: gap(features)?,
                fallback: false,
                attn: None,
            });
        }
        if keep.keep.len() != features.rows() {
            return Err(Error::LengthMismatch {
                expected: features.rows(),
                got: keep.keep.len(),
            });
        }

        // Speech-gated half. An all-silence mask falls back to the plain
        // all-frame mean with no attention, matching pooling::sap.
        let (sap_vec, fallback, attn) = if keep.kept() == 0 {
            (gap(features)?, true, None)
        } else {
            let gathered = gather_speech(features, keep)?;
            match &self.attention {
                Some(block) if want_cache => {
                    let (h, cache) = block.forward_cached(&gathered)?;
                    let rows = h.rows();
                    (gap(&h)?, false, Some((cache, rows)))
                }
                Some(block) => (gap(&block.forward(&gathered)?)?, false, None),
                None => (gap(&gathered)?, false, None),
            }
        };

        let rep = match self.config.pooling {
            PoolingMode::SapOnly => sap_vec,
            PoolingMode::Sr => {
                let mut rep = gap(features)?;
                rep.extend_from_slice(&sap_vec);
                rep
            }
            PoolingMode::GapOnly => unreachable!("handled above"),
        };
        Ok(RepForward {
            rep,
            fallback,
            attn,
        })
    }

    fn forward_batch(
        &self,
        items: &[TrainItem<T>],
        idx: &[usize],
        want_cache: bool,
    ) -> Result<BatchOutput<T>> {
        let mut reps = Mat::zeros(idx.len(), self.config.rep_dim());
        let mut caches = Vec::with_capacity(idx.len());
        let mut fallbacks = 0u64;
        for (b, &i) in idx.iter().enumerate() {
            let item = &items[i];
            let rf = self.rep_forward(&item.features, &item.keep, want_cache)?;
            reps.row_mut(b).copy_from_slice(&rf.rep);
            if rf.fallback {
                fallbacks += 1;
            }
            caches.push(rf.attn);
        }
        let proj = self.projection.forward(&reps)?;
        let logits = self.classifier.forward(&proj)?;
        let val_pred = self.valence_head.forward(&proj)?.data().to_vec();
        let aro_pred = self.arousal_head.forward(&proj)?.data().to_vec();
        Ok(BatchOutput {
            reps,
            proj,
            logits,
            val_pred,
            aro_pred,
            caches,
            fallbacks,
        })
    }

    fn batch_targets(
        &self,
        items: &[TrainItem<T>],
        idx: &[usize],
    ) -> Result<(Vec<usize>, Vec<T>, Vec<T>)> {
        let mut labels = Vec::with_capacity(idx.len());
        let mut val_t = Vec::with_capacity(idx.len());
        let mut aro_t = Vec::with_capacity(idx.len());
        for &i in idx {
            let item = &items[i];
            if item.label >= self.config.classes {
                return Err(Error::BadLabel {
                    label: item.label,
                    classes: self.config.classes,
                });
            }
            labels.push(item.label);
            val_t.push(item.valence);
            aro_t.push(item.arousal);
        }
        Ok((labels, val_t, aro_t))
    }

    /// Loss over a batch without touching gradients.
    pub fn loss_on(
        &self,
        items: &[TrainItem<T>],
        idx: &[usize],
        weights: &[f64],
    ) -> Result<LossBreakdown> {
        let out = self.forward_batch(items, idx, false)?;
        let (labels, val_t, aro_t) = self.batch_targets(items, idx)?;
        let w: Vec<T> = weights.iter().map(|&v| T::from_f64_lossy(v)).collect();
        let ce = weighted_cross_entropy(&out.logits, &labels, &w)?;
        let (lv, _) = mae_loss(&out.val_pred, &val_t)?;
        let (la, _) = mae_loss(&out.aro_pred, &aro_t)?;
        Ok(self.breakdown(ce.loss, lv, la, out.fallbacks))
    }

    /// Forward, loss, and a full backward pass. Gradient accumulators are
    /// zeroed first, so the accumulated gradients afterwards belong to this
    /// batch alone.
    pub fn loss_backward(
        &mut self,
        items: &[TrainItem<T>],
        idx: &[usize],
        weights: &[f64],
    ) -> Result<LossBreakdown> {
        self.zero_grad();
        let out = self.forward_batch(items, idx, true)?;
        let (labels, val_t, aro_t) = self.batch_targets(items, idx)?;
        let w: Vec<T> = weights.iter().map(|&v| T::from_f64_lossy(v)).collect();
        let ce = weighted_cross_entropy(&out.logits, &labels, &w)?;
        let (lv, gv) = mae_loss(&out.val_pred, &val_t)?;
        let (la, ga) = mae_loss(&out.aro_pred, &aro_t)?;

        let alpha = T::from_f64_lossy(self.config.alpha);
        let beta = T::from_f64_lossy(self.config.beta);
        let gamma = T::from_f64_lossy(self.config.gamma);

        let d_logits = ce.grad.map(|g| g * alpha);
        let mut d_proj = self.classifier.backward(&out.proj, &d_logits)?;
        let d_val = Mat::from_fn(gv.len(), 1, |r, _| gv[r] * beta);
        d_proj.add_scaled(&self.valence_head.backward(&out.proj, &d_val)?, T::one());
        let d_aro = Mat::from_fn(ga.len(), 1, |r, _| ga[r] * gamma);
        d_proj.add_scaled(&self.arousal_head.backward(&out.proj, &d_aro)?, T::one());
        let d_reps = self.projection.backward(&out.reps, &d_proj)?;

        // Push each utterance's representation gradient back through its own
        // pooling. The all-frame mean half consumes no parameters; only the
        // attention block receives gradient, and only when it actually ran.
        let d = self.config.feature_dim;
        for (b, cache) in out.caches.iter().enumerate() {
            let Some((cache, rows)) = cache else { continue };
            let row = d_reps.row(b);
            let d_sap = match self.config.pooling {
                PoolingMode::SapOnly => &row[..d],
                PoolingMode::Sr => &row[d..],
                PoolingMode::GapOnly => unreachable!("gap_only never caches attention"),
            };
            let inv_n = T::one() / T::from_f64_lossy(*rows as f64);
            let d_h = Mat::from_fn(*rows, d, |_, c| d_sap[c] * inv_n);
            self.attention
                .as_mut()
                .expect("cache implies attention")
                .backward(cache, &d_h)?;
        }
        Ok(self.breakdown(ce.loss, lv, la, out.fallbacks))
    }

    fn breakdown(&self, ld: T, lv: T, la: T, fallbacks: u64) -> LossBreakdown {
        let ld = ld.to_f64().unwrap_or(f64::NAN);
        let lv = lv.to_f64().unwrap_or(f64::NAN);
        let la = la.to_f64().unwrap_or(f64::NAN);
        LossBreakdown {
            total: self.config.alpha * ld + self.config.beta * lv + self.config.gamma * la,
            discrete: ld,
            valence: lv,
            arousal: la,
            sap_fallbacks: fallbacks,
        }
    }

    /// Full forward pass for one utterance.
    pub fn forward_utterance(
        &self,
        features: &Mat<T>,
        keep: &AlignedMask,
    ) -> Result<UtterancePrediction<T>> {
        let rf = self.rep_forward(features, keep, false)?;
        let rep = Mat::from_vec(1, rf.rep.len(), rf.rep);
        let proj = self.projection.forward(&rep)?;
        let logits = self.classifier.forward(&proj)?;
        let valence = self.valence_head.forward(&proj)?.get(0, 0);
        let arousal = self.arousal_head.forward(&proj)?.get(0, 0);
        Ok(UtterancePrediction {
            logits: logits.row(0).to_vec(),
            valence,
            arousal,
            used_fallback: rf.fallback,
        })
    }
}

impl<T: Scalar> Parameterized<T> for EmotionModel<T> {
    fn param_blocks(&mut self) -> Vec<ParamBlockMut<'_, T>> {
        let mut blocks = Vec::new();
        if let Some(a) = self.attention.as_mut() {
            blocks.extend(with_prefix("attention", a.param_blocks()));
        }
        blocks.extend(with_prefix("projection", self.projection.param_blocks()));
        blocks.extend(with_prefix("classifier", self.classifier.param_blocks()));
        blocks.extend(with_prefix("valence", self.valence_head.param_blocks()));
        blocks.extend(with_prefix("arousal", self.arousal_head.param_blocks()));
        blocks
    }
}

/// One line of the training log and the in-memory loss curves.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_total: f64,
    pub val_discrete: f64,
    pub val_valence: f64,
    pub val_arousal: f64,
    pub lr_mult_first: f64,
    pub lr_mult_last: f64,
    pub sap_fallbacks: u64,
}

#[derive(Debug, Clone)]
pub struct TrainingDiagnostics {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub early_stopped: bool,
    pub epochs: Vec<EpochRecord>,
    /// Schedule multiplier at every optimizer step actually taken.
    pub lr_multipliers: Vec<f64>,
    pub total_steps_planned: usize,
    pub sap_fallbacks: u64,
    pub class_weights: Vec<f64>,
}

pub struct TrainedModel<T: Scalar> {
    pub model: EmotionModel<T>,
    pub diagnostics: TrainingDiagnostics,
}

fn log_line(log: &mut Option<&mut dyn Write>, value: &serde_json::Value) -> Result<()> {
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{value}").map_err(|e| Error::io(Path::new("<training log>"), e))?;
    }
    Ok(())
}

/// Trains a fresh model on `train_set`, early-stopping on total validation
/// loss, and returns the parameters from the best validation epoch. When
/// `log` is given, one JSON object per line is written: first the config
/// echo, then one record per epoch.
pub fn train<T: Scalar>(
    config: &ModelConfig,
    train_set: &[TrainItem<T>],
    val_set: &[TrainItem<T>],
    mut log: Option<&mut dyn Write>,
) -> Result<TrainedModel<T>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::BadConfig("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::BadConfig("validation set is empty".into()));
    }

    let mut counts = vec![0usize; config.classes];
    for item in train_set {
        if item.label >= config.classes {
            return Err(Error::BadLabel {
                label: item.label,
                classes: config.classes,
            });
        }
        counts[item.label] += 1;
    }
    let weights = class_weights(&counts)?;

    let mut model = EmotionModel::new(config)?;
    let batches_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let mut adam = Adam::new(AdamConfig::new(
        config.base_lr,
        config.warmup_ratio,
        total_steps,
    ));
    // Decorrelated from the init stream so reordering layers never changes
    // the data order.
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);

    log_line(
        &mut log,
        &serde_json::json!({
            "config": config,
            "class_weights": weights,
            "train_items": train_set.len(),
            "val_items": val_set.len(),
            "total_steps": total_steps,
        }),
    )?;

    let all_train: Vec<usize> = (0..train_set.len()).collect();
    let all_val: Vec<usize> = (0..val_set.len()).collect();

    let mut diag = TrainingDiagnostics {
        seed: config.seed,
        epochs_run: 0,
        best_epoch: 0,
        early_stopped: false,
        epochs: Vec::new(),
        lr_multipliers: Vec::with_capacity(total_steps),
        total_steps_planned: total_steps,
        sap_fallbacks: 0,
        class_weights: weights.clone(),
    };
    let mut best: Option<(f64, EmotionModel<T>)> = None;
    let mut bad_epochs = 0usize;

    for epoch in 1..=config.epochs {
        let mut order = all_train.clone();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut epoch_fallbacks = 0u64;
        let mut lr_first = f64::NAN;
        let mut lr_last = f64::NAN;
        for batch in order.chunks(config.batch_size) {
            let breakdown = model.loss_backward(train_set, batch, &weights)?;
            if !breakdown.total.is_finite() {
                return Err(Error::DivergedLoss(epoch));
            }
            let mult = adam.step(&mut model.param_blocks())?;
            diag.lr_multipliers.push(mult);
            if lr_first.is_nan() {
                lr_first = mult;
            }
            lr_last = mult;
            loss_sum += breakdown.total * batch.len() as f64;
            epoch_fallbacks += breakdown.sap_fallbacks;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let val = model.loss_on(val_set, &all_val, &weights)?;
        if !val.total.is_finite() {
            return Err(Error::DivergedLoss(epoch));
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            val_total: val.total,
            val_discrete: val.discrete,
            val_valence: val.valence,
            val_arousal: val.arousal,
            lr_mult_first: lr_first,
            lr_mult_last: lr_last,
            sap_fallbacks: epoch_fallbacks,
        };
        log_line(
            &mut log,
            &serde_json::to_value(&record).expect("record serializes"),
        )?;
        diag.epochs.push(record);
        diag.epochs_run = epoch;
        diag.sap_fallbacks += epoch_fallbacks;

        let improved = best.as_ref().is_none_or(|(b, _)| val.total < *b);
        if improved {
            best = Some((val.total, model.clone()));
            diag.best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs == config.patience {
                diag.early_stopped = true;
                break;
            }
        }
    }

    let (_, best_model) = best.expect("at least one epoch ran");
    Ok(TrainedModel {
        model: best_model,
        diagnostics: diag,
    })
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SEMC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn pooling_byte(mode: PoolingMode) -> u8 {
    match mode {
        PoolingMode::GapOnly => 0,
        PoolingMode::SapOnly => 1,
        PoolingMode::Sr => 2,
    }
}

/// Serializes parameters and config as little-endian binary. Values are
/// stored as raw f32 bits, so a save/load cycle is bit-exact.
pub fn save_checkpoint(model: &mut EmotionModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let config = model.config.clone();
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

    buf.extend_from_slice(&(config.feature_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(config.classes as u32).to_le_bytes());
    buf.extend_from_slice(&(config.projection_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(config.heads as u32).to_le_bytes());
    let flags = (config.residual as u8) | ((config.bypass_attention as u8) << 1);
    buf.push(flags);
    buf.push(pooling_byte(config.pooling));
    buf.extend_from_slice(&[0u8; 2]);
    for v in [
        config.alpha,
        config.beta,
        config.gamma,
        config.base_lr,
        config.warmup_ratio,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(config.batch_size as u32).to_le_bytes());
    buf.extend_from_slice(&(config.epochs as u32).to_le_bytes());
    buf.extend_from_slice(&(config.patience as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&config.seed.to_le_bytes());

    let blocks = model.param_blocks();
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for block in &blocks {
        let name = block.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(block.dims.len() as u32).to_le_bytes());
        for &d in &block.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in block.value.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::TruncatedPayload {
                path: self.path.display().to_string(),
                detail: format!(
                    "needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint. When `expected` is given, its architecture fields
/// must match the stored config; a mismatch (say, a gap_only checkpoint
/// offered to an sr evaluation) is refused before any parameter is read.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected: Option<&ModelConfig>,
) -> Result<EmotionModel<f32>> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader {
        buf: &buf,
        pos: 0,
        path,
    };

    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic(String::from_utf8_lossy(magic).into_owned()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }

    let feature_dim = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let projection_dim = r.u32()? as usize;
    let heads = r.u32()? as usize;
    let flags = r.u8()?;
    let pooling = match r.u8()? {
        0 => PoolingMode::GapOnly,
        1 => PoolingMode::SapOnly,
        2 => PoolingMode::Sr,
        other => {
            return Err(Error::CorruptHeader {
                path: path.display().to_string(),
                detail: format!("unknown pooling code {other}"),
            })
        }
    };
    r.take(2)?;
    let alpha = r.f64()?;
    let beta = r.f64()?;
    let gamma = r.f64()?;
    let base_lr = r.f64()?;
    let warmup_ratio = r.f64()?;
    let batch_size = r.u32()? as usize;
    let epochs = r.u32()? as usize;
    let patience = r.u32()? as usize;
    r.u32()?;
    let seed = r.u64()?;

    let config = ModelConfig {
        feature_dim,
        classes,
        projection_dim,
        heads,
        residual: flags & 1 != 0,
        bypass_attention: flags & 2 != 0,
        pooling,
        alpha,
        beta,
        gamma,
        batch_size,
        epochs,
        base_lr,
        warmup_ratio,
        patience,
        seed,
    };
    if let Some(exp) = expected {
        if !exp.architecture_matches(&config) {
            return Err(Error::ShapeMismatch {
                op: "checkpoint architecture",
                detail: format!(
                    "stored {} / {}d model does not fit requested {} / {}d",
                    config.pooling, config.feature_dim, exp.pooling, exp.feature_dim
                ),
            });
        }
    }

    let mut model = EmotionModel::<f32>::new(&config)?;
    let n_blocks = r.u32()? as usize;
    {
        let mut blocks = model.param_blocks();
        if n_blocks != blocks.len() {
            return Err(Error::ShapeMismatch {
                op: "checkpoint blocks",
                detail: format!("file has {n_blocks} blocks, model has {}", blocks.len()),
            });
        }
        for block in blocks.iter_mut() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::CorruptHeader {
                    path: path.display().to_string(),
                    detail: "block name is not utf-8".into(),
                })?
                .to_string();
            let ndims = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                dims.push(r.u32()? as usize);
            }
            if name != block.name || dims != block.dims {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint block",
                    detail: format!(
                        "file block {name} {dims:?} vs model block {} {:?}",
                        block.name, block.dims
                    ),
                });
            }
            for v in block.value.iter_mut() {
                let x = r.f32()?;
                if !x.is_finite() {
                    return Err(Error::CorruptHeader {
                        path: path.display().to_string(),
                        detail: format!("non-finite value in block {name}"),
                    });
                }
                *v = x;
            }
        }
    }
    if r.pos != buf.len() {
        return Err(Error::CorruptHeader {
            path: path.display().to_string(),
            detail: format!("{} trailing bytes after last block", buf.len() - r.pos),
        });
    }
    Ok(model)
}

/// One row of [`verify_gradients`]: a kernel configuration and the worst
/// relative error between its analytic and finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradSuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub params: usize,
}

struct LogitsProbe {
    logits: Vec<f64>,
    grad: Vec<f64>,
    rows: usize,
    cols: usize,
    labels: Vec<usize>,
    weights: Vec<f64>,
}

impl Parameterized<f64> for LogitsProbe {
    fn param_blocks(&mut self) -> Vec<ParamBlockMut<'_, f64>> {
        vec![ParamBlockMut {
            name: "logits".into(),
            dims: vec![self.rows, self.cols],
            value: &mut self.logits,
            grad: &mut self.grad,
        }]
    }
}

struct PredProbe {
    pred: Vec<f64>,
    grad: Vec<f64>,
    target: Vec<f64>,
}

impl Parameterized<f64> for PredProbe {
    fn param_blocks(&mut self) -> Vec<ParamBlockMut<'_, f64>> {
        let n = self.pred.len();
        vec![ParamBlockMut {
            name: "pred".into(),
            dims: vec![n],
            value: &mut self.pred,
            grad: &mut self.grad,
        }]
    }
}

struct AttnProbe {
    block: AttentionBlock<f64>,
    input: Mat<f64>,
    upstream: Mat<f64>,
}

impl Parameterized<f64> for AttnProbe {
    fn param_blocks(&mut self) -> Vec<ParamBlockMut<'_, f64>> {
        self.block.param_blocks()
    }
}

struct LinearProbe {
    layer: LinearLayer<f64>,
    input: Mat<f64>,
    labels: Vec<usize>,
    weights: Vec<f64>,
}

impl Parameterized<f64> for LinearProbe {
    fn param_blocks(&mut self) -> Vec<ParamBlockMut<'_, f64>> {
        self.layer.param_blocks()
    }
}

/// Finite-difference verification of every backward pass the trainer uses:
/// a linear layer driven by weighted cross entropy, cross entropy against
/// raw logits, mean absolute error, attention with and without its
/// residual path, and the full concatenated-pooling model. Returns one
/// entry per configuration; callers compare `max_rel_error` against their
/// tolerance.
pub fn verify_gradients(seed: u64) -> Result<Vec<GradSuiteEntry>> {
    use crate::neural::gradcheck::{check_gradients, DEFAULT_EPSILON};
    use rand::Rng;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut entries = Vec::new();

    let mut linear = LinearProbe {
        layer: LinearLayer::new(5, 3, &mut rng),
        input: Mat::from_fn(4, 5, |_, _| rng.gen_range(-1.0..1.0)),
        labels: vec![0, 2, 1, 2],
        weights: vec![1.3, 0.8, 0.9],
    };
    let report = check_gradients(
        &mut linear,
        |n| {
            n.zero_grad();
            let input = n.input.clone();
            let out = weighted_cross_entropy(&n.layer.forward(&input)?, &n.labels, &n.weights)?;
            n.layer.backward(&input, &out.grad)?;
            Ok(out.loss)
        },
        |n| Ok(weighted_cross_entropy(&n.layer.forward(&n.input)?, &n.labels, &n.weights)?.loss),
        DEFAULT_EPSILON,
    )?;
    entries.push(GradSuiteEntry {
        name: "linear + weighted cross entropy".into(),
        max_rel_error: report.max_rel_error,
        params: linear.param_count(),
    });

    let (rows, cols) = (4, 3);
    let mut probe = LogitsProbe {
        logits: (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        grad: vec![0.0; rows * cols],
        rows,
        cols,
        labels: (0..rows).map(|_| rng.gen_range(0..cols)).collect(),
        weights: (0..cols).map(|_| rng.gen_range(0.5..1.5)).collect(),
    };
    let report = check_gradients(
        &mut probe,
        |n| {
            let m = Mat::from_vec(n.rows, n.cols, n.logits.clone());
            let out = weighted_cross_entropy(&m, &n.labels, &n.weights)?;
            n.grad.copy_from_slice(out.grad.data());
            Ok(out.loss)
        },
        |n| {
            let m = Mat::from_vec(n.rows, n.cols, n.logits.clone());
            Ok(weighted_cross_entropy(&m, &n.labels, &n.weights)?.loss)
        },
        DEFAULT_EPSILON,
    )?;
    entries.push(GradSuiteEntry {
        name: "weighted cross entropy vs logits".into(),
        max_rel_error: report.max_rel_error,
        params: rows * cols,
    });

    let pred: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Targets sit well away from the predictions so the central difference
    // never straddles the absolute-value kink.
    let target: Vec<f64> = pred
        .iter()
        .map(|p| p + rng.gen_range(0.1..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let mut probe = PredProbe {
        grad: vec![0.0; pred.len()],
        pred,
        target,
    };
    let report = check_gradients(
        &mut probe,
        |n| {
            let (loss, grad) = mae_loss(&n.pred, &n.target)?;
            n.grad.copy_from_slice(&grad);
            Ok(loss)
        },
        |n| Ok(mae_loss(&n.pred, &n.target)?.0),
        DEFAULT_EPSILON,
    )?;
    entries.push(GradSuiteEntry {
        name: "mean absolute error".into(),
        max_rel_error: report.max_rel_error,
        params: probe.pred.len(),
    });

    for residual in [true, false] {
        let mut probe = AttnProbe {
            block: AttentionBlock::new(6, 2, residual, &mut rng)?,
            input: Mat::from_fn(5, 6, |_, _| rng.gen_range(-1.0..1.0)),
            upstream: Mat::from_fn(5, 6, |_, _| rng.gen_range(-1.0..1.0)),
        };
        let report = check_gradients(
            &mut probe,
            |n| {
                n.zero_grad();
                let upstream = n.upstream.clone();
                let (y, cache) = n.block.forward_cached(&n.input)?;
                n.block.backward(&cache, &upstream)?;
                Ok(y.data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(a, b)| a * b)
                    .sum())
            },
            |n| {
                let y = n.block.forward(&n.input)?;
                Ok(y.data()
                    .iter()
                    .zip(n.upstream.data())
                    .map(|(a, b)| a * b)
                    .sum())
            },
            DEFAULT_EPSILON,
        )?;
        entries.push(GradSuiteEntry {
            name: if residual {
                "attention with residual".into()
            } else {
                "attention without residual".into()
            },
            max_rel_error: report.max_rel_error,
            params: probe.param_count(),
        });
    }

    let config = ModelConfig {
        feature_dim: 8,
        classes: 4,
        projection_dim: 6,
        heads: 2,
        batch_size: 8,
        seed: seed ^ 0xA5A5,
        ..ModelConfig::default()
    };
    let mut model: EmotionModel<f64> = EmotionModel::new(&config)?;
    let items: Vec<TrainItem<f64>> = (0..8)
        .map(|i| {
            let rows = rng.gen_range(4..9);
            let mut keep: Vec<u8> = (0..rows).map(|_| u8::from(rng.gen_bool(0.6))).collect();
            keep[0] = 1;
            TrainItem {
                features: Mat::from_fn(rows, 8, |_, _| rng.gen_range(-1.0..1.0)),
                keep: AlignedMask { keep },
                label: i % 4,
                valence: rng.gen_range(0.1..0.9),
                arousal: rng.gen_range(0.1..0.9),
            }
        })
        .collect();
    let idx: Vec<usize> = (0..items.len()).collect();
    let weights = vec![1.1, 0.9, 1.3, 0.7];
    let report = check_gradients(
        &mut model,
        |m| m.loss_backward(&items, &idx, &weights).map(|b| b.total),
        |m| m.loss_on(&items, &idx, &weights).map(|b| b.total),
        DEFAULT_EPSILON,
    )?;
    entries.push(GradSuiteEntry {
        name: "full concatenated-pooling model".into(),
        max_rel_error: report.max_rel_error,
        params: model.param_count(),
    });

    Ok(entries)
}
