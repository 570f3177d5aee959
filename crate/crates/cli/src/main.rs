//! Command line driver. Each subcommand wraps one library operation; the
//! training-family commands (`train`, `evaluate`, `crossval`) also accept a
//! flat `key = value` config file, with explicit flags taking precedence
//! over file entries and file entries over built-in defaults.
//!
//! Exit codes: 0 on success, 1 on any runtime failure, 2 on usage errors.

mod config_file;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config_file::FileConfig;
use segpool::audio::{load_wav, truncate};
use segpool::features::{extract_logmel, save_features};
use segpool::harness::{
    evaluate_split, generate_corpus, load_manifest, prepare_items, run_cross_validation,
    GeneratorSpec, UtteranceRecord, VadSource, CLASS_LABELS,
};
use segpool::metrics::{confusion_csv, confusion_svg, FoldSummary};
use segpool::training::{load_checkpoint, save_checkpoint, train, verify_gradients};
use segpool::vad::{detect, save_mask, VadConfig};
use segpool::{CrossvalOptions, ModelConfig, PoolingMode, TrainItem};
use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "segpool",
    version,
    about = "Speech emotion recognition with speech-aware pooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect speech frames in a wav file
    Vad(VadCmd),
    /// Extract log-mel features from a wav file
    Extract(ExtractCmd),
    /// Train one model on a corpus manifest
    Train(TrainCmd),
    /// Evaluate a checkpoint on manifest utterances
    Evaluate(EvaluateCmd),
    /// Run a leave-one-speaker-out cross-validation sweep
    Crossval(CrossvalCmd),
    /// Generate a synthetic labeled corpus
    Synth(SynthCmd),
    /// Compare analytic gradients against finite differences
    Gradcheck(GradcheckCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    /// Mean over all frames
    Gap,
    /// Attention over detected speech frames
    Sap,
    /// Both, concatenated
    Sr,
}

impl From<PoolingArg> for PoolingMode {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Gap => PoolingMode::GapOnly,
            PoolingArg::Sap => PoolingMode::SapOnly,
            PoolingArg::Sr => PoolingMode::Sr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VadArg {
    /// Run the energy detector on the audio
    Builtin,
    /// Read mask files from --vad-dir
    External,
    /// Read mask files from the corpus vad/ directory
    Truth,
}

#[derive(Args)]
struct ModelFlags {
    /// Pooled representation fed to the prediction heads
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
    /// Replace attention inside segmental pooling with a plain mean
    #[arg(long)]
    bypass_attention: bool,
    /// Parameter initialization and batch shuffling seed
    #[arg(long)]
    seed: Option<u64>,
    /// Input feature dimension; defaults to the mel band count
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    projection_dim: Option<usize>,
    /// Attention head count
    #[arg(long)]
    heads: Option<usize>,
    /// Drop the residual path around attention
    #[arg(long)]
    no_residual: bool,
    /// Weight of the discrete-emotion loss
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the valence loss
    #[arg(long)]
    beta: Option<f64>,
    /// Weight of the arousal loss
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Peak learning rate (config file key: base_lr)
    #[arg(long)]
    lr: Option<f64>,
    /// Fraction of optimizer steps spent warming up
    #[arg(long)]
    warmup_ratio: Option<f64>,
    /// Epochs without validation improvement before stopping
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args)]
struct PipelineFlags {
    /// Speech mask source for pooling
    #[arg(long, value_enum)]
    vad: Option<VadArg>,
    /// Directory of per-utterance mask files (used with --vad external)
    #[arg(long)]
    vad_dir: Option<PathBuf>,
    /// Detector frame length in ms (10, 20, or 30)
    #[arg(long)]
    frame_ms: Option<u32>,
    /// Detector strictness, 0 (permissive) through 3 (strict)
    #[arg(long)]
    aggressiveness: Option<u8>,
    /// Frames kept as speech after the energy drops
    #[arg(long)]
    hangover: Option<u32>,
    /// Noise floor smoothing factor in (0, 1)
    #[arg(long)]
    noise_adapt_rate: Option<f32>,
    /// Truncate audio longer than this many seconds; 0 disables
    #[arg(long)]
    max_seconds: Option<f64>,
    /// Feature window length in ms
    #[arg(long)]
    window_ms: Option<u32>,
    /// Feature hop in ms
    #[arg(long)]
    stride_ms: Option<u32>,
    /// Mel band count
    #[arg(long)]
    n_mels: Option<usize>,
    /// Lowest mel band edge in Hz
    #[arg(long)]
    fmin_hz: Option<f32>,
    /// Highest mel band edge in Hz
    #[arg(long)]
    fmax_hz: Option<f32>,
}

#[derive(Args)]
struct VadCmd {
    /// Input wav file
    wav: PathBuf,
    /// Write the mask here instead of printing it
    #[arg(long)]
    out: Option<PathBuf>,
    /// Detector frame length in ms (10, 20, or 30)
    #[arg(long)]
    frame_ms: Option<u32>,
    /// Detector strictness, 0 (permissive) through 3 (strict)
    #[arg(long)]
    aggressiveness: Option<u8>,
    /// Frames kept as speech after the energy drops
    #[arg(long)]
    hangover: Option<u32>,
    /// Noise floor smoothing factor in (0, 1)
    #[arg(long)]
    noise_adapt_rate: Option<f32>,
}

#[derive(Args)]
struct ExtractCmd {
    /// Input wav file
    wav: PathBuf,
    /// Output feature file
    #[arg(long)]
    out: PathBuf,
    /// Feature window length in ms
    #[arg(long)]
    window_ms: Option<u32>,
    /// Feature hop in ms
    #[arg(long)]
    stride_ms: Option<u32>,
    /// Mel band count
    #[arg(long)]
    n_mels: Option<usize>,
    /// Lowest mel band edge in Hz
    #[arg(long)]
    fmin_hz: Option<f32>,
    /// Highest mel band edge in Hz
    #[arg(long)]
    fmax_hz: Option<f32>,
    /// Truncate audio longer than this many seconds; 0 disables
    #[arg(long)]
    max_seconds: Option<f64>,
}

#[derive(Args)]
struct TrainCmd {
    /// Corpus manifest csv
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for the checkpoint and training log
    #[arg(long)]
    out: PathBuf,
    /// Comma separated speakers held out for validation
    #[arg(long, value_delimiter = ',', required = true)]
    val_speakers: Vec<String>,
    /// Comma separated speakers dropped entirely
    #[arg(long, value_delimiter = ',')]
    exclude_speakers: Vec<String>,
    /// Flat key = value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct EvaluateCmd {
    /// Corpus manifest csv
    #[arg(long)]
    manifest: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Restrict evaluation to these comma separated speakers
    #[arg(long, value_delimiter = ',')]
    speakers: Vec<String>,
    /// Write report.json and confusion tables here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key = value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct CrossvalCmd {
    /// Corpus manifest csv
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; defaults to runs/ next to the manifest
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key = value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct SynthCmd {
    /// Output corpus directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    speakers: Option<usize>,
    /// Utterances per speaker
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    sample_rate: Option<u32>,
    /// Fraction of each utterance's frames carrying speech
    #[arg(long)]
    speech_fraction: Option<f64>,
    /// Uniform noise amplitude added to every sample
    #[arg(long)]
    noise: Option<f64>,
    /// Uniform class mix instead of the neutral-heavy default
    #[arg(long)]
    balanced: bool,
}

#[derive(Args)]
struct GradcheckCmd {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Vad(cmd) => run_vad(cmd),
        Command::Extract(cmd) => run_extract(cmd),
        Command::Train(cmd) => run_train(cmd),
        Command::Evaluate(cmd) => run_evaluate(cmd),
        Command::Crossval(cmd) => run_crossval(cmd),
        Command::Synth(cmd) => run_synth(cmd),
        Command::Gradcheck(cmd) => run_gradcheck(cmd),
    }
}

fn run_vad(cmd: VadCmd) -> Result<()> {
    let mut cfg = VadConfig::default();
    if let Some(v) = cmd.frame_ms {
        cfg.frame_ms = v;
    }
    if let Some(v) = cmd.aggressiveness {
        cfg.aggressiveness = v;
    }
    if let Some(v) = cmd.hangover {
        cfg.hangover_frames = v;
    }
    if let Some(v) = cmd.noise_adapt_rate {
        cfg.noise_adapt_rate = v;
    }
    let clip = load_wav(&cmd.wav)?;
    let mask = detect(&clip, &cfg)?;
    match &cmd.out {
        Some(path) => {
            save_mask(&mask, path)?;
            let speech = mask.decisions.iter().filter(|&&d| d == 1).count();
            println!(
                "{}: {speech} of {} frames speech, mask written to {}",
                mask.utterance_id,
                mask.decisions.len(),
                path.display()
            );
        }
        None => {
            let line: Vec<String> = mask.decisions.iter().map(u8::to_string).collect();
            println!("{}", line.join(" "));
        }
    }
    Ok(())
}

fn run_extract(cmd: ExtractCmd) -> Result<()> {
    let mut spec = segpool::FrameSpec::default();
    if let Some(v) = cmd.window_ms {
        spec.window_ms = v;
    }
    if let Some(v) = cmd.stride_ms {
        spec.stride_ms = v;
    }
    let mut mel = segpool::MelConfig::default();
    if let Some(v) = cmd.n_mels {
        mel.n_mels = v;
    }
    if let Some(v) = cmd.fmin_hz {
        mel.fmin_hz = v;
    }
    if let Some(v) = cmd.fmax_hz {
        mel.fmax_hz = v;
    }
    let mut clip = load_wav(&cmd.wav)?;
    if let Some(s) = cmd.max_seconds {
        if s > 0.0 {
            clip = truncate(&clip, s);
        }
    }
    let feats = extract_logmel(&clip, &spec, &mel)?;
    save_features(&feats, &cmd.out)?;
    println!(
        "{}: {} frames x {} mels written to {}",
        feats.utterance_id,
        feats.data.rows(),
        feats.data.cols(),
        cmd.out.display()
    );
    Ok(())
}

fn run_train(cmd: TrainCmd) -> Result<()> {
    let (config, opts) = resolve_configs(cmd.config.as_deref(), Some(&cmd.model), &cmd.pipeline)?;
    let records = load_manifest(&cmd.manifest)?;
    let manifest_dir = parent_dir(&cmd.manifest);

    let val: BTreeSet<&str> = cmd.val_speakers.iter().map(String::as_str).collect();
    let excluded: BTreeSet<&str> = cmd.exclude_speakers.iter().map(String::as_str).collect();
    if let Some(both) = val.iter().find(|s| excluded.contains(*s)) {
        bail!("speaker {both} is both a validation speaker and excluded");
    }
    let kept: Vec<UtteranceRecord> = records
        .into_iter()
        .filter(|r| !excluded.contains(r.speaker_id.as_str()))
        .collect();
    let (val_recs, train_recs): (Vec<_>, Vec<_>) = kept
        .into_iter()
        .partition(|r| val.contains(r.speaker_id.as_str()));
    if val_recs.is_empty() {
        bail!("no utterances match the validation speakers");
    }
    if train_recs.is_empty() {
        bail!("no utterances left for training");
    }

    let train_items = only_items(prepare_items(
        &train_recs,
        &manifest_dir,
        config.feature_dim,
        &opts,
    )?);
    let val_items = only_items(prepare_items(
        &val_recs,
        &manifest_dir,
        config.feature_dim,
        &opts,
    )?);

    fs::create_dir_all(&cmd.out)
        .with_context(|| format!("creating output directory {}", cmd.out.display()))?;
    let log_path = cmd.out.join("train_log.jsonl");
    let mut log = BufWriter::new(
        fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    );
    let mut trained = train(&config, &train_items, &val_items, Some(&mut log))?;
    log.flush()?;
    drop(log);

    let ckpt_path = cmd.out.join("model.ckpt");
    save_checkpoint(&mut trained.model, &ckpt_path)?;

    let d = &trained.diagnostics;
    println!(
        "trained {} model on {} utterances ({} validation)",
        config.pooling.as_str(),
        train_items.len(),
        val_items.len()
    );
    println!(
        "epochs run {}, best epoch {}, early stopped: {}, segmental fallbacks: {}",
        d.epochs_run, d.best_epoch, d.early_stopped, d.sap_fallbacks
    );
    println!("checkpoint: {}", ckpt_path.display());
    println!("log: {}", log_path.display());
    Ok(())
}

fn run_evaluate(cmd: EvaluateCmd) -> Result<()> {
    let (_, opts) = resolve_configs(cmd.config.as_deref(), None, &cmd.pipeline)?;
    let model = load_checkpoint(&cmd.checkpoint, None)?;
    let records = load_manifest(&cmd.manifest)?;
    let keep: Vec<UtteranceRecord> = if cmd.speakers.is_empty() {
        records
    } else {
        let want: BTreeSet<&str> = cmd.speakers.iter().map(String::as_str).collect();
        records
            .into_iter()
            .filter(|r| want.contains(r.speaker_id.as_str()))
            .collect()
    };
    if keep.is_empty() {
        bail!("no utterances to evaluate");
    }

    let items = only_items(prepare_items(
        &keep,
        &parent_dir(&cmd.manifest),
        model.config.feature_dim,
        &opts,
    )?);
    let name = if cmd.speakers.is_empty() {
        "all".to_string()
    } else {
        cmd.speakers.join("+")
    };
    let outcome = evaluate_split(&model, &items, &name)?;

    let m = &outcome.metrics;
    println!(
        "evaluated {} utterances against the {} checkpoint",
        m.test_items,
        model.config.pooling.as_str()
    );
    println!(
        "UA {:.4}  WA {:.4}  valence MAE {:.4}  arousal MAE {:.4}  segmental fallbacks {}",
        m.ua, m.wa, m.valence_mae, m.arousal_mae, m.sap_fallbacks
    );
    let labels = class_names(model.config.classes);
    println!("confusion (rows are truth):");
    for (t, label) in labels.iter().enumerate() {
        let row: Vec<String> = (0..labels.len())
            .map(|p| outcome.confusion.count(t, p).to_string())
            .collect();
        println!("  {label:>8}  {}", row.join(" "));
    }

    if let Some(dir) = &cmd.out {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let rows = outcome.confusion.rows_as_vecs();
        let report = serde_json::json!({
            "labels": labels,
            "fold": m,
            "confusion": rows,
        });
        let report_path = dir.join("report.json");
        fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", report_path.display()))?;
        fs::write(dir.join("confusion.csv"), confusion_csv(&labels, &rows))?;
        fs::write(dir.join("confusion.svg"), confusion_svg(&labels, &rows))?;
        println!("report written to {}", report_path.display());
    }
    Ok(())
}

fn run_crossval(cmd: CrossvalCmd) -> Result<()> {
    let (config, opts) = resolve_configs(cmd.config.as_deref(), Some(&cmd.model), &cmd.pipeline)?;
    let out_dir = cmd
        .out
        .clone()
        .unwrap_or_else(|| parent_dir(&cmd.manifest).join("runs"));
    let report = run_cross_validation(&cmd.manifest, &config, &opts, &out_dir)?;

    println!(
        "cross-validation: {} folds, {} pooling",
        report.folds.len(),
        config.pooling.as_str()
    );
    for fold in &report.folds {
        println!(
            "  {:<12} UA {:.4}  WA {:.4}  valence MAE {:.4}  arousal MAE {:.4}",
            fold.name, fold.ua, fold.wa, fold.valence_mae, fold.arousal_mae
        );
    }
    print_summary("UA", &report.ua);
    print_summary("WA", &report.wa);
    print_summary("valence MAE", &report.valence_mae);
    print_summary("arousal MAE", &report.arousal_mae);
    println!("segmental fallbacks: {}", report.sap_fallbacks);
    println!(
        "aggregate written to {}",
        out_dir.join("aggregate.json").display()
    );
    Ok(())
}

fn run_synth(cmd: SynthCmd) -> Result<()> {
    let mut spec = GeneratorSpec::default();
    if let Some(v) = cmd.seed {
        spec.seed = v;
    }
    if let Some(v) = cmd.speakers {
        spec.speakers = v;
    }
    if let Some(v) = cmd.utterances {
        spec.utterances_per_speaker = v;
    }
    if let Some(v) = cmd.sample_rate {
        spec.sample_rate = v;
    }
    if let Some(v) = cmd.speech_fraction {
        spec.speech_fraction = v;
    }
    if let Some(v) = cmd.noise {
        spec.noise_level = v;
    }
    spec.balanced = cmd.balanced;
    let manifest = generate_corpus(&spec, &cmd.out)?;
    println!(
        "{} speakers x {} utterances written under {}",
        spec.speakers,
        spec.utterances_per_speaker,
        cmd.out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}

fn run_gradcheck(cmd: GradcheckCmd) -> Result<()> {
    let entries = verify_gradients(cmd.seed)?;
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    for e in &entries {
        println!(
            "{:<36} max rel error {:.3e}  ({} params)",
            e.name, e.max_rel_error, e.params
        );
        if e.max_rel_error > worst {
            worst = e.max_rel_error;
            worst_name = e.name.clone();
        }
    }
    println!("overall max rel error {worst:.3e}");
    if worst >= cmd.tolerance {
        bail!(
            "gradient check failed: {worst_name} at {worst:.3e} exceeds tolerance {:.1e}",
            cmd.tolerance
        );
    }
    Ok(())
}

/// Builds the model config and pipeline options from defaults, then the
/// config file, then explicit flags. `model_flags` is `None` for commands
/// whose model comes from a checkpoint.
fn resolve_configs(
    config_path: Option<&Path>,
    model_flags: Option<&ModelFlags>,
    pipeline_flags: &PipelineFlags,
) -> Result<(ModelConfig, CrossvalOptions)> {
    let mut file = match config_path {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::empty(),
    };
    let (mut model, feature_dim_explicit) = match model_flags {
        Some(flags) => resolve_model(flags, &mut file)?,
        None => (ModelConfig::default(), false),
    };
    let opts = resolve_pipeline(pipeline_flags, &mut file)?;
    file.finish()?;
    if !feature_dim_explicit {
        model.feature_dim = opts.mel.n_mels;
    }
    Ok((model, opts))
}

fn resolve_model(flags: &ModelFlags, file: &mut FileConfig) -> Result<(ModelConfig, bool)> {
    let mut c = ModelConfig::default();
    let mut feature_dim_explicit = false;

    if let Some(s) = file.take::<String>("pooling")? {
        c.pooling = parse_pooling(&s)?;
    }
    if let Some(v) = file.take("bypass_attention")? {
        c.bypass_attention = v;
    }
    if let Some(v) = file.take("residual")? {
        c.residual = v;
    }
    if let Some(v) = file.take("seed")? {
        c.seed = v;
    }
    if let Some(v) = file.take("feature_dim")? {
        c.feature_dim = v;
        feature_dim_explicit = true;
    }
    if let Some(v) = file.take("projection_dim")? {
        c.projection_dim = v;
    }
    if let Some(v) = file.take("heads")? {
        c.heads = v;
    }
    if let Some(v) = file.take("alpha")? {
        c.alpha = v;
    }
    if let Some(v) = file.take("beta")? {
        c.beta = v;
    }
    if let Some(v) = file.take("gamma")? {
        c.gamma = v;
    }
    if let Some(v) = file.take("batch_size")? {
        c.batch_size = v;
    }
    if let Some(v) = file.take("epochs")? {
        c.epochs = v;
    }
    if let Some(v) = file.take("base_lr")? {
        c.base_lr = v;
    }
    if let Some(v) = file.take("warmup_ratio")? {
        c.warmup_ratio = v;
    }
    if let Some(v) = file.take("patience")? {
        c.patience = v;
    }

    if let Some(p) = flags.pooling {
        c.pooling = p.into();
    }
    if flags.bypass_attention {
        c.bypass_attention = true;
    }
    if flags.no_residual {
        c.residual = false;
    }
    if let Some(v) = flags.seed {
        c.seed = v;
    }
    if let Some(v) = flags.feature_dim {
        c.feature_dim = v;
        feature_dim_explicit = true;
    }
    if let Some(v) = flags.projection_dim {
        c.projection_dim = v;
    }
    if let Some(v) = flags.heads {
        c.heads = v;
    }
    if let Some(v) = flags.alpha {
        c.alpha = v;
    }
    if let Some(v) = flags.beta {
        c.beta = v;
    }
    if let Some(v) = flags.gamma {
        c.gamma = v;
    }
    if let Some(v) = flags.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = flags.epochs {
        c.epochs = v;
    }
    if let Some(v) = flags.lr {
        c.base_lr = v;
    }
    if let Some(v) = flags.warmup_ratio {
        c.warmup_ratio = v;
    }
    if let Some(v) = flags.patience {
        c.patience = v;
    }

    Ok((c, feature_dim_explicit))
}

fn resolve_pipeline(flags: &PipelineFlags, file: &mut FileConfig) -> Result<CrossvalOptions> {
    let mut o = CrossvalOptions::default();

    let file_vad: Option<String> = file.take("vad")?;
    let file_vad_dir: Option<PathBuf> = file.take::<String>("vad_dir")?.map(PathBuf::from);
    if let Some(v) = file.take("frame_ms")? {
        o.vad_config.frame_ms = v;
    }
    if let Some(v) = file.take("aggressiveness")? {
        o.vad_config.aggressiveness = v;
    }
    if let Some(v) = file.take("hangover_frames")? {
        o.vad_config.hangover_frames = v;
    }
    if let Some(v) = file.take("noise_adapt_rate")? {
        o.vad_config.noise_adapt_rate = v;
    }
    if let Some(v) = file.take::<f64>("max_seconds")? {
        o.max_seconds = (v > 0.0).then_some(v);
    }
    if let Some(v) = file.take("window_ms")? {
        o.frame.window_ms = v;
    }
    if let Some(v) = file.take("stride_ms")? {
        o.frame.stride_ms = v;
    }
    if let Some(v) = file.take("n_mels")? {
        o.mel.n_mels = v;
    }
    if let Some(v) = file.take("fmin_hz")? {
        o.mel.fmin_hz = v;
    }
    if let Some(v) = file.take("fmax_hz")? {
        o.mel.fmax_hz = v;
    }

    if let Some(v) = flags.frame_ms {
        o.vad_config.frame_ms = v;
    }
    if let Some(v) = flags.aggressiveness {
        o.vad_config.aggressiveness = v;
    }
    if let Some(v) = flags.hangover {
        o.vad_config.hangover_frames = v;
    }
    if let Some(v) = flags.noise_adapt_rate {
        o.vad_config.noise_adapt_rate = v;
    }
    if let Some(v) = flags.max_seconds {
        o.max_seconds = (v > 0.0).then_some(v);
    }
    if let Some(v) = flags.window_ms {
        o.frame.window_ms = v;
    }
    if let Some(v) = flags.stride_ms {
        o.frame.stride_ms = v;
    }
    if let Some(v) = flags.n_mels {
        o.mel.n_mels = v;
    }
    if let Some(v) = flags.fmin_hz {
        o.mel.fmin_hz = v;
    }
    if let Some(v) = flags.fmax_hz {
        o.mel.fmax_hz = v;
    }

    let kind = flags
        .vad
        .map(|v| {
            match v {
                VadArg::Builtin => "builtin",
                VadArg::External => "external",
                VadArg::Truth => "truth",
            }
            .to_string()
        })
        .or(file_vad)
        .unwrap_or_else(|| "builtin".to_string());
    let dir = flags.vad_dir.clone().or(file_vad_dir);
    o.vad = match kind.as_str() {
        "builtin" => VadSource::Builtin,
        "truth" => VadSource::Truth,
        "external" => match dir {
            Some(d) => VadSource::External(d),
            None => bail!("--vad external needs --vad-dir (or vad_dir in the config file)"),
        },
        other => bail!("unknown vad source `{other}` (expected builtin, external, or truth)"),
    };
    Ok(o)
}

fn parse_pooling(s: &str) -> Result<PoolingMode> {
    match s {
        "gap" | "gap_only" => Ok(PoolingMode::GapOnly),
        "sap" | "sap_only" => Ok(PoolingMode::SapOnly),
        "sr" => Ok(PoolingMode::Sr),
        other => bail!("unknown pooling `{other}` (expected gap, sap, or sr)"),
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn only_items(prepared: Vec<segpool::harness::PreparedItem>) -> Vec<TrainItem<f32>> {
    prepared.into_iter().map(|p| p.item).collect()
}

fn class_names(classes: usize) -> Vec<String> {
    if classes == CLASS_LABELS.len() {
        CLASS_LABELS.iter().map(|s| s.to_string()).collect()
    } else {
        (0..classes).map(|i| format!("class_{i}")).collect()
    }
}

fn print_summary(what: &str, s: &FoldSummary) {
    println!(
        "{what:<12} mean {:.4}  95% CI ({:.4}, {:.4})",
        s.mean, s.ci_lower, s.ci_upper
    );
}
