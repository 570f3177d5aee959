//! Calibration run behind the frozen dilution margin.
//!
//! Generates the standard synthetic corpus (8 speakers, 30% speech,
//! neutral-heavy class mix), then sweeps leave-one-speaker-out training for
//! each pooling mode across five seeds and prints mean test UA per mode.
//! The acceptance margin (speech-gated pooling beats the all-frame mean by
//! at least five percentage points) was frozen from this program's output;
//! docs/dilution-calibration.md holds the recorded numbers.
//!
//! Run with: cargo run --release --example calibrate_dilution

use segpool::harness::{run_cross_validation, CrossvalOptions, GeneratorSpec, VadSource};
use segpool::{ModelConfig, PoolingMode};

fn study_config(pooling: PoolingMode, seed: u64) -> ModelConfig {
    ModelConfig {
        pooling,
        batch_size: 16,
        epochs: 20,
        base_lr: 2e-3,
        seed,
        ..ModelConfig::default()
    }
}

fn main() {
    let modes = [PoolingMode::GapOnly, PoolingMode::SapOnly, PoolingMode::Sr];
    let reps: Vec<u64> = (0..5).collect();
    let mut means = [0.0f64; 3];

    println!("rep  corpus_seed  model_seed  gap_ua   sap_ua   sr_ua");
    for &rep in &reps {
        let corpus_seed = 1000 + rep;
        let model_seed = 40 + rep;

        let corpus_dir = tempfile::tempdir().expect("tempdir");
        let spec = GeneratorSpec {
            seed: corpus_seed,
            ..GeneratorSpec::default()
        };
        let manifest = segpool::harness::generate_corpus(&spec, corpus_dir.path()).expect("corpus");

        let opts = CrossvalOptions {
            vad: VadSource::Truth,
            ..CrossvalOptions::default()
        };

        let mut row = [0.0f64; 3];
        for (m, &mode) in modes.iter().enumerate() {
            let out = tempfile::tempdir().expect("tempdir");
            let report = run_cross_validation(
                &manifest,
                &study_config(mode, model_seed),
                &opts,
                out.path(),
            )
            .expect("sweep");
            row[m] = report.ua.mean;
            means[m] += report.ua.mean / reps.len() as f64;
        }
        println!(
            "{rep:>3}  {corpus_seed:>11}  {model_seed:>10}  {:.4}   {:.4}   {:.4}",
            row[0], row[1], row[2]
        );
    }

    println!();
    println!("mean over {} seeds:", reps.len());
    println!("  gap_only  {:.4}", means[0]);
    println!("  sap_only  {:.4}", means[1]);
    println!("  sr        {:.4}", means[2]);
    println!(
        "  sap - gap margin: {:+.2} pp",
        (means[1] - means[0]) * 100.0
    );
    println!(
        "  sr  - gap margin: {:+.2} pp",
        (means[2] - means[0]) * 100.0
    );
}
