//! Pool trimmed instances around annotation times, train the residual MLP
//! on them and report recognition accuracy over several seeds.
//!
//! `cargo run --release --example classify_instances`

use signspot::classify::{extract_instances, repeat_over_seeds, truth_rows, ClassSet, MlpConfig};
use signspot::corpus::{generate_with, GenerateConfig, NoiseConfig};
use signspot::model::LrSchedule;
use signspot::text::{build_vocabulary, encode_corpus, PreprocessConfig, N_SPECIAL};

fn main() -> signspot::Result<()> {
    let raw = generate_with(&GenerateConfig {
        n_clips: 400,
        vocab_size: 20,
        feature_dim: 32,
        noise: NoiseConfig::default(),
        seed: 9,
        ..GenerateConfig::default()
    })?;
    let text = PreprocessConfig::default();
    let vocab = build_vocabulary(&raw, &text)?;
    let corpus = encode_corpus(&raw, &vocab, &text)?;
    let (train, test) = corpus.split_programmes(16);
    let classes = ClassSet::new(N_SPECIAL..vocab.len());

    let (train_set, stats) = extract_instances(&train, &truth_rows(&train)?, "truth", 16, Some(&classes));
    println!("train: {stats:?}");
    let (test_set, stats) = extract_instances(&test, &truth_rows(&test)?, "truth", 16, Some(&classes));
    println!("test: {stats:?}");

    let config = MlpConfig {
        hidden: vec![128, 64],
        epochs: 15,
        lr: LrSchedule {
            base: 1e-2,
            milestones: vec![10, 13],
            factor: 0.1,
        },
        ..MlpConfig::default()
    };
    let summary = repeat_over_seeds(&train_set, &test_set, &classes, &config, &[1, 2, 3])?;
    println!(
        "top-1 {:.3} ± {:.3}, top-5 {:.3} ± {:.3}, per-class top-1 {:.3}",
        summary.mean.top1, summary.std.top1, summary.mean.top5, summary.std.top5, summary.mean.top1_per_class
    );
    Ok(())
}
