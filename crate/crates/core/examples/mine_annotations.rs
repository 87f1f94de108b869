//! Mine annotation stores with every strategy and tabulate yield and
//! localisation quality against the synthetic ground truth.
//!
//! `cargo run --release --example mine_annotations`

use signspot::corpus::{generate_with, GenerateConfig, NoiseConfig};
use signspot::eval::{eval_localisation, loc_inputs_from_spottings, TimingSource};
use signspot::model::train::fit_config_to_corpus;
use signspot::model::{train_model, LrSchedule, ModelConfig, TrainConfig, Transformer};
use signspot::spot::{mine_corpus, write_annotation_store, write_yield_stats, MiningStrategy};
use signspot::text::{build_vocabulary, encode_corpus, PreprocessConfig};

fn main() -> signspot::Result<()> {
    let raw = generate_with(&GenerateConfig {
        n_clips: 440,
        vocab_size: 15,
        feature_dim: 16,
        noise: NoiseConfig {
            drop_prob: 0.1,
            offset_std_frames: 2.0,
            seed: 4,
            ..NoiseConfig::none()
        },
        seed: 4,
        ..GenerateConfig::default()
    })?;
    let text = PreprocessConfig::default();
    let vocab = build_vocabulary(&raw, &text)?;
    let corpus = encode_corpus(&raw, &vocab, &text)?;
    let (train, test) = corpus.split_programmes(20);
    let mcfg = fit_config_to_corpus(
        &ModelConfig {
            d_model: 32,
            feedforward_dim: 64,
            max_enc_len: 64,
            ..ModelConfig::default()
        },
        &corpus,
    );
    let cfg = TrainConfig {
        lr: LrSchedule::constant(2e-3),
        epochs: 12,
        ..TrainConfig::default()
    };
    let model = train_model(Transformer::new(mcfg, 1)?, &train, &cfg, 1, |_| {})?.model;

    println!("{:<14} {:>6} {:>7} {:>9} {:>8}", "strategy", "yield", "recall", "precision", "loc acc");
    let strategies = [
        MiningStrategy::GdFiltered,
        MiningStrategy::GdUnfiltered,
        MiningStrategy::BsAll { width: 4 },
        MiningStrategy::BsBestRecall { width: 4 },
        MiningStrategy::TfThreshold { tau: 0.2 },
        MiningStrategy::TfThreshold { tau: 0.05 },
        MiningStrategy::TfPrediction,
    ];
    for strategy in strategies {
        let mined = mine_corpus(&model, &test, strategy, strategy.default_aggregation(), None)?;
        let inputs = loc_inputs_from_spottings(&test, &mined.spottings, TimingSource::Truth)?;
        let (r, _) = eval_localisation(&inputs, 2)?;
        println!(
            "{:<14} {:>6} {:>7.3} {:>9.3} {:>8}",
            strategy.to_string(),
            mined.stats.ann_full_vocab,
            r.recall,
            r.precision,
            r.loc_acc.map_or("-".into(), |v| format!("{v:.3}"))
        );
        if strategy == MiningStrategy::GdFiltered {
            let dir = std::env::temp_dir();
            write_annotation_store(&mined.spottings, &test.lexicon, dir.join("signspot_gd.csv"))?;
            write_yield_stats(&mined.stats, dir.join("signspot_gd.yield.json"))?;
        }
    }
    Ok(())
}
