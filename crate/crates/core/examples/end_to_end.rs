//! Generate a corpus, train the sequence model, then mine and score
//! greedy-decoded spottings on held-out programmes.
//!
//! `cargo run --release --example end_to_end -- [epochs] [d_model] [lr]`

use std::time::Instant;

use signspot::corpus::{generate_with, GenerateConfig, NoiseConfig};
use signspot::decode::AttnAggregation;
use signspot::eval::{eval_localisation, loc_inputs_from_spottings, TimingSource};
use signspot::model::train::fit_config_to_corpus;
use signspot::model::{train_model, LrSchedule, ModelConfig, TrainConfig, Transformer};
use signspot::spot::{mine_corpus, MiningStrategy};
use signspot::text::{build_vocabulary, encode_corpus, PreprocessConfig};

fn main() -> signspot::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let epochs = arg(0, 20.0) as usize;
    let d_model = arg(1, 64.0) as usize;
    let lr = arg(2, 1e-3);

    let started = Instant::now();
    let raw = generate_with(&GenerateConfig {
        n_clips: 2200,
        vocab_size: 50,
        feature_dim: 64,
        noise: NoiseConfig {
            drop_prob: 0.1,
            offset_std_frames: 2.0,
            seed: 1,
            ..NoiseConfig::none()
        },
        seed: 1,
        ..GenerateConfig::default()
    })?;
    let text = PreprocessConfig::default();
    let vocab = build_vocabulary(&raw, &text)?;
    let corpus = encode_corpus(&raw, &vocab, &text)?;
    let (train_set, test_set) = corpus.split_programmes(100);
    println!(
        "{} training clips, {} held-out clips, {} stems",
        train_set.len(),
        test_set.len(),
        vocab.n_stems()
    );

    let base = ModelConfig {
        d_model,
        n_heads: 2,
        n_layers: 2,
        feedforward_dim: 2 * d_model,
        dropout_prob: 0.1,
        max_enc_len: 64,
        ..ModelConfig::default()
    };
    let mcfg = fit_config_to_corpus(&base, &corpus);
    let cfg = TrainConfig {
        lr: LrSchedule::constant(lr),
        epochs,
        ..TrainConfig::default()
    };
    let model = Transformer::new(mcfg, 1)?;
    let trained = train_model(model, &train_set, &cfg, 1, |_| {})?;
    println!("trained in {:.1}s", started.elapsed().as_secs_f64());

    for agg in [AttnAggregation::MeanAll, AttnAggregation::Layer(0), AttnAggregation::Layer(1)] {
        let mined = mine_corpus(&trained.model, &test_set, MiningStrategy::GdFiltered, agg, None)?;
        let inputs = loc_inputs_from_spottings(&test_set, &mined.spottings, TimingSource::Truth)?;
        let (report, _) = eval_localisation(&inputs, 2)?;
        println!(
            "greedy {agg}: recall {:.3} precision {:.3} loc acc {:?}",
            report.recall, report.precision, report.loc_acc
        );
    }
    println!("total {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
