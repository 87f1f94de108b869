//! Train the encoder-decoder on a small corpus with attention supervision
//! and a curriculum, then save and reload the checkpoint.
//!
//! `cargo run --release --example train_transformer -- [align_weight]`

use signspot::corpus::{generate_with, select_training_subset, GenerateConfig, NoiseConfig};
use signspot::model::train::{fit_config_to_corpus, held_out_losses, Curriculum};
use signspot::model::{
    load_transformer, save_transformer, train_model, AlignLayer, LrSchedule, ModelConfig, TrainConfig, Transformer,
};
use signspot::text::{build_vocabulary, encode_corpus, PreprocessConfig};

fn main() -> signspot::Result<()> {
    let align_weight: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let raw = generate_with(&GenerateConfig {
        n_clips: 330,
        vocab_size: 12,
        feature_dim: 16,
        noise: NoiseConfig {
            drop_prob: 0.1,
            offset_std_frames: 2.0,
            seed: 5,
            ..NoiseConfig::none()
        },
        seed: 5,
        ..GenerateConfig::default()
    })?;
    let text = PreprocessConfig::default();
    let vocab = build_vocabulary(&raw, &text)?;
    let corpus = encode_corpus(&raw, &vocab, &text)?;
    let (train_all, test) = corpus.split_programmes(15);
    let train = select_training_subset(&train_all, 0.5)?;
    println!("{} of {} training clips kept by the confidence filter", train.len(), train_all.len());

    let mcfg = fit_config_to_corpus(
        &ModelConfig {
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            feedforward_dim: 64,
            max_enc_len: 64,
            ..ModelConfig::default()
        },
        &corpus,
    );
    let cfg = TrainConfig {
        lr: LrSchedule::constant(2e-3),
        epochs: 12,
        align_loss_weight: align_weight,
        curriculum: Some(Curriculum {
            stage_epochs: vec![2, 2],
            margin_frames: 17,
        }),
        max_grad_norm: Some(5.0),
        ..TrainConfig::default()
    };
    let out = train_model(Transformer::new(mcfg, 1)?, &train, &cfg, 1, |e| {
        println!(
            "epoch {:>2} stage {:?} lr {:.0e}: nll {:.3} align {:.3} ({} examples)",
            e.epoch, e.stage, e.lr, e.nll, e.align_loss, e.examples
        )
    })?;

    let losses = held_out_losses(&out.model, &test.clips, cfg.align_sigma, AlignLayer::Average)?;
    println!("held-out: {losses:?}");

    let path = std::env::temp_dir().join("signspot_model.ckpt");
    save_transformer(&path, &out.model)?;
    let back = load_transformer(&path)?;
    let exact = back
        .params()
        .tensors()
        .iter()
        .zip(out.model.params().tensors())
        .all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| *x == *y as f32 as f64));
    println!("checkpoint {} reloads at f32 precision: {exact}", path.display());
    Ok(())
}
