//! Generate a small synthetic corpus with ground truth, inspect one clip,
//! and round-trip it through the JSON-lines format.
//!
//! `cargo run --example generate_corpus -- [out.jsonl]`

use signspot::corpus::{generate_with, load_corpus, save_corpus, GenerateConfig, NoiseConfig};

fn main() -> signspot::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("signspot_corpus.jsonl").to_string_lossy().into_owned());
    let corpus = generate_with(&GenerateConfig {
        n_clips: 60,
        vocab_size: 20,
        feature_dim: 16,
        noise: NoiseConfig {
            drop_prob: 0.1,
            insert_prob: 0.05,
            offset_std_frames: 2.0,
            seed: 7,
            ..NoiseConfig::none()
        },
        seed: 7,
        ..GenerateConfig::default()
    })?;
    println!(
        "{} programmes, {} clips, {} lexicon entries",
        corpus.programmes.len(),
        corpus.len(),
        corpus.lexicon.len()
    );

    let clip = &corpus.clips[0];
    let words: Vec<&str> = clip
        .subtitle
        .iter()
        .filter_map(|t| t.raw.as_deref().or(corpus.word(t.token_id)))
        .collect();
    println!("clip {}: \"{}\"", clip.id, words.join(" "));
    println!(
        "  span {:?}, {} feature frames of dim {} (stride {})",
        clip.sub_span,
        clip.features.len(),
        clip.features.dim(),
        clip.features.stride()
    );
    for sign in clip.truth.iter().flatten() {
        println!(
            "  truth {:<10} centre frame {:>5} (feature index {:?})",
            corpus.word(sign.token_id).unwrap_or("?"),
            sign.centre_frame(),
            clip.enc_index(sign.centre_frame())
        );
    }
    for a in &clip.annotations {
        println!(
            "  annotation {:<10} frame {:>5} confidence {:.2} ({})",
            corpus.word(a.token_id).unwrap_or("?"),
            a.frame_time,
            a.confidence,
            a.source.as_str()
        );
    }

    save_corpus(&corpus, &out)?;
    let back = load_corpus(&out)?;
    println!("wrote {out}; reloaded identical: {}", back == corpus);
    Ok(())
}
