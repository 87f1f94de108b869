//! Stemming, stop-word removal, vocabulary construction and encoding.
//!
//! `cargo run --example text_preprocessing`

use signspot::corpus::{generate_corpus, NoiseConfig};
use signspot::text::{
    build_vocabulary, encode_corpus, english_stop_words, porter_stem, preprocess_subtitle, PreprocessConfig,
    VocabPolicy,
};

fn main() -> signspot::Result<()> {
    for word in ["talking", "armies", "knowing", "relational", "generalization"] {
        println!("{word:>15} -> {}", porter_stem(word));
    }
    println!("{} English stop words", english_stop_words().len());

    let raw = generate_corpus(40, 15, 8, NoiseConfig::default(), 3)?;
    for policy in [VocabPolicy::FromAnnotations, VocabPolicy::TopFraction(0.5)] {
        let cfg = PreprocessConfig {
            vocab_policy: policy,
            ..PreprocessConfig::default()
        };
        let vocab = build_vocabulary(&raw, &cfg)?;
        println!("{policy:?}: {} stems", vocab.n_stems());
    }

    let cfg = PreprocessConfig::default();
    let vocab = build_vocabulary(&raw, &cfg)?;
    let words: Vec<&str> = raw.clips[0]
        .subtitle
        .iter()
        .filter_map(|t| t.raw.as_deref().or(raw.word(t.token_id)))
        .collect();
    let encoded = preprocess_subtitle(&words, &vocab, &cfg);
    println!("\"{}\"", words.join(" "));
    for t in &encoded {
        println!("  {:>3} {}", t.token_id, vocab.stem(t.token_id).unwrap_or("?"));
    }

    let corpus = encode_corpus(&raw, &vocab, &cfg)?;
    let tokens: usize = corpus.clips.iter().map(|c| c.subtitle.len()).sum();
    println!("encoded {} clips, {tokens} tokens", corpus.len());
    Ok(())
}
