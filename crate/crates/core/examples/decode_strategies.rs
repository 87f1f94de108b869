//! Greedy, beam and teacher-forced decoding of held-out clips, with the
//! attention peak of every decoded step.
//!
//! `cargo run --release --example decode_strategies`

use signspot::corpus::{generate_corpus, NoiseConfig};
use signspot::decode::{
    aggregate_attention, beam_decode, greedy_decode, teacher_forced_decode, AttnAggregation, ClipScorer,
    DecodeDumpEntry,
};
use signspot::model::train::fit_config_to_corpus;
use signspot::model::{train_model, LrSchedule, ModelConfig, TrainConfig, Transformer};
use signspot::text::{build_vocabulary, encode_corpus, PreprocessConfig};

fn main() -> signspot::Result<()> {
    let raw = generate_corpus(330, 12, 16, NoiseConfig::none(), 2)?;
    let text = PreprocessConfig::default();
    let vocab = build_vocabulary(&raw, &text)?;
    let corpus = encode_corpus(&raw, &vocab, &text)?;
    let (train, test) = corpus.split_programmes(15);
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
        epochs: 10,
        ..TrainConfig::default()
    };
    let model = train_model(Transformer::new(mcfg, 1)?, &train, &cfg, 1, |_| {})?.model;
    let word = |t: usize| vocab.stem(t).unwrap_or("?").to_string();

    for clip in test.clips.iter().take(3) {
        let scorer = ClipScorer::for_clip(&model, clip)?;
        let reference: Vec<String> = clip.token_ids().into_iter().map(word).collect();
        println!("clip {} reference {:?}", clip.id, reference);

        let g = greedy_decode(&scorer)?;
        let entry = DecodeDumpEntry::new(&clip.id, &g, AttnAggregation::MeanAll)?;
        let tokens: Vec<String> = g.hypothesis.iter().map(|&t| word(t)).collect();
        println!("  greedy   {:?} score {:.3} peaks {:?}", tokens, g.score, entry.argmax_enc);

        for (rank, b) in beam_decode(&scorer, 4)?.iter().enumerate() {
            let tokens: Vec<String> = b.hypothesis.iter().map(|&t| word(t)).collect();
            println!("  beam #{rank}  {:?} score {:.3}", tokens, b.score);
        }

        let tf = teacher_forced_decode(&scorer, &clip.token_ids())?;
        let pooled = aggregate_attention(&tf.attention, AttnAggregation::Layer(0))?;
        for (t, row) in pooled.rows().into_iter().enumerate() {
            let (peak, value) = row
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |best, (j, &v)| if v > best.1 { (j, v) } else { best });
            println!(
                "  forced {:<10} predicted {:<10} peak {peak:>3} ({value:.2})",
                word(tf.reference[t]),
                word(tf.predictions[t])
            );
        }
    }
    Ok(())
}
