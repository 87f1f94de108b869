//! Subtitle text processing: stemming, stop words, vocabulary.

mod porter;
mod vocab;

pub use porter::{stem as porter_stem, IdentityStemmer, PorterStemmer, Stemmer};
pub use vocab::{
    build_vocabulary, build_vocabulary_with_stop_words, encode_corpus, preprocess_subtitle, read_stop_words,
    PreprocessConfig, VocabPolicy, Vocabulary, BOS, EOS, N_SPECIAL, PAD,
};

const STOP_WORDS_EN: &str = include_str!("../../data/stopwords_en.txt");

/// The bundled English stop-word list.
pub fn english_stop_words() -> Vec<&'static str> {
    STOP_WORDS_EN.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}
