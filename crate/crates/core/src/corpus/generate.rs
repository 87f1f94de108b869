//! Synthetic corpora with known ground truth.
//!
//! Each programme is a continuous timeline of "sentences". A sentence is a
//! run of signs, each a 7-13 frame segment whose feature frames are drawn
//! from a token-specific Gaussian; the subtitle for the sentence lists its
//! words (inflected surface forms plus interleaved stop words). Weak
//! alignment comes from the noise model: dropped signs, inserted signs,
//! reordering and a temporal offset between subtitle and signing.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    AnnotationSource, Corpus, FeatureSequence, GroundTruthSign, Programme, SparseAnnotation, SubtitledClip,
    TokenRef, TokenSpace,
};
use crate::error::{Error, Result};
use crate::text::{english_stop_words, PorterStemmer, Stemmer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Probability that a subtitle word has no realised sign.
    pub drop_prob: f64,
    /// Probability, per subtitle word, of an extra sign absent from the subtitle.
    pub insert_prob: f64,
    /// Shuffle sign order relative to subtitle order.
    pub reorder: bool,
    /// Standard deviation of the subtitle-vs-signing shift, in video frames.
    pub offset_std_frames: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            drop_prob: 0.1,
            insert_prob: 0.0,
            reorder: false,
            offset_std_frames: 2.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            drop_prob: 0.0,
            insert_prob: 0.0,
            reorder: false,
            offset_std_frames: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("drop_prob", self.drop_prob), ("insert_prob", self.insert_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.offset_std_frames >= 0.0 && self.offset_std_frames.is_finite()) {
            return Err(Error::config("offset_std_frames must be a finite non-negative number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub n_clips: usize,
    /// Number of sign classes.
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub stride: u32,
    pub fps: f64,
    pub clips_per_programme: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_sign_frames: u32,
    pub max_sign_frames: u32,
    /// Inclusive range of transition frames between consecutive signs.
    pub sign_gap_frames: (u32, u32),
    /// Inclusive range of inactive frames between sentences.
    pub sentence_gap_frames: (u32, u32),
    /// Fraction of subtitle-matched truth signs revealed as sparse annotations.
    pub reveal_fraction: f64,
    /// Probability of a stop word before each subtitle word.
    pub stop_word_prob: f64,
    /// Probability that a subtitle word appears inflected ("-s", "-ing", "-ed").
    pub inflection_prob: f64,
    pub prototype_scale: f64,
    pub emission_noise: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n_clips: 100,
            vocab_size: 50,
            feature_dim: 64,
            noise: NoiseConfig::default(),
            seed: 0,
            stride: 4,
            fps: super::DEFAULT_FPS,
            clips_per_programme: 20,
            min_tokens: 4,
            max_tokens: 8,
            min_sign_frames: 7,
            max_sign_frames: 13,
            sign_gap_frames: (2, 8),
            sentence_gap_frames: (12, 40),
            reveal_fraction: 0.3,
            stop_word_prob: 0.25,
            inflection_prob: 0.5,
            prototype_scale: 1.0,
            emission_noise: 1.0,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.n_clips == 0 {
            return Err(Error::config("n_clips must be at least 1"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size must be at least 2"));
        }
        if self.feature_dim == 0 || self.stride == 0 || self.clips_per_programme == 0 {
            return Err(Error::config("feature_dim, stride and clips_per_programme must be positive"));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(Error::config("need 1 <= min_tokens <= max_tokens"));
        }
        if self.min_sign_frames == 0 || self.min_sign_frames > self.max_sign_frames {
            return Err(Error::config("need 1 <= min_sign_frames <= max_sign_frames"));
        }
        if self.sign_gap_frames.0 > self.sign_gap_frames.1 || self.sentence_gap_frames.0 > self.sentence_gap_frames.1 {
            return Err(Error::config("gap ranges must be ordered (low, high)"));
        }
        for (name, p) in [
            ("reveal_fraction", self.reveal_fraction),
            ("stop_word_prob", self.stop_word_prob),
            ("inflection_prob", self.inflection_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.fps > 0.0) || !(self.emission_noise >= 0.0) || !(self.prototype_scale > 0.0) {
            return Err(Error::config("fps and prototype_scale must be positive, emission_noise non-negative"));
        }
        Ok(())
    }
}

/// Generates a corpus with the default layout parameters.
pub fn generate_corpus(
    n_clips: usize,
    vocab_size: usize,
    feature_dim: usize,
    noise: NoiseConfig,
    seed: u64,
) -> Result<Corpus> {
    generate_with(&GenerateConfig {
        n_clips,
        vocab_size,
        feature_dim,
        noise,
        seed,
        ..GenerateConfig::default()
    })
}

const PROTOTYPE_STREAM: u64 = 0;
const LEXICON_STREAM: u64 = 1;
const FIRST_PROGRAMME_STREAM: u64 = 16;

/// Lexicon surface forms for the sign classes. Each base word is chosen so
/// that it and its "-s", "-ing" and "-ed" forms share one Porter stem, and no
/// two classes share a stem.
fn class_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "m", "n", "p", "r", "t", "v", "br", "dr", "gr", "pr", "tr"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
    const CODAS: &[&str] = &["b", "d", "g", "k", "m", "n", "p", "r", "t", "v"];
    let stops: HashSet<&str> = english_stop_words().into_iter().collect();
    let mut words = Vec::with_capacity(n);
    let mut stems = HashSet::new();
    while words.len() < n {
        let syllables = if rng.random_bool(0.5) { 2 } else { 3 };
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        w.push_str(CODAS.choose(rng).unwrap());
        if stops.contains(w.as_str()) {
            continue;
        }
        let stem = PorterStemmer.stem(&w);
        let consistent = ["s", "ing", "ed"]
            .iter()
            .all(|suffix| PorterStemmer.stem(&format!("{w}{suffix}")) == stem);
        if consistent && stems.insert(stem) {
            words.push(w);
        }
    }
    words
}

fn inflect(word: &str, rng: &mut ChaCha8Rng, prob: f64) -> String {
    if rng.random_bool(prob) {
        let suffix = ["s", "ing", "ed"].choose(rng).unwrap();
        format!("{word}{suffix}")
    } else {
        word.to_string()
    }
}

fn uniform_u32(rng: &mut ChaCha8Rng, range: (u32, u32)) -> u32 {
    rng.random_range(range.0..=range.1)
}

/// Per-frame state of a programme timeline.
#[derive(Clone, Copy)]
enum FrameLabel {
    Rest,
    Transition,
    Sign(usize),
}

struct Sentence {
    subtitle: Vec<TokenRef>,
    signs: Vec<GroundTruthSign>,
    span: (i64, i64),
}

struct World {
    cfg: GenerateConfig,
    class_words: Vec<String>,
    stop_ids: Vec<usize>,
    /// `(vocab_size + 2) × D`: class prototypes, then transition, then rest.
    prototypes: Array2<f64>,
}

pub fn generate_with(cfg: &GenerateConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut lex_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    lex_rng.set_stream(LEXICON_STREAM);
    let class_words = class_words(cfg.vocab_size, &mut lex_rng);
    let stop_words = english_stop_words();
    // Only apostrophe-free stop words; subtitles are plain lowercase words.
    let stop_words: Vec<&str> = stop_words.into_iter().filter(|w| w.bytes().all(|b| b.is_ascii_lowercase())).collect();
    let mut lexicon = class_words.clone();
    let stop_ids = (0..stop_words.len()).map(|i| cfg.vocab_size + i).collect();
    lexicon.extend(stop_words.iter().map(|s| s.to_string()));

    let mut proto_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    proto_rng.set_stream(PROTOTYPE_STREAM);
    let unit = Normal::new(0.0, cfg.prototype_scale).expect("validated scale");
    let prototypes = Array2::from_shape_simple_fn((cfg.vocab_size + 2, cfg.feature_dim), || unit.sample(&mut proto_rng));

    let world = World {
        cfg: cfg.clone(),
        class_words,
        stop_ids,
        prototypes,
    };
    let n_programmes = cfg.n_clips.div_ceil(cfg.clips_per_programme);
    let parts: Vec<(Programme, Vec<SubtitledClip>)> = (0..n_programmes)
        .into_par_iter()
        .map(|p| {
            let n = (cfg.n_clips - p * cfg.clips_per_programme).min(cfg.clips_per_programme);
            world.programme(p, n)
        })
        .collect::<Result<_>>()?;

    let mut programmes = Vec::with_capacity(parts.len());
    let mut clips = Vec::with_capacity(cfg.n_clips);
    for (programme, programme_clips) in parts {
        programmes.push(programme);
        clips.extend(programme_clips);
    }
    Ok(Corpus {
        lexicon,
        token_space: TokenSpace::Raw,
        fps: cfg.fps,
        programmes,
        clips,
        synthetic: true,
    })
}

impl World {
    fn sentence(&self, rng: &mut ChaCha8Rng, start: i64) -> Sentence {
        let cfg = &self.cfg;
        let noise = &cfg.noise;
        let n = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
        let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.vocab_size)).collect();

        let mut subtitle = Vec::new();
        for &c in &classes {
            if !self.stop_ids.is_empty() && rng.random_bool(cfg.stop_word_prob) {
                let id = *self.stop_ids.choose(rng).unwrap();
                subtitle.push(TokenRef { token_id: id, raw: None });
            }
            subtitle.push(TokenRef {
                token_id: c,
                raw: Some(inflect(&self.class_words[c], rng, cfg.inflection_prob)),
            });
        }

        let mut realised = Vec::new();
        for &c in &classes {
            if !rng.random_bool(noise.drop_prob) {
                realised.push(c);
            }
            if rng.random_bool(noise.insert_prob) {
                realised.push(rng.random_range(0..cfg.vocab_size));
            }
        }
        if noise.reorder {
            realised.shuffle(rng);
        }

        let mut signs = Vec::with_capacity(realised.len());
        let mut cursor = start;
        for (i, &c) in realised.iter().enumerate() {
            if i > 0 {
                cursor += uniform_u32(rng, cfg.sign_gap_frames) as i64;
            }
            let duration = rng.random_range(cfg.min_sign_frames..=cfg.max_sign_frames);
            signs.push(GroundTruthSign {
                token_id: c,
                onset_frame: cursor,
                duration_frames: duration,
            });
            cursor += duration as i64;
        }
        // A sentence whose signs were all dropped still shows some activity.
        let end = if signs.is_empty() { start + 12 } else { cursor - 1 };
        Sentence {
            subtitle,
            signs,
            span: (start, end),
        }
    }

    fn programme(&self, index: usize, n_clips: usize) -> Result<(Programme, Vec<SubtitledClip>)> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(FIRST_PROGRAMME_STREAM + index as u64);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed ^ cfg.seed.rotate_left(17));
        noise_rng.set_stream(FIRST_PROGRAMME_STREAM + index as u64);
        let offset_dist = Normal::new(0.0, cfg.noise.offset_std_frames).expect("validated offset std");

        let mut cursor = uniform_u32(&mut rng, cfg.sentence_gap_frames) as i64;
        let mut sentences = Vec::with_capacity(n_clips);
        for _ in 0..n_clips {
            let s = self.sentence(&mut rng, cursor);
            cursor = s.span.1 + 1 + uniform_u32(&mut rng, cfg.sentence_gap_frames) as i64;
            sentences.push(s);
        }
        let n_frames = cursor + cfg.sentence_gap_frames.0 as i64 + cfg.stride as i64;

        let mut labels = vec![FrameLabel::Rest; n_frames as usize];
        for s in &sentences {
            for f in s.span.0..=s.span.1 {
                labels[f as usize] = FrameLabel::Transition;
            }
            for sign in &s.signs {
                for f in sign.onset_frame..sign.onset_frame + sign.duration_frames as i64 {
                    labels[f as usize] = FrameLabel::Sign(sign.token_id);
                }
            }
        }
        let activity: Vec<bool> = labels.iter().map(|l| !matches!(l, FrameLabel::Rest)).collect();

        let stride = cfg.stride as i64;
        let n_features = (n_frames as usize).div_ceil(cfg.stride as usize);
        let emission = Normal::new(0.0, cfg.emission_noise.max(f64::MIN_POSITIVE)).expect("validated noise");
        let mut feats = Array2::<f32>::zeros((n_features, cfg.feature_dim));
        for (j, mut row) in feats.rows_mut().into_iter().enumerate() {
            let centre = (j as i64 * stride + stride / 2).min(n_frames - 1);
            let proto = match labels[centre as usize] {
                FrameLabel::Sign(c) => c,
                FrameLabel::Transition => cfg.vocab_size,
                FrameLabel::Rest => cfg.vocab_size + 1,
            };
            for (dst, &mu) in row.iter_mut().zip(self.prototypes.row(proto).iter()) {
                let e = if cfg.emission_noise > 0.0 { emission.sample(&mut rng) } else { 0.0 };
                *dst = (mu + e) as f32;
            }
        }
        let programme = Programme {
            id: format!("p{index:04}"),
            n_frames,
            features: FeatureSequence::new(feats, cfg.stride, 0)?,
            activity,
        };

        let mut clips = Vec::with_capacity(n_clips);
        for (k, s) in sentences.into_iter().enumerate() {
            let offset = if cfg.noise.offset_std_frames > 0.0 {
                offset_dist.sample(&mut noise_rng).round() as i64
            } else {
                0
            };
            let start = (s.span.0 + offset).clamp(0, n_frames - 2);
            let end = (s.span.1 + offset).clamp(start + 1, n_frames - 1);
            let (features, mask) = programme.cut((start, end))?;
            let mut annotations = Vec::new();
            let mut remaining: Vec<usize> = s.subtitle.iter().map(|t| t.token_id).collect();
            for sign in &s.signs {
                let Some(pos) = remaining.iter().position(|&t| t == sign.token_id) else {
                    continue;
                };
                remaining.swap_remove(pos);
                let reveal = rng.random_bool(cfg.reveal_fraction);
                let centre = sign.centre_frame();
                if reveal && (start..=end).contains(&centre) {
                    annotations.push(SparseAnnotation {
                        token_id: sign.token_id,
                        frame_time: centre,
                        confidence: 1.0,
                        source: AnnotationSource::Synthetic,
                    });
                }
            }
            clips.push(SubtitledClip {
                id: format!("{}-{k:03}", programme.id),
                programme: Some(programme.id.clone()),
                features,
                subtitle: s.subtitle,
                sub_span: (start, end),
                annotations,
                activity_mask: Some(mask),
                truth: Some(s.signs),
            });
        }
        Ok((programme, clips))
    }
}
