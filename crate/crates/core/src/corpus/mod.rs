//! Subtitled feature streams: data model, synthetic generation, subset
//! selection, re-alignment and serialisation.

mod generate;
mod io;
mod realign;
mod subset;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_corpus, generate_with, GenerateConfig, NoiseConfig};
pub use io::{
    load_corpus, read_annotation_csv, save_corpus, write_annotation_csv, AnnotationRow, ANNOTATION_CSV_HEADER,
};
pub use realign::{realign_subtitles, RealignIssue, RealignMode, RealignOutcome};
pub use subset::{select_training_subset, trim_to_annotations, trim_to_annotations_from};

/// Video frames per second assumed when none is recorded.
pub const DEFAULT_FPS: f64 = 25.0;

/// Feature vectors sampled every `stride` video frames, starting at `origin_frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    features: Array2<f32>,
    stride: u32,
    origin_frame: i64,
}

impl FeatureSequence {
    pub fn new(features: Array2<f32>, stride: u32, origin_frame: i64) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::contract("feature sequence must have at least one row and column"));
        }
        if stride == 0 {
            return Err(Error::contract("feature stride must be positive"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("feature sequence contains non-finite values"));
        }
        Ok(Self {
            features,
            stride,
            origin_frame,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn origin_frame(&self) -> i64 {
        self.origin_frame
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }

    /// Video frame of feature `index`.
    pub fn frame_time(&self, index: usize) -> i64 {
        self.origin_frame + index as i64 * self.stride as i64
    }

    /// Feature index covering video frame `frame` (may fall outside `0..len`).
    pub fn index_of_frame(&self, frame: i64) -> i64 {
        (frame - self.origin_frame).div_euclid(self.stride as i64)
    }

    pub fn last_frame(&self) -> i64 {
        self.frame_time(self.len() - 1)
    }

    /// Indices whose frame time lies in the closed range `[start, end]`.
    pub fn indices_within(&self, start: i64, end: i64) -> std::ops::Range<usize> {
        let stride = self.stride as i64;
        let first = (start - self.origin_frame).div_euclid(stride)
            + i64::from((start - self.origin_frame).rem_euclid(stride) != 0);
        let last = (end - self.origin_frame).div_euclid(stride);
        let lo = first.clamp(0, self.len() as i64) as usize;
        let hi = (last + 1).clamp(0, self.len() as i64) as usize;
        lo..hi.max(lo)
    }

    /// Sub-sequence of rows `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > self.len() {
            return Err(Error::contract(format!(
                "feature slice {range:?} outside 0..{}",
                self.len()
            )));
        }
        Ok(Self {
            features: self.features.slice(s![range.clone(), ..]).to_owned(),
            stride: self.stride,
            origin_frame: self.frame_time(range.start),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRef {
    pub token_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl TokenRef {
    pub fn new(token_id: usize) -> Self {
        Self { token_id, raw: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationSource {
    Mouthing,
    Dictionary,
    Attention,
    Synthetic,
}

impl AnnotationSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationSource::Mouthing => "mouthing",
            AnnotationSource::Dictionary => "dictionary",
            AnnotationSource::Attention => "attention",
            AnnotationSource::Synthetic => "synthetic",
        }
    }
}

impl std::str::FromStr for AnnotationSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mouthing" => Ok(Self::Mouthing),
            "dictionary" => Ok(Self::Dictionary),
            "attention" => Ok(Self::Attention),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::config(format!("unknown annotation source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseAnnotation {
    pub token_id: usize,
    pub frame_time: i64,
    pub confidence: f64,
    pub source: AnnotationSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthSign {
    pub token_id: usize,
    pub onset_frame: i64,
    pub duration_frames: u32,
}

impl GroundTruthSign {
    /// Frame at the temporal centre of the sign.
    pub fn centre_frame(&self) -> i64 {
        self.onset_frame + self.duration_frames as i64 / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubtitledClip {
    pub id: String,
    /// Programme (continuous timeline) this clip was cut from, if known.
    pub programme: Option<String>,
    pub features: FeatureSequence,
    pub subtitle: Vec<TokenRef>,
    /// Closed frame range `[start, end]` of the subtitle.
    pub sub_span: (i64, i64),
    pub annotations: Vec<SparseAnnotation>,
    /// One flag per frame of `sub_span`: whether signing is active.
    pub activity_mask: Option<Vec<bool>>,
    pub truth: Option<Vec<GroundTruthSign>>,
}

impl SubtitledClip {
    pub fn token_ids(&self) -> Vec<usize> {
        self.subtitle.iter().map(|t| t.token_id).collect()
    }

    pub fn max_confidence(&self) -> Option<f64> {
        self.annotations.iter().map(|a| a.confidence).reduce(f64::max)
    }

    /// Encoder index of a frame, if it falls inside the feature window.
    pub fn enc_index(&self, frame: i64) -> Option<usize> {
        let j = self.features.index_of_frame(frame);
        (0..self.features.len() as i64).contains(&j).then_some(j as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let (start, end) = self.sub_span;
        if start >= end {
            return Err(Error::contract(format!("clip {}: empty span [{start}, {end}]", self.id)));
        }
        for a in &self.annotations {
            if !(0.0..=1.0).contains(&a.confidence) {
                return Err(Error::contract(format!(
                    "clip {}: annotation confidence {} outside [0, 1]",
                    self.id, a.confidence
                )));
            }
        }
        if let Some(mask) = &self.activity_mask {
            if mask.len() as i64 != end - start + 1 {
                return Err(Error::contract(format!(
                    "clip {}: activity mask has {} frames, span has {}",
                    self.id,
                    mask.len(),
                    end - start + 1
                )));
            }
        }
        Ok(())
    }
}

/// A continuous timeline from which clips are cut.
#[derive(Debug, Clone, PartialEq)]
pub struct Programme {
    pub id: String,
    pub n_frames: i64,
    pub features: FeatureSequence,
    /// One flag per frame: whether signing is active.
    pub activity: Vec<bool>,
}

impl Programme {
    /// Cuts the feature window and activity mask for a closed frame span.
    pub fn cut(&self, span: (i64, i64)) -> Result<(FeatureSequence, Vec<bool>)> {
        let (start, end) = span;
        if start < 0 || end >= self.n_frames || start >= end {
            return Err(Error::contract(format!(
                "span [{start}, {end}] outside programme {} of {} frames",
                self.id, self.n_frames
            )));
        }
        let range = self.features.indices_within(start, end);
        let features = self.features.slice(range)?;
        let mask = self.activity[start as usize..=end as usize].to_vec();
        Ok((features, mask))
    }
}

/// Which token space a corpus's ids refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSpace {
    /// Ids index raw words (sign classes and stop words) of the lexicon.
    Raw,
    /// Ids are vocabulary ids; the lexicon starts with PAD/BOS/EOS.
    Vocabulary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// Id-to-word table shared by subtitles, annotations and truth.
    pub lexicon: Vec<String>,
    pub token_space: TokenSpace,
    pub fps: f64,
    pub programmes: Vec<Programme>,
    pub clips: Vec<SubtitledClip>,
    /// Whether clips carry synthetic ground truth.
    pub synthetic: bool,
}

impl Corpus {
    pub fn empty(lexicon: Vec<String>) -> Self {
        Self {
            lexicon,
            token_space: TokenSpace::Raw,
            fps: DEFAULT_FPS,
            programmes: Vec::new(),
            clips: Vec::new(),
            synthetic: false,
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn word(&self, token_id: usize) -> Option<&str> {
        self.lexicon.get(token_id).map(String::as_str)
    }

    pub fn token_of(&self, word: &str) -> Option<usize> {
        self.lexicon.iter().position(|w| w == word)
    }

    pub fn programme(&self, id: &str) -> Option<&Programme> {
        self.programmes.iter().find(|p| p.id == id)
    }

    pub fn clip(&self, id: &str) -> Option<&SubtitledClip> {
        self.clips.iter().find(|c| c.id == id)
    }

    /// Same header and programmes, different clips.
    pub fn with_clips(&self, clips: Vec<SubtitledClip>) -> Self {
        Self {
            lexicon: self.lexicon.clone(),
            token_space: self.token_space,
            fps: self.fps,
            programmes: self.programmes.clone(),
            clips,
            synthetic: self.synthetic,
        }
    }

    /// Splits by programme: clips of the first `n_programmes` programmes
    /// (in corpus order) versus the rest. Clips without a programme go to
    /// the second part.
    pub fn split_programmes(&self, n_programmes: usize) -> (Corpus, Corpus) {
        let head: Vec<&str> = self.programmes.iter().take(n_programmes).map(|p| p.id.as_str()).collect();
        let in_head = |c: &SubtitledClip| c.programme.as_deref().is_some_and(|p| head.contains(&p));
        let mut a = self.with_clips(self.clips.iter().filter(|c| in_head(c)).cloned().collect());
        let mut b = self.with_clips(self.clips.iter().filter(|c| !in_head(c)).cloned().collect());
        a.programmes.truncate(n_programmes.min(self.programmes.len()));
        b.programmes = self.programmes.iter().skip(n_programmes).cloned().collect();
        (a, b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::contract("fps must be positive"));
        }
        for clip in &self.clips {
            clip.validate()?;
            let ids = clip
                .subtitle
                .iter()
                .map(|t| t.token_id)
                .chain(clip.annotations.iter().map(|a| a.token_id))
                .chain(clip.truth.iter().flatten().map(|s| s.token_id));
            for id in ids {
                if id >= self.lexicon.len() {
                    return Err(Error::contract(format!(
                        "clip {}: token id {id} outside lexicon of {}",
                        clip.id,
                        self.lexicon.len()
                    )));
                }
            }
            if self.synthetic != clip.truth.is_some() {
                return Err(Error::contract(format!(
                    "clip {}: ground truth must be present exactly when the corpus is synthetic",
                    clip.id
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize, stride: u32, origin: i64) -> FeatureSequence {
        FeatureSequence::new(Array2::zeros((n, 2)), stride, origin).unwrap()
    }

    #[test]
    fn frame_times_follow_stride() {
        let f = seq(5, 4, 100);
        assert_eq!(f.frame_time(0), 100);
        assert_eq!(f.frame_time(3), 112);
        assert_eq!(f.index_of_frame(107), 1);
        assert_eq!(f.index_of_frame(99), -1);
    }

    #[test]
    fn indices_within_closed_range() {
        let f = seq(10, 4, 0);
        assert_eq!(f.indices_within(0, 36), 0..10);
        assert_eq!(f.indices_within(1, 8), 1..3);
        assert_eq!(f.indices_within(27, 53), 7..10);
        assert_eq!(f.indices_within(100, 120), 10..10);
    }

    #[test]
    fn rejects_degenerate_sequences() {
        assert!(FeatureSequence::new(Array2::zeros((0, 2)), 4, 0).is_err());
        assert!(FeatureSequence::new(Array2::zeros((2, 2)), 0, 0).is_err());
        let mut bad = Array2::zeros((2, 2));
        bad[[1, 1]] = f32::NAN;
        assert!(FeatureSequence::new(bad, 4, 0).is_err());
    }
}
