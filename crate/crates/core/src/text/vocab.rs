use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{english_stop_words, IdentityStemmer, PorterStemmer, Stemmer};
use crate::corpus::{Corpus, SparseAnnotation, SubtitledClip, TokenRef, TokenSpace};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const N_SPECIAL: usize = 3;

const SPECIAL_NAMES: [&str; N_SPECIAL] = ["<pad>", "<bos>", "<eos>"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabPolicy {
    /// Stems of every annotated token.
    FromAnnotations,
    /// The most frequent fraction of subtitle stems.
    TopFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub stemming: bool,
    pub keep_stop_words: bool,
    pub vocab_policy: VocabPolicy,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            stemming: true,
            keep_stop_words: false,
            vocab_policy: VocabPolicy::FromAnnotations,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if let VocabPolicy::TopFraction(p) = self.vocab_policy {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config(format!("top_fraction {p} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn stemmer(&self) -> Box<dyn Stemmer> {
        if self.stemming {
            Box::new(PorterStemmer)
        } else {
            Box::new(IdentityStemmer)
        }
    }
}

/// Stem/id table. Ids `0..3` are PAD, BOS and EOS; stems follow densely.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    stems: Vec<String>,
    ids: HashMap<String, usize>,
    freq: Vec<u64>,
    stop_words: HashSet<String>,
}

impl Vocabulary {
    /// Builds from stems in id order (ids start at [`N_SPECIAL`]).
    pub fn from_stems(stems: Vec<(String, u64)>, stop_words: HashSet<String>) -> Result<Self> {
        if stems.is_empty() {
            return Err(Error::config("vocabulary is empty"));
        }
        let mut all = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let mut freq = vec![0; N_SPECIAL];
        let mut ids = HashMap::new();
        for (stem, f) in stems {
            if ids.insert(stem.clone(), all.len()).is_some() {
                return Err(Error::config(format!("duplicate stem {stem:?}")));
            }
            all.push(stem);
            freq.push(f);
        }
        Ok(Self {
            stems: all,
            ids,
            freq,
            stop_words,
        })
    }

    /// Number of ids including the three specials.
    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.len() == N_SPECIAL
    }

    /// Number of ordinary stems.
    pub fn n_stems(&self) -> usize {
        self.stems.len() - N_SPECIAL
    }

    pub fn id(&self, stem: &str) -> Option<usize> {
        self.ids.get(stem).copied()
    }

    pub fn stem(&self, id: usize) -> Option<&str> {
        self.stems.get(id).map(String::as_str)
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freq.get(id).copied().unwrap_or(0)
    }

    pub fn stop_words(&self) -> &HashSet<String> {
        &self.stop_words
    }

    pub fn is_stop_word(&self, word: &str) -> bool {
        self.stop_words.contains(word)
    }

    /// Id-to-word table suitable as a corpus lexicon.
    pub fn lexicon(&self) -> Vec<String> {
        self.stems.clone()
    }

    /// Ordinary (non-special) ids.
    pub fn token_ids(&self) -> std::ops::Range<usize> {
        N_SPECIAL..self.stems.len()
    }

    /// Vocabulary id of a raw word under `cfg`, if it survives preprocessing.
    pub fn encode_word(&self, word: &str, cfg: &PreprocessConfig) -> Option<usize> {
        let lower = word.to_lowercase();
        if !cfg.keep_stop_words && self.stop_words.contains(&lower) {
            return None;
        }
        self.id(&cfg.stemmer().stem(&lower))
    }

    /// Writes `stem<TAB>id<TAB>freq` lines.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for id in self.token_ids() {
            writeln!(w, "{}\t{}\t{}", self.stems[id], id, self.freq[id]).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn save_stop_words(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut words: Vec<_> = self.stop_words.iter().collect();
        words.sort();
        let body: String = words.iter().map(|w| format!("{w}\n")).collect();
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, stop_words: HashSet<String>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut stems = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |m: String| Error::parse(path, i + 1, m);
            if fields.len() != 3 {
                return Err(bad(format!("expected stem<TAB>id<TAB>freq, got {} fields", fields.len())));
            }
            let id: usize = fields[1].parse().map_err(|e| bad(format!("id: {e}")))?;
            if id != stems.len() + N_SPECIAL {
                return Err(bad(format!("id {id} is not dense (expected {})", stems.len() + N_SPECIAL)));
            }
            let freq: u64 = fields[2].parse().map_err(|e| bad(format!("freq: {e}")))?;
            stems.push((fields[0].to_string(), freq));
        }
        Self::from_stems(stems, stop_words)
    }
}

pub fn read_stop_words(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

/// Lowercase, stem, drop stop words, drop out-of-vocabulary stems.
pub fn preprocess_subtitle(words: &[&str], vocab: &Vocabulary, cfg: &PreprocessConfig) -> Vec<TokenRef> {
    let stemmer = cfg.stemmer();
    words
        .iter()
        .filter_map(|w| {
            let lower = w.to_lowercase();
            if !cfg.keep_stop_words && vocab.is_stop_word(&lower) {
                return None;
            }
            vocab.id(&stemmer.stem(&lower)).map(|id| TokenRef {
                token_id: id,
                raw: Some(w.to_string()),
            })
        })
        .collect()
}

fn surface<'a>(corpus: &'a Corpus, t: &'a TokenRef) -> &'a str {
    t.raw.as_deref().unwrap_or_else(|| &corpus.lexicon[t.token_id])
}

pub fn build_vocabulary(corpus: &Corpus, cfg: &PreprocessConfig) -> Result<Vocabulary> {
    let stops = english_stop_words().into_iter().map(str::to_string).collect();
    build_vocabulary_with_stop_words(corpus, cfg, stops)
}

pub fn build_vocabulary_with_stop_words(
    corpus: &Corpus,
    cfg: &PreprocessConfig,
    stop_words: HashSet<String>,
) -> Result<Vocabulary> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::config("cannot build a vocabulary from an empty corpus"));
    }
    if corpus.token_space != TokenSpace::Raw {
        return Err(Error::config("vocabulary must be built from a raw-token corpus"));
    }
    let stop_words = if cfg.keep_stop_words { HashSet::new() } else { stop_words };
    let stemmer = cfg.stemmer();
    let normalise = |w: &str| -> Option<String> {
        let lower = w.to_lowercase();
        (!stop_words.contains(&lower)).then(|| stemmer.stem(&lower))
    };

    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for clip in &corpus.clips {
        for t in &clip.subtitle {
            if let Some(s) = normalise(surface(corpus, t)) {
                *freq.entry(s).or_default() += 1;
            }
        }
    }
    let selected: Vec<String> = match cfg.vocab_policy {
        VocabPolicy::FromAnnotations => {
            let mut set = std::collections::BTreeSet::new();
            for a in corpus.clips.iter().flat_map(|c| &c.annotations) {
                if let Some(s) = normalise(&corpus.lexicon[a.token_id]) {
                    set.insert(s);
                }
            }
            set.into_iter().collect()
        }
        VocabPolicy::TopFraction(p) => {
            let mut ranked: Vec<(&String, &u64)> = freq.iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
            let keep = ((p * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len().max(1));
            ranked.into_iter().take(keep).map(|(s, _)| s.clone()).collect()
        }
    };
    let mut stems: Vec<(String, u64)> = selected
        .into_iter()
        .map(|s| {
            let f = freq.get(&s).copied().unwrap_or(0);
            (s, f)
        })
        .collect();
    stems.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_stems(stems, stop_words)
}

/// Rewrites a raw corpus into vocabulary ids. Subtitle words, annotations
/// and truth signs whose words do not survive preprocessing are dropped.
pub fn encode_corpus(corpus: &Corpus, vocab: &Vocabulary, cfg: &PreprocessConfig) -> Result<Corpus> {
    if corpus.token_space != TokenSpace::Raw {
        return Err(Error::config("corpus is already vocabulary-encoded"));
    }
    let word_id = |id: usize| vocab.encode_word(&corpus.lexicon[id], cfg);
    let clips = corpus
        .clips
        .iter()
        .map(|clip| {
            let words: Vec<&str> = clip.subtitle.iter().map(|t| surface(corpus, t)).collect();
            let subtitle = preprocess_subtitle(&words, vocab, cfg);
            let annotations = clip
                .annotations
                .iter()
                .filter_map(|a| {
                    word_id(a.token_id).map(|id| SparseAnnotation {
                        token_id: id,
                        ..a.clone()
                    })
                })
                .collect();
            let truth = clip.truth.as_ref().map(|signs| {
                signs
                    .iter()
                    .filter_map(|s| {
                        word_id(s.token_id).map(|id| crate::corpus::GroundTruthSign {
                            token_id: id,
                            ..s.clone()
                        })
                    })
                    .collect()
            });
            SubtitledClip {
                subtitle,
                annotations,
                truth,
                ..clip.clone()
            }
        })
        .collect();
    Ok(Corpus {
        lexicon: vocab.lexicon(),
        token_space: TokenSpace::Vocabulary,
        fps: corpus.fps,
        programmes: corpus.programmes.clone(),
        clips,
        synthetic: corpus.synthetic,
    })
}
