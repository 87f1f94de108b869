use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spotting::{spot_from_decode, spot_teacher_forced, spot_tf_predictions, MiningStrategy, RefPool, Spotting};
use crate::corpus::{write_annotation_csv, AnnotationRow, AnnotationSource, Corpus, SubtitledClip};
use crate::decode::{beam_decode, greedy_decode, teacher_forced_decode, AttnAggregation, ClipScorer, SequenceScorer};
use crate::error::{Error, Result};
use crate::model::Transformer;

/// Mining yield in the layout of the usual annotation-yield table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct YieldStats {
    /// Clips that had no annotation before and received at least one spotting.
    pub subtitles_newly_annotated: usize,
    /// All spottings.
    pub ann_full_vocab: usize,
    /// Spottings whose token is in the evaluation sub-vocabulary.
    pub ann_eval_vocab: usize,
}

impl YieldStats {
    pub fn merge(self, other: Self) -> Self {
        Self {
            subtitles_newly_annotated: self.subtitles_newly_annotated + other.subtitles_newly_annotated,
            ann_full_vocab: self.ann_full_vocab + other.ann_full_vocab,
            ann_eval_vocab: self.ann_eval_vocab + other.ann_eval_vocab,
        }
    }

    fn for_clip(clip: &SubtitledClip, spots: &[Spotting], eval_vocab: Option<&HashSet<usize>>) -> Self {
        Self {
            subtitles_newly_annotated: (clip.annotations.is_empty() && !spots.is_empty()) as usize,
            ann_full_vocab: spots.len(),
            ann_eval_vocab: spots
                .iter()
                .filter(|s| eval_vocab.is_none_or(|v| v.contains(&s.token_id)))
                .count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningOutput {
    /// Spottings in corpus clip order.
    pub spottings: Vec<Spotting>,
    pub stats: YieldStats,
    /// Clips the scorer could not handle (e.g. longer than the encoder limit).
    pub skipped_clips: usize,
}

fn recall_against(tokens: &[usize], reference: &[usize]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let mut pool = RefPool::new(reference);
    tokens.iter().filter(|&&t| pool.take(t)).count() as f64 / reference.len() as f64
}

/// Applies one mining strategy to a single clip.
pub fn mine_clip(
    scorer: &dyn SequenceScorer,
    clip: &SubtitledClip,
    strategy: MiningStrategy,
    agg: AttnAggregation,
) -> Result<Vec<Spotting>> {
    let reference = clip.token_ids();
    match strategy {
        MiningStrategy::GdFiltered | MiningStrategy::GdUnfiltered => {
            let r = greedy_decode(scorer)?;
            let filter = strategy == MiningStrategy::GdFiltered;
            spot_from_decode(clip, &r, &reference, agg, filter, strategy)
        }
        MiningStrategy::BsAll { width } => {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for r in beam_decode(scorer, width)? {
                for s in spot_from_decode(clip, &r, &reference, agg, true, strategy)? {
                    if seen.insert((s.token_id, s.enc_index)) {
                        out.push(s);
                    }
                }
            }
            Ok(out)
        }
        MiningStrategy::BsBestRecall { width } => {
            let beams = beam_decode(scorer, width)?;
            let mut best = 0;
            let mut best_recall = f64::NEG_INFINITY;
            for (i, r) in beams.iter().enumerate() {
                let recall = recall_against(r.tokens(), &reference);
                if recall > best_recall {
                    best = i;
                    best_recall = recall;
                }
            }
            spot_from_decode(clip, &beams[best], &reference, agg, true, strategy)
        }
        MiningStrategy::TfThreshold { tau } => {
            if reference.is_empty() {
                return Ok(Vec::new());
            }
            let r = teacher_forced_decode(scorer, &reference)?;
            spot_teacher_forced(clip, &r, tau, agg, strategy)
        }
        MiningStrategy::TfPrediction => {
            if reference.is_empty() {
                return Ok(Vec::new());
            }
            let r = teacher_forced_decode(scorer, &reference)?;
            spot_tf_predictions(clip, &r, agg, strategy)
        }
    }
}

/// Mines every clip with a scorer built by `make_scorer`; `Ok(None)` from
/// the factory skips the clip.
pub fn mine_corpus_with<S, F>(
    corpus: &Corpus,
    strategy: MiningStrategy,
    agg: AttnAggregation,
    eval_vocab: Option<&HashSet<usize>>,
    make_scorer: F,
) -> Result<MiningOutput>
where
    S: SequenceScorer,
    F: Fn(&SubtitledClip) -> Result<Option<S>> + Sync,
{
    strategy.validate()?;
    let per_clip: Vec<Result<Option<Vec<Spotting>>>> = corpus
        .clips
        .par_iter()
        .map(|clip| match make_scorer(clip)? {
            Some(scorer) => mine_clip(&scorer, clip, strategy, agg).map(Some),
            None => Ok(None),
        })
        .collect();
    let mut out = MiningOutput {
        spottings: Vec::new(),
        stats: YieldStats::default(),
        skipped_clips: 0,
    };
    for (clip, r) in corpus.clips.iter().zip(per_clip) {
        match r? {
            Some(spots) => {
                out.stats = out.stats.merge(YieldStats::for_clip(clip, &spots, eval_vocab));
                out.spottings.extend(spots);
            }
            None => out.skipped_clips += 1,
        }
    }
    if out.skipped_clips > 0 {
        warn!("{} clips skipped during mining", out.skipped_clips);
    }
    Ok(out)
}

/// Mines `corpus` with a frozen model. Clips longer than the encoder limit
/// are skipped.
pub fn mine_corpus(
    model: &Transformer,
    corpus: &Corpus,
    strategy: MiningStrategy,
    agg: AttnAggregation,
    eval_vocab: Option<&HashSet<usize>>,
) -> Result<MiningOutput> {
    if let AttnAggregation::Layer(k) = agg {
        if k >= model.config().n_layers {
            return Err(Error::config(format!("layer {k} >= n_layers {}", model.config().n_layers)));
        }
    }
    let max_len = model.config().max_enc_len;
    mine_corpus_with(corpus, strategy, agg, eval_vocab, |clip| {
        if clip.features.len() > max_len {
            return Ok(None);
        }
        ClipScorer::for_clip(model, clip).map(Some)
    })
}

/// Collapses duplicate `(clip, token, frame)` spottings keeping the highest
/// confidence, sorted by `(clip_id, frame_time, token)`.
pub fn spottings_to_rows(store: &[Spotting]) -> Vec<AnnotationRow> {
    let mut best: BTreeMap<(String, i64, usize), f64> = BTreeMap::new();
    for s in store {
        let e = best
            .entry((s.clip_id.clone(), s.frame_time, s.token_id))
            .or_insert(f64::NEG_INFINITY);
        *e = e.max(s.confidence);
    }
    best.into_iter()
        .map(|((clip_id, frame_time, token_id), confidence)| AnnotationRow {
            clip_id,
            token_id,
            frame_time,
            confidence,
            source: AnnotationSource::Attention,
        })
        .collect()
}

pub fn write_annotation_store(store: &[Spotting], lexicon: &[String], path: impl AsRef<Path>) -> Result<()> {
    write_annotation_csv(&spottings_to_rows(store), lexicon, path)
}

pub fn write_yield_stats(stats: &YieldStats, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = serde_json::to_string_pretty(stats)?;
    std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{read_annotation_csv, FeatureSequence, SparseAnnotation, TokenRef};
    use crate::decode::TableScorer;
    use crate::text::BOS;
    use ndarray::Array2;
    use std::collections::HashMap;

    fn clip(id: &str, reference: &[usize], annotated: bool) -> SubtitledClip {
        SubtitledClip {
            id: id.into(),
            programme: None,
            features: FeatureSequence::new(Array2::zeros((4, 2)), 4, 0).unwrap(),
            subtitle: reference.iter().map(|&t| TokenRef::new(t)).collect(),
            sub_span: (0, 15),
            annotations: if annotated {
                vec![SparseAnnotation {
                    token_id: reference[0],
                    frame_time: 0,
                    confidence: 1.0,
                    source: AnnotationSource::Mouthing,
                }]
            } else {
                vec![]
            },
            activity_mask: None,
            truth: None,
        }
    }

    /// Clip-independent toy: greedy path is [3, 4, EOS]; attention peaks at
    /// `(last prefix token + step) % 4`.
    fn toy() -> TableScorer {
        let ninf = f64::NEG_INFINITY;
        let mut table = HashMap::new();
        table.insert(vec![BOS], vec![ninf, ninf, 0.05f64.ln(), 0.6f64.ln(), 0.35f64.ln()]);
        table.insert(vec![BOS, 3], vec![ninf, ninf, 0.2f64.ln(), 0.1f64.ln(), 0.7f64.ln()]);
        table.insert(vec![BOS, 3, 4], vec![ninf, ninf, 0.9f64.ln(), 0.05f64.ln(), 0.05f64.ln()]);
        TableScorer {
            vocab: 5,
            steps: 4,
            enc_len: 4,
            table,
        }
    }

    fn corpus() -> Corpus {
        let mut c = Corpus::empty((0..5).map(|i| format!("w{i}")).collect());
        c.token_space = crate::corpus::TokenSpace::Vocabulary;
        c.clips = vec![clip("a", &[3, 4], true), clip("b", &[4], false), clip("c", &[3, 3], false)];
        c
    }

    #[test]
    fn toy_corpus_matches_hand_enumeration() {
        let c = corpus();
        let out = mine_corpus_with(&c, MiningStrategy::GdFiltered, AttnAggregation::MeanAll, None, |_| Ok(Some(toy())))
            .unwrap();
        // Greedy hypothesis [3, 4, EOS] everywhere. Step 0 (prefix BOS=1) peaks
        // at (1 + 0) % 4 = 1; step 1 (prefix token 3) at (3 + 1) % 4 = 0.
        let got: Vec<_> = out.spottings.iter().map(|s| (s.clip_id.as_str(), s.token_id, s.enc_index)).collect();
        assert_eq!(got, vec![("a", 3, 1), ("a", 4, 0), ("b", 4, 0), ("c", 3, 1)]);
        assert_eq!(
            out.stats,
            YieldStats {
                subtitles_newly_annotated: 2,
                ann_full_vocab: 4,
                ann_eval_vocab: 4
            }
        );
        let eval: HashSet<usize> = [4].into();
        let restricted =
            mine_corpus_with(&c, MiningStrategy::GdFiltered, AttnAggregation::MeanAll, Some(&eval), |_| Ok(Some(toy())))
                .unwrap();
        assert_eq!(restricted.stats.ann_eval_vocab, 2);

        let unf = mine_corpus_with(&c, MiningStrategy::GdUnfiltered, AttnAggregation::MeanAll, None, |_| Ok(Some(toy())))
            .unwrap();
        assert_eq!(unf.spottings.len(), 6);
    }

    #[test]
    fn teacher_forcing_thresholds_nest() {
        let c = corpus();
        let run = |tau| {
            let s = MiningStrategy::TfThreshold { tau };
            mine_corpus_with(&c, s, AttnAggregation::Layer(0), None, |_| Ok(Some(toy())))
                .unwrap()
                .spottings
        };
        // Toy rows peak at 0.9, so every reference step is kept below 0.9.
        assert_eq!(run(0.05).len(), 5);
        assert_eq!(run(0.95).len(), 0);
    }

    #[test]
    fn beam_strategies_dedupe_and_pick_best_recall() {
        let c = corpus();
        let all = mine_corpus_with(&c, MiningStrategy::BsAll { width: 3 }, AttnAggregation::MeanAll, None, |_| {
            Ok(Some(toy()))
        })
        .unwrap();
        let mut pairs: Vec<_> = all.spottings.iter().map(|s| (s.clip_id.clone(), s.token_id, s.enc_index)).collect();
        let n = pairs.len();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), n);
        let best = mine_corpus_with(&c, MiningStrategy::BsBestRecall { width: 3 }, AttnAggregation::MeanAll, None, |_| {
            Ok(Some(toy()))
        })
        .unwrap();
        assert!(best.spottings.len() <= all.spottings.len());
    }

    #[test]
    fn store_dedupes_and_sorts() {
        let s = |clip: &str, token, frame, conf| Spotting {
            clip_id: clip.into(),
            token_id: token,
            enc_index: 0,
            frame_time: frame,
            confidence: conf,
            strategy: MiningStrategy::GdFiltered,
        };
        let store = vec![s("b", 3, 8, 0.5), s("a", 4, 4, 0.2), s("a", 3, 4, 0.3), s("a", 4, 4, 0.6)];
        let rows = spottings_to_rows(&store);
        let keys: Vec<_> = rows.iter().map(|r| (r.clip_id.as_str(), r.frame_time, r.token_id, r.confidence)).collect();
        assert_eq!(keys, vec![("a", 4, 3, 0.3), ("a", 4, 4, 0.6), ("b", 8, 3, 0.5)]);

        let dir = tempfile::tempdir().unwrap();
        let lexicon: Vec<String> = (0..5).map(|i| format!("w{i}")).collect();
        let p = dir.path().join("s.csv");
        write_annotation_store(&store, &lexicon, &p).unwrap();
        assert_eq!(read_annotation_csv(&lexicon, &p).unwrap(), rows);
        write_annotation_store(&[], &lexicon, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 1);
    }
}
