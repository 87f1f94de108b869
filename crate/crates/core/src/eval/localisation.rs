use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationRow, Corpus, SubtitledClip};
use crate::error::{Error, Result};
use crate::spot::Spotting;

/// A token instance at an encoder position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedToken {
    pub token_id: usize,
    pub enc_index: i64,
}

/// Everything needed to score one clip.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClipLocInput {
    pub clip_id: String,
    pub reference: Vec<usize>,
    pub predictions: Vec<TimedToken>,
    /// Timed instances (annotations or ground truth) to localise against.
    pub timed: Vec<TimedToken>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClipLocScore {
    pub recall: f64,
    pub precision: f64,
    pub correct: usize,
    /// Correct predictions that had a timed instance to compare against.
    pub scored: usize,
    pub localised: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocReport {
    /// Mean per-clip recall.
    pub recall: f64,
    /// Mean per-clip precision (0 for clips without predictions).
    pub precision: f64,
    /// Mean per-clip localisation accuracy over clips with at least one
    /// scored token; `None` when no clip has one.
    pub loc_acc: Option<f64>,
    /// Clips with a non-empty reference.
    pub n_sequences: usize,
    pub n_scored_tokens: usize,
    /// Clips contributing to `loc_acc`.
    pub n_loc_sequences: usize,
}

fn score_clip(c: &ClipLocInput, tolerance: i64) -> ClipLocScore {
    let mut pool = c.reference.clone();
    let mut used = vec![false; c.timed.len()];
    let (mut correct, mut scored, mut localised) = (0, 0, 0);
    for p in &c.predictions {
        let Some(i) = pool.iter().position(|&t| t == p.token_id) else {
            continue;
        };
        pool.swap_remove(i);
        correct += 1;
        let nearest = c
            .timed
            .iter()
            .enumerate()
            .filter(|(j, t)| !used[*j] && t.token_id == p.token_id)
            .min_by_key(|(j, t)| ((t.enc_index - p.enc_index).abs(), *j));
        if let Some((j, t)) = nearest {
            used[j] = true;
            scored += 1;
            localised += ((t.enc_index - p.enc_index).abs() <= tolerance) as usize;
        }
    }
    ClipLocScore {
        recall: correct as f64 / c.reference.len() as f64,
        precision: if c.predictions.is_empty() {
            0.0
        } else {
            correct as f64 / c.predictions.len() as f64
        },
        correct,
        scored,
        localised,
    }
}

/// Recall, precision and localisation accuracy averaged over clips.
///
/// Predictions are matched to reference tokens as a multiset. Each correct
/// prediction is paired with the nearest unused timed instance of the same
/// token and counts as localised when within `tolerance` encoder steps.
/// Clips with an empty reference are ignored.
pub fn eval_localisation(clips: &[ClipLocInput], tolerance: i64) -> Result<(LocReport, Vec<ClipLocScore>)> {
    if tolerance < 0 {
        return Err(Error::config(format!("tolerance {tolerance} must be non-negative")));
    }
    let scores: Vec<ClipLocScore> = clips
        .iter()
        .filter(|c| !c.reference.is_empty())
        .map(|c| score_clip(c, tolerance))
        .collect();
    let n = scores.len();
    let mean = |f: &dyn Fn(&ClipLocScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            scores.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let loc: Vec<f64> = scores
        .iter()
        .filter(|s| s.scored > 0)
        .map(|s| s.localised as f64 / s.scored as f64)
        .collect();
    let report = LocReport {
        recall: mean(&|s| s.recall),
        precision: mean(&|s| s.precision),
        loc_acc: (!loc.is_empty()).then(|| loc.iter().sum::<f64>() / loc.len() as f64),
        n_sequences: n,
        n_scored_tokens: scores.iter().map(|s| s.scored).sum(),
        n_loc_sequences: loc.len(),
    };
    Ok((report, scores))
}

/// Which timed instances serve as localisation targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingSource {
    /// Synthetic ground truth at the sign centre.
    Truth,
    /// Clip annotations with confidence strictly above the threshold.
    Annotations { min_conf: f64 },
}

/// Assembles per-clip inputs from a corpus and mined spottings. Clips
/// without spottings get an empty prediction list.
pub fn loc_inputs_from_spottings(corpus: &Corpus, spottings: &[Spotting], timing: TimingSource) -> Result<Vec<ClipLocInput>> {
    let mut by_clip: HashMap<&str, Vec<TimedToken>> = HashMap::new();
    for s in spottings {
        by_clip.entry(s.clip_id.as_str()).or_default().push(TimedToken {
            token_id: s.token_id,
            enc_index: s.enc_index as i64,
        });
    }
    assemble(corpus, by_clip, timing)
}

/// As [`loc_inputs_from_spottings`], for annotation-store rows whose frame
/// times are mapped back to encoder positions.
pub fn loc_inputs_from_rows(corpus: &Corpus, rows: &[AnnotationRow], timing: TimingSource) -> Result<Vec<ClipLocInput>> {
    let clips: HashMap<&str, &SubtitledClip> = corpus.clips.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut by_clip: HashMap<&str, Vec<TimedToken>> = HashMap::new();
    for r in rows {
        let clip = clips
            .get(r.clip_id.as_str())
            .ok_or_else(|| Error::config(format!("store row names unknown clip {}", r.clip_id)))?;
        by_clip.entry(clip.id.as_str()).or_default().push(TimedToken {
            token_id: r.token_id,
            enc_index: clip.features.index_of_frame(r.frame_time),
        });
    }
    assemble(corpus, by_clip, timing)
}

fn assemble(corpus: &Corpus, mut by_clip: HashMap<&str, Vec<TimedToken>>, timing: TimingSource) -> Result<Vec<ClipLocInput>> {
    corpus
        .clips
        .iter()
        .map(|clip| {
            let to_enc = |frame: i64| clip.features.index_of_frame(frame);
            let timed = match timing {
                TimingSource::Truth => clip
                    .truth
                    .as_ref()
                    .ok_or_else(|| Error::config(format!("clip {} has no ground truth", clip.id)))?
                    .iter()
                    .map(|t| TimedToken {
                        token_id: t.token_id,
                        enc_index: to_enc(t.centre_frame()),
                    })
                    .collect(),
                TimingSource::Annotations { min_conf } => clip
                    .annotations
                    .iter()
                    .filter(|a| a.confidence > min_conf)
                    .map(|a| TimedToken {
                        token_id: a.token_id,
                        enc_index: to_enc(a.frame_time),
                    })
                    .collect(),
            };
            Ok(ClipLocInput {
                clip_id: clip.id.clone(),
                reference: clip.token_ids(),
                predictions: by_clip.remove(clip.id.as_str()).unwrap_or_default(),
                timed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tt(token_id: usize, enc_index: i64) -> TimedToken {
        TimedToken { token_id, enc_index }
    }

    fn input(reference: &[usize], predictions: &[TimedToken], timed: &[TimedToken]) -> ClipLocInput {
        ClipLocInput {
            clip_id: "c".into(),
            reference: reference.to_vec(),
            predictions: predictions.to_vec(),
            timed: timed.to_vec(),
        }
    }

    #[test]
    fn within_two_feature_frames_is_correct() {
        let c = input(&[7], &[tt(7, 10)], &[tt(7, 12)]);
        let (r, _) = eval_localisation(&[c.clone()], 2).unwrap();
        assert_eq!(r.loc_acc, Some(1.0));
        let (r, _) = eval_localisation(&[c], 1).unwrap();
        assert_eq!(r.loc_acc, Some(0.0));
    }

    #[test]
    fn hand_counted_recall_and_precision() {
        let (a, b, c, d, e) = (3, 4, 5, 6, 7);
        let clip = input(&[a, b, c, d], &[tt(a, 0), tt(e, 1), tt(b, 2)], &[]);
        let (r, per) = eval_localisation(&[clip], 2).unwrap();
        assert_eq!(r.recall, 0.5);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.loc_acc, None);
        assert_eq!(per[0].correct, 2);
    }

    #[test]
    fn empty_predictions_everywhere() {
        let clips = vec![input(&[3, 4], &[], &[tt(3, 1)]), input(&[5], &[], &[tt(5, 0)])];
        let (r, _) = eval_localisation(&clips, 2).unwrap();
        assert_eq!((r.recall, r.precision, r.loc_acc), (0.0, 0.0, None));
        assert_eq!(r.n_sequences, 2);
    }

    #[test]
    fn averages_are_over_sequences() {
        // Clip 1: 1/1 localised; clip 2: 0/2 localised. Mean 0.5, pooled 1/3.
        let clips = vec![
            input(&[3], &[tt(3, 5)], &[tt(3, 5)]),
            input(&[3, 4], &[tt(3, 0), tt(4, 0)], &[tt(3, 9), tt(4, 9)]),
        ];
        let (r, _) = eval_localisation(&clips, 2).unwrap();
        assert_eq!(r.loc_acc, Some(0.5));
        assert_eq!(r.n_scored_tokens, 3);
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn duplicate_tokens_pair_with_nearest_instances() {
        let clip = input(&[3, 3], &[tt(3, 10), tt(3, 1)], &[tt(3, 0), tt(3, 11)]);
        let (r, _) = eval_localisation(&[clip], 1).unwrap();
        assert_eq!(r.loc_acc, Some(1.0));
    }

    #[test]
    fn negative_tolerance_is_rejected() {
        assert!(matches!(eval_localisation(&[], -1), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_shift_leaves_metrics_unchanged() {
        let base = vec![
            input(&[3, 4, 5], &[tt(3, 2), tt(4, 9), tt(6, 1)], &[tt(3, 3), tt(4, 5), tt(5, 7)]),
            input(&[4], &[tt(4, 20)], &[tt(4, 21)]),
        ];
        let shifted: Vec<_> = base
            .iter()
            .map(|c| ClipLocInput {
                predictions: c.predictions.iter().map(|t| tt(t.token_id, t.enc_index + 17)).collect(),
                timed: c.timed.iter().map(|t| tt(t.token_id, t.enc_index + 17)).collect(),
                ..c.clone()
            })
            .collect();
        assert_eq!(eval_localisation(&base, 2).unwrap().0, eval_localisation(&shifted, 2).unwrap().0);
    }
}
