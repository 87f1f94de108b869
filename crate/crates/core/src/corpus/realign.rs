//! Subtitle re-alignment on a programme timeline.
//!
//! `ShiftAffine` moves each annotated subtitle so that its temporal midpoint
//! sits on the mean time of its annotations, then stretches the unannotated
//! subtitles lying between two annotated ones over the gap separating them.
//! Gap space is shared proportionally to the original layout. Stretched
//! spans are trimmed to a single run of active signing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Corpus, SubtitledClip};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealignMode {
    #[default]
    None,
    ShiftAffine,
    /// Widen every span by this many seconds on each side.
    PadSeconds(f64),
}

/// A clip whose span could not be realigned cleanly.
#[derive(Debug, Clone, PartialEq)]
pub enum RealignIssue {
    /// The shifted span ran into the previous span; its start was clamped.
    Overlap { clip_id: String, requested: (i64, i64) },
    /// No active signing within reach; the clip was dropped.
    NoActiveFrames { clip_id: String },
    /// No room left between neighbours; the clip was dropped.
    NoRoom { clip_id: String },
}

#[derive(Debug, Clone)]
pub struct RealignOutcome {
    pub corpus: Corpus,
    pub issues: Vec<RealignIssue>,
}

pub fn realign_subtitles(corpus: &Corpus, mode: RealignMode) -> Result<RealignOutcome> {
    match mode {
        RealignMode::None => Ok(RealignOutcome {
            corpus: corpus.clone(),
            issues: Vec::new(),
        }),
        RealignMode::PadSeconds(seconds) => pad(corpus, seconds),
        RealignMode::ShiftAffine => shift_affine(corpus),
    }
}

fn programme_of<'a>(corpus: &'a Corpus, clip: &SubtitledClip) -> Result<&'a super::Programme> {
    let pid = clip
        .programme
        .as_deref()
        .ok_or_else(|| Error::config(format!("clip {} has no programme timeline", clip.id)))?;
    corpus
        .programme(pid)
        .ok_or_else(|| Error::config(format!("clip {}: programme {pid} not in corpus", clip.id)))
}

/// Re-cuts a clip at `span`, keeping only annotations inside the new span.
fn recut(corpus: &Corpus, clip: &SubtitledClip, span: (i64, i64)) -> Result<SubtitledClip> {
    let programme = programme_of(corpus, clip)?;
    let (features, mask) = programme.cut(span)?;
    let mut out = clip.clone();
    out.features = features;
    out.activity_mask = Some(mask);
    out.sub_span = span;
    out.annotations.retain(|a| (span.0..=span.1).contains(&a.frame_time));
    Ok(out)
}

fn pad(corpus: &Corpus, seconds: f64) -> Result<RealignOutcome> {
    if !(seconds >= 0.0 && seconds.is_finite()) {
        return Err(Error::config(format!("padding of {seconds} s is not a non-negative duration")));
    }
    let frames = (seconds * corpus.fps).round() as i64;
    let clips = corpus
        .clips
        .iter()
        .map(|clip| {
            let programme = programme_of(corpus, clip)?;
            let span = (
                (clip.sub_span.0 - frames).max(0),
                (clip.sub_span.1 + frames).min(programme.n_frames - 1),
            );
            recut(corpus, clip, span)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RealignOutcome {
        corpus: corpus.with_clips(clips),
        issues: Vec::new(),
    })
}

/// Span shifted so its midpoint equals the mean annotation time.
pub(crate) fn midpoint_shift(span: (i64, i64), annotation_frames: &[i64]) -> (i64, i64) {
    let mean = annotation_frames.iter().sum::<i64>() as f64 / annotation_frames.len() as f64;
    let mid = (span.0 + span.1) as f64 / 2.0;
    let delta = (mean - mid).round() as i64;
    (span.0 + delta, span.1 + delta)
}

/// Longest run of active frames inside `[lo, hi]`; earliest on ties.
fn longest_active_run(activity: &[bool], lo: i64, hi: i64) -> Option<(i64, i64)> {
    let mut best: Option<(i64, i64)> = None;
    let mut run_start = None;
    for f in lo..=hi + 1 {
        let active = f <= hi && activity.get(f as usize).copied().unwrap_or(false);
        match (active, run_start) {
            (true, None) => run_start = Some(f),
            (false, Some(s)) => {
                if best.is_none_or(|(a, b)| f - 1 - s > b - a) {
                    best = Some((s, f - 1));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    best.filter(|(a, b)| b > a)
}

fn shift_affine(corpus: &Corpus) -> Result<RealignOutcome> {
    for clip in &corpus.clips {
        programme_of(corpus, clip)?;
    }
    let mut by_programme: BTreeMap<&str, Vec<&SubtitledClip>> = BTreeMap::new();
    for clip in &corpus.clips {
        by_programme.entry(clip.programme.as_deref().unwrap()).or_default().push(clip);
    }

    let mut new_spans: BTreeMap<String, (i64, i64)> = BTreeMap::new();
    let mut issues = Vec::new();
    for (pid, mut clips) in by_programme {
        let programme = corpus.programme(pid).unwrap();
        clips.sort_by_key(|c| (c.sub_span, c.id.clone()));
        let last_frame = programme.n_frames - 1;
        let anchor = |c: &SubtitledClip| {
            let frames: Vec<i64> = c.annotations.iter().map(|a| a.frame_time).collect();
            (!frames.is_empty()).then(|| midpoint_shift(c.sub_span, &frames))
        };

        let mut cursor = 0i64; // first frame not yet claimed
        let mut i = 0;
        while i < clips.len() {
            if let Some(span) = anchor(clips[i]) {
                let mut span = (span.0.max(0), span.1.min(last_frame));
                if span.0 < cursor {
                    issues.push(RealignIssue::Overlap {
                        clip_id: clips[i].id.clone(),
                        requested: span,
                    });
                    span.0 = cursor;
                }
                if span.0 >= span.1 {
                    issues.push(RealignIssue::NoRoom {
                        clip_id: clips[i].id.clone(),
                    });
                } else {
                    new_spans.insert(clips[i].id.clone(), span);
                    cursor = span.1 + 1;
                }
                i += 1;
                continue;
            }

            // Maximal run of unannotated clips.
            let j = (i..clips.len()).find(|&j| anchor(clips[j]).is_some()).unwrap_or(clips.len());
            let group = &clips[i..j];
            let g0 = group.first().unwrap().sub_span.0;
            let g1 = group.iter().map(|c| c.sub_span.1).max().unwrap();
            let next_start = clips.get(j).and_then(|c| anchor(c)).map(|s| s.0.max(0));
            let between = i > 0 && next_start.is_some();
            let (r0, r1) = if between {
                (cursor, next_start.unwrap() - 1)
            } else {
                (g0.max(cursor), next_start.map_or(g1, |n| g1.min(n - 1)).min(last_frame))
            };
            let scale = if g1 > g0 { (r1 - r0) as f64 / (g1 - g0) as f64 } else { 1.0 };
            let map = |x: i64| r0 + ((x - g0) as f64 * scale).round() as i64;
            let mut prev_end = cursor - 1;
            for clip in group {
                if r1 <= r0 {
                    issues.push(RealignIssue::NoRoom {
                        clip_id: clip.id.clone(),
                    });
                    continue;
                }
                let lo = map(clip.sub_span.0).max(prev_end + 1).max(r0);
                let hi = map(clip.sub_span.1).min(r1);
                let run = (lo < hi)
                    .then(|| longest_active_run(&programme.activity, lo, hi))
                    .flatten()
                    .or_else(|| {
                        let lo = clip.sub_span.0.max(prev_end + 1).max(r0);
                        let hi = clip.sub_span.1.min(r1);
                        (lo < hi).then(|| longest_active_run(&programme.activity, lo, hi)).flatten()
                    });
                match run {
                    Some(span) => {
                        new_spans.insert(clip.id.clone(), span);
                        prev_end = span.1;
                    }
                    None => issues.push(RealignIssue::NoActiveFrames {
                        clip_id: clip.id.clone(),
                    }),
                }
            }
            cursor = cursor.max(prev_end + 1);
            i = j;
        }
    }

    let clips = corpus
        .clips
        .iter()
        .filter_map(|clip| new_spans.get(&clip.id).map(|&span| recut(corpus, clip, span)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RealignOutcome {
        corpus: corpus.with_clips(clips),
        issues,
    })
}
