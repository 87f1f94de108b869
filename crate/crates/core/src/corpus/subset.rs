use log::warn;

use super::{Corpus, SubtitledClip};
use crate::error::{Error, Result};

/// Keeps clips carrying at least one annotation with confidence strictly
/// above `min_conf`.
pub fn select_training_subset(corpus: &Corpus, min_conf: f64) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&min_conf) {
        return Err(Error::config(format!("min_conf {min_conf} outside [0, 1]")));
    }
    let clips: Vec<SubtitledClip> = corpus
        .clips
        .iter()
        .filter(|c| c.annotations.iter().any(|a| a.confidence > min_conf))
        .cloned()
        .collect();
    if clips.is_empty() {
        warn!(
            "no clip has an annotation above confidence {min_conf}; subset of {} clips is empty",
            corpus.len()
        );
    }
    Ok(corpus.with_clips(clips))
}

/// Trims a clip to the window around its first `k` annotations (in time
/// order), widened by `margin_frames` on both sides. Returns `None` when the
/// clip has fewer than `k` annotations.
pub fn trim_to_annotations(clip: &SubtitledClip, k: usize, margin_frames: u32) -> Option<SubtitledClip> {
    trim_to_annotations_from(clip, k, margin_frames, 0)
}

/// As [`trim_to_annotations`], using the `k` consecutive annotations starting
/// at time-ordered position `first` (wrapped into range).
pub fn trim_to_annotations_from(
    clip: &SubtitledClip,
    k: usize,
    margin_frames: u32,
    first: usize,
) -> Option<SubtitledClip> {
    if k == 0 || clip.annotations.len() < k {
        return None;
    }
    let mut order: Vec<usize> = (0..clip.annotations.len()).collect();
    order.sort_by_key(|&i| (clip.annotations[i].frame_time, i));
    let start_pos = first % (order.len() - k + 1);
    let chosen: Vec<_> = order[start_pos..start_pos + k]
        .iter()
        .map(|&i| clip.annotations[i].clone())
        .collect();

    let margin = margin_frames as i64;
    let lo = chosen.iter().map(|a| a.frame_time).min().unwrap() - margin;
    let hi = chosen.iter().map(|a| a.frame_time).max().unwrap() + margin;
    let window = (lo.max(clip.sub_span.0), hi.min(clip.sub_span.1));
    if window.0 >= window.1 {
        return None;
    }
    let range = clip.features.indices_within(window.0, window.1);
    let features = clip.features.slice(range).ok()?;

    let mut wanted: Vec<usize> = chosen.iter().map(|a| a.token_id).collect();
    let subtitle = clip
        .subtitle
        .iter()
        .filter(|t| match wanted.iter().position(|&w| w == t.token_id) {
            Some(p) => {
                wanted.remove(p);
                true
            }
            None => false,
        })
        .cloned()
        .collect();
    let activity_mask = clip.activity_mask.as_ref().map(|mask| {
        let off = (window.0 - clip.sub_span.0) as usize;
        mask[off..=off + (window.1 - window.0) as usize].to_vec()
    });
    Some(SubtitledClip {
        id: clip.id.clone(),
        programme: clip.programme.clone(),
        features,
        subtitle,
        sub_span: window,
        annotations: chosen,
        activity_mask,
        truth: clip.truth.clone(),
    })
}
