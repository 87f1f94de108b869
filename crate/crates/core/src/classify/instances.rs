use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationRow, AnnotationSource, Corpus, FeatureSequence};
use crate::error::{Error, Result};

/// Tokens recognised by a classifier; class `i` is the `i`-th smallest token id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet(Vec<usize>);

impl ClassSet {
    pub fn new(tokens: impl IntoIterator<Item = usize>) -> Self {
        let mut t: Vec<usize> = tokens.into_iter().collect();
        t.sort_unstable();
        t.dedup();
        Self(t)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn class_of(&self, token_id: usize) -> Option<usize> {
        self.0.binary_search(&token_id).ok()
    }

    pub fn token_of(&self, class: usize) -> Option<usize> {
        self.0.get(class).copied()
    }
}

/// A window of features pooled around one annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimmedInstance {
    pub clip_id: String,
    pub token_id: usize,
    pub frame_time: i64,
    /// Name of the annotation store the instance came from.
    pub store: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ExtractStats {
    pub rows: usize,
    pub extracted: usize,
    pub unknown_clip: usize,
    pub unknown_class: usize,
    /// Windows cut short by a clip boundary.
    pub clipped: usize,
    /// Windows containing no feature, replaced by the nearest feature.
    pub nearest_fallback: usize,
}

enum Outcome {
    Instance(TrimmedInstance, bool, bool),
    UnknownClip,
    UnknownClass,
}

/// Mean of the features whose frame time lies in
/// `[frame - window/2, frame + window/2 - 1]`, clipped to the sequence.
/// Returns the pooled vector and whether the window was clipped and whether
/// it fell back to the nearest single feature.
pub fn pool_window(features: &FeatureSequence, frame: i64, window_frames: u32) -> (Vec<f64>, bool, bool) {
    let half = window_frames as i64 / 2;
    let (start, end) = (frame - half, frame - half + window_frames.max(1) as i64 - 1);
    let clipped = start < features.frame_time(0) || end > features.last_frame();
    let mut range = features.indices_within(start, end);
    let fallback = range.is_empty();
    if fallback {
        let j = features.index_of_frame(frame).clamp(0, features.len() as i64 - 1) as usize;
        range = j..j + 1;
    }
    let n = range.len() as f64;
    let values = features.values();
    let mut mean = vec![0.0; features.dim()];
    for i in range {
        for (m, &v) in mean.iter_mut().zip(values.row(i)) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    (mean, clipped, fallback)
}

/// One instance per store row, in row order. Rows naming an unknown clip, or
/// a token outside `classes` when given, are skipped and counted.
pub fn extract_instances(
    corpus: &Corpus,
    rows: &[AnnotationRow],
    store: &str,
    window_frames: u32,
    classes: Option<&ClassSet>,
) -> (Vec<TrimmedInstance>, ExtractStats) {
    let clips: HashMap<&str, &FeatureSequence> = corpus.clips.iter().map(|c| (c.id.as_str(), &c.features)).collect();
    let outcomes: Vec<Outcome> = rows
        .par_iter()
        .map(|r| {
            if classes.is_some_and(|c| c.class_of(r.token_id).is_none()) {
                return Outcome::UnknownClass;
            }
            let Some(features) = clips.get(r.clip_id.as_str()) else {
                return Outcome::UnknownClip;
            };
            let (pooled, clipped, fallback) = pool_window(features, r.frame_time, window_frames);
            Outcome::Instance(
                TrimmedInstance {
                    clip_id: r.clip_id.clone(),
                    token_id: r.token_id,
                    frame_time: r.frame_time,
                    store: store.to_string(),
                    features: pooled,
                },
                clipped,
                fallback,
            )
        })
        .collect();
    let mut stats = ExtractStats {
        rows: rows.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(rows.len());
    for o in outcomes {
        match o {
            Outcome::Instance(inst, clipped, fallback) => {
                stats.extracted += 1;
                stats.clipped += clipped as usize;
                stats.nearest_fallback += fallback as usize;
                out.push(inst);
            }
            Outcome::UnknownClip => stats.unknown_clip += 1,
            Outcome::UnknownClass => stats.unknown_class += 1,
        }
    }
    (out, stats)
}

/// Rows at the centre of every ground-truth sign of a synthetic corpus.
pub fn truth_rows(corpus: &Corpus) -> Result<Vec<AnnotationRow>> {
    let mut rows = Vec::new();
    for clip in &corpus.clips {
        let truth = clip
            .truth
            .as_ref()
            .ok_or_else(|| Error::config(format!("clip {} has no ground truth", clip.id)))?;
        rows.extend(truth.iter().map(|t| AnnotationRow {
            clip_id: clip.id.clone(),
            token_id: t.token_id,
            frame_time: t.centre_frame(),
            confidence: 1.0,
            source: AnnotationSource::Synthetic,
        }));
    }
    Ok(rows)
}

/// Stacks instance features into an `N × D` matrix with class labels.
pub fn design_matrix(instances: &[TrimmedInstance], classes: &ClassSet) -> Result<(Array2<f64>, Vec<usize>)> {
    let dim = instances.first().map_or(0, |i| i.features.len());
    let mut x = Array2::zeros((instances.len(), dim));
    let mut labels = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        if inst.features.len() != dim {
            return Err(Error::contract(format!(
                "instance {i} has {} features, expected {dim}",
                inst.features.len()
            )));
        }
        let class = classes
            .class_of(inst.token_id)
            .ok_or_else(|| Error::contract(format!("instance {i}: token {} outside the class set", inst.token_id)))?;
        x.row_mut(i).iter_mut().zip(&inst.features).for_each(|(d, &v)| *d = v);
        labels.push(class);
    }
    Ok((x, labels))
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    index: usize,
    clip_id: String,
    token_id: usize,
    frame_time: i64,
    store: String,
}

fn blob_path(index_path: &Path) -> PathBuf {
    index_path.with_extension("bin")
}

/// Writes a CSV index at `path` and the features, as a little-endian
/// `u64` count and dimension followed by `f64` values, next to it with a
/// `.bin` extension.
pub fn write_instances(instances: &[TrimmedInstance], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for (index, inst) in instances.iter().enumerate() {
        w.serialize(IndexRow {
            index,
            clip_id: inst.clip_id.clone(),
            token_id: inst.token_id,
            frame_time: inst.frame_time,
            store: inst.store.clone(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let blob = blob_path(path);
    let dim = instances.first().map_or(0, |i| i.features.len());
    let file = File::create(&blob).map_err(|e| Error::io(&blob, e))?;
    let mut b = BufWriter::new(file);
    let mut put = |bytes: &[u8]| b.write_all(bytes).map_err(|e| Error::io(&blob, e));
    put(&(instances.len() as u64).to_le_bytes())?;
    put(&(dim as u64).to_le_bytes())?;
    for inst in instances {
        if inst.features.len() != dim {
            return Err(Error::contract("instances have differing feature dimensions"));
        }
        for v in &inst.features {
            put(&v.to_le_bytes())?;
        }
    }
    b.flush().map_err(|e| Error::io(&blob, e))
}

pub fn read_instances(path: impl AsRef<Path>) -> Result<Vec<TrimmedInstance>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let index: Vec<IndexRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;

    let blob = blob_path(path);
    let file = File::open(&blob).map_err(|e| Error::io(&blob, e))?;
    let mut b = BufReader::new(file);
    let mut word = [0u8; 8];
    let mut next = |b: &mut BufReader<File>| -> Result<[u8; 8]> {
        b.read_exact(&mut word)
            .map_err(|_| Error::parse(&blob, 0, "truncated feature blob"))?;
        Ok(word)
    };
    let n = u64::from_le_bytes(next(&mut b)?) as usize;
    let dim = u64::from_le_bytes(next(&mut b)?) as usize;
    if n != index.len() {
        return Err(Error::parse(&blob, 0, format!("{n} feature rows for {} index rows", index.len())));
    }
    let mut out = Vec::with_capacity(n);
    for (i, row) in index.into_iter().enumerate() {
        if row.index != i {
            return Err(Error::parse(path, i + 2, format!("index {} out of order", row.index)));
        }
        let features = (0..dim)
            .map(|_| next(&mut b).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        out.push(TrimmedInstance {
            clip_id: row.clip_id,
            token_id: row.token_id,
            frame_time: row.frame_time,
            store: row.store,
            features,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SubtitledClip, TokenRef, TokenSpace};

    fn clip(id: &str, values: Array2<f32>) -> SubtitledClip {
        SubtitledClip {
            id: id.into(),
            programme: None,
            features: FeatureSequence::new(values, 4, 0).unwrap(),
            subtitle: vec![TokenRef::new(3)],
            sub_span: (0, 40),
            annotations: vec![],
            activity_mask: None,
            truth: None,
        }
    }

    fn corpus(clips: Vec<SubtitledClip>) -> Corpus {
        let mut c = Corpus::empty(vec!["<pad>".into(), "<bos>".into(), "<eos>".into(), "a".into(), "b".into()]);
        c.token_space = TokenSpace::Vocabulary;
        c.with_clips(clips)
    }

    fn row(clip_id: &str, token_id: usize, frame_time: i64) -> AnnotationRow {
        AnnotationRow {
            clip_id: clip_id.into(),
            token_id,
            frame_time,
            confidence: 1.0,
            source: AnnotationSource::Attention,
        }
    }

    fn ramp(n: usize) -> Array2<f32> {
        Array2::from_shape_fn((n, 2), |(i, j)| (i * 10 + j) as f32)
    }

    #[test]
    fn one_instance_per_valid_row() {
        let c = corpus(vec![clip("x", ramp(12))]);
        let rows: Vec<_> = (0..5).map(|k| row("x", 3, 4 * k + 10)).collect();
        let (inst, stats) = extract_instances(&c, &rows, "s", 16, None);
        assert_eq!(inst.len(), 5);
        assert_eq!(stats.extracted, 5);
    }

    #[test]
    fn window_mean_matches_hand_count() {
        // Frame 20, window 16 → frames [12, 27] → features 3..=6 (frames 12..24).
        let c = corpus(vec![clip("x", ramp(12))]);
        let (inst, _) = extract_instances(&c, &[row("x", 3, 20)], "s", 16, None);
        assert_eq!(inst[0].features, vec![45.0, 46.0]);
    }

    #[test]
    fn edge_window_is_clipped() {
        // Frame 0 → frames [-8, 7] → features 0..=1.
        let c = corpus(vec![clip("x", ramp(12))]);
        let (inst, stats) = extract_instances(&c, &[row("x", 3, 0)], "s", 16, None);
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].features, vec![5.0, 6.0]);
        assert_eq!(stats.clipped, 1);
    }

    #[test]
    fn constant_features_pool_to_the_constant() {
        let c = corpus(vec![clip("x", Array2::from_elem((9, 2), 0.25))]);
        let (inst, _) = extract_instances(&c, &[row("x", 3, 17), row("x", 3, 33)], "s", 16, None);
        assert!(inst.iter().all(|i| i.features == vec![0.25, 0.25]));
    }

    #[test]
    fn unknown_clips_and_classes_are_counted() {
        let c = corpus(vec![clip("x", ramp(12))]);
        let classes = ClassSet::new([3]);
        let rows = vec![row("x", 3, 8), row("nope", 3, 8), row("x", 4, 8)];
        let (inst, stats) = extract_instances(&c, &rows, "s", 16, Some(&classes));
        assert_eq!(inst.len(), 1);
        assert_eq!((stats.unknown_clip, stats.unknown_class), (1, 1));
    }

    #[test]
    fn tiny_window_falls_back_to_nearest_feature() {
        let c = corpus(vec![clip("x", ramp(12))]);
        let (inst, stats) = extract_instances(&c, &[row("x", 3, 9)], "s", 1, None);
        assert_eq!(inst[0].features, vec![20.0, 21.0]);
        assert_eq!(stats.nearest_fallback, 1);
    }

    #[test]
    fn instance_file_round_trip() {
        let c = corpus(vec![clip("x", ramp(12)), clip("y", ramp(7))]);
        let (inst, _) = extract_instances(&c, &[row("x", 3, 8), row("y", 4, 12)], "gd", 16, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.csv");
        write_instances(&inst, &path).unwrap();
        assert_eq!(read_instances(&path).unwrap(), inst);
    }
}
