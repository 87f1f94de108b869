//! Corpus files (JSON lines) and annotation stores (CSV).
//!
//! A corpus file starts with one header record, followed by programme
//! records and then clip records, one JSON object per line. Feature matrices
//! are base64-encoded little-endian `f32` with explicit shape.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    AnnotationSource, Corpus, FeatureSequence, GroundTruthSign, Programme, SparseAnnotation, SubtitledClip,
    TokenRef, TokenSpace,
};
use crate::error::{Error, Result};

const FORMAT: &str = "signspot-corpus";
const VERSION: u32 = 1;

pub const ANNOTATION_CSV_HEADER: [&str; 5] = ["clip_id", "token", "frame_time", "confidence", "source"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRecord {
    t_enc: usize,
    dim: usize,
    stride: u32,
    origin_frame: i64,
    data: String,
}

impl FeatureRecord {
    fn encode(f: &FeatureSequence) -> Self {
        let mut bytes = Vec::with_capacity(f.values().len() * 4);
        for v in f.values().iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            t_enc: f.len(),
            dim: f.dim(),
            stride: f.stride(),
            origin_frame: f.origin_frame(),
            data: B64.encode(bytes),
        }
    }

    fn decode(self) -> std::result::Result<FeatureSequence, String> {
        let bytes = B64.decode(self.data.as_bytes()).map_err(|e| format!("feature data: {e}"))?;
        if bytes.len() != self.t_enc * self.dim * 4 {
            return Err(format!(
                "feature data holds {} bytes, expected {} for {}x{} f32",
                bytes.len(),
                self.t_enc * self.dim * 4,
                self.t_enc,
                self.dim
            ));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let arr = Array2::from_shape_vec((self.t_enc, self.dim), values).map_err(|e| e.to_string())?;
        FeatureSequence::new(arr, self.stride, self.origin_frame).map_err(|e| e.to_string())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Header {
        format: String,
        version: u32,
        lexicon: Vec<String>,
        token_space: TokenSpace,
        fps: f64,
        synthetic: bool,
        n_programmes: usize,
        n_clips: usize,
    },
    Programme {
        id: String,
        n_frames: i64,
        features: FeatureRecord,
        /// Run-length encoded activity, alternating starting with inactive.
        activity_runs: Vec<u32>,
    },
    Clip {
        id: String,
        #[serde(default)]
        programme: Option<String>,
        features: FeatureRecord,
        subtitle: Vec<TokenRef>,
        sub_span: (i64, i64),
        annotations: Vec<SparseAnnotation>,
        #[serde(default)]
        activity_runs: Option<Vec<u32>>,
        #[serde(default)]
        truth: Option<Vec<GroundTruthSign>>,
    },
}

fn encode_runs(mask: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &m in mask {
        if m == current {
            len += 1;
        } else {
            runs.push(len);
            current = m;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

fn decode_runs(runs: &[u32]) -> Vec<bool> {
    let mut out = Vec::new();
    for (i, &n) in runs.iter().enumerate() {
        out.extend(std::iter::repeat_n(i % 2 == 1, n as usize));
    }
    out
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |record: &Record| -> Result<()> {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))
    };
    write(&Record::Header {
        format: FORMAT.into(),
        version: VERSION,
        lexicon: corpus.lexicon.clone(),
        token_space: corpus.token_space,
        fps: corpus.fps,
        synthetic: corpus.synthetic,
        n_programmes: corpus.programmes.len(),
        n_clips: corpus.clips.len(),
    })?;
    for p in &corpus.programmes {
        write(&Record::Programme {
            id: p.id.clone(),
            n_frames: p.n_frames,
            features: FeatureRecord::encode(&p.features),
            activity_runs: encode_runs(&p.activity),
        })?;
    }
    for c in &corpus.clips {
        write(&Record::Clip {
            id: c.id.clone(),
            programme: c.programme.clone(),
            features: FeatureRecord::encode(&c.features),
            subtitle: c.subtitle.clone(),
            sub_span: c.sub_span,
            annotations: c.annotations.clone(),
            activity_runs: c.activity_mask.as_deref().map(encode_runs),
            truth: c.truth.clone(),
        })?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut corpus: Option<Corpus> = None;
    let mut expected = (0usize, 0usize);
    let mut line_no = 0;
    for line in reader.lines() {
        line_no += 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, format!("malformed record: {e}")))?;
        let bad = |msg: String| Error::parse(path, line_no, msg);
        match (record, corpus.as_mut()) {
            (
                Record::Header {
                    format,
                    version,
                    lexicon,
                    token_space,
                    fps,
                    synthetic,
                    n_programmes,
                    n_clips,
                },
                None,
            ) => {
                if format != FORMAT || version != VERSION {
                    return Err(bad(format!("unsupported format {format} v{version}")));
                }
                expected = (n_programmes, n_clips);
                corpus = Some(Corpus {
                    lexicon,
                    token_space,
                    fps,
                    programmes: Vec::with_capacity(n_programmes),
                    clips: Vec::with_capacity(n_clips),
                    synthetic,
                });
            }
            (Record::Header { .. }, Some(_)) => return Err(bad("duplicate header".into())),
            (_, None) => return Err(bad("first record must be the header".into())),
            (
                Record::Programme {
                    id,
                    n_frames,
                    features,
                    activity_runs,
                },
                Some(c),
            ) => {
                if !c.clips.is_empty() {
                    return Err(bad("programme record after clip records".into()));
                }
                let activity = decode_runs(&activity_runs);
                if activity.len() as i64 != n_frames {
                    return Err(bad(format!("activity covers {} of {n_frames} frames", activity.len())));
                }
                c.programmes.push(Programme {
                    id,
                    n_frames,
                    features: features.decode().map_err(bad)?,
                    activity,
                });
            }
            (
                Record::Clip {
                    id,
                    programme,
                    features,
                    subtitle,
                    sub_span,
                    annotations,
                    activity_runs,
                    truth,
                },
                Some(c),
            ) => {
                let clip = SubtitledClip {
                    id,
                    programme,
                    features: features.decode().map_err(bad)?,
                    subtitle,
                    sub_span,
                    annotations,
                    activity_mask: activity_runs.as_deref().map(decode_runs),
                    truth,
                };
                clip.validate().map_err(|e| bad(e.to_string()))?;
                c.clips.push(clip);
            }
        }
    }
    let corpus = corpus.ok_or_else(|| Error::parse(path, line_no.max(1), "missing header"))?;
    if corpus.programmes.len() != expected.0 || corpus.clips.len() != expected.1 {
        return Err(Error::parse(
            path,
            line_no + 1,
            format!(
                "file ended after {} programmes and {} clips; header announced {} and {}",
                corpus.programmes.len(),
                corpus.clips.len(),
                expected.0,
                expected.1
            ),
        ));
    }
    corpus.validate().map_err(|e| Error::parse(path, line_no, e.to_string()))?;
    Ok(corpus)
}

/// One row of an annotation store: a timed token in a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRow {
    pub clip_id: String,
    pub token_id: usize,
    pub frame_time: i64,
    pub confidence: f64,
    pub source: AnnotationSource,
}

/// Writes rows as CSV, naming tokens by their lexicon word.
pub fn write_annotation_csv(rows: &[AnnotationRow], lexicon: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(ANNOTATION_CSV_HEADER)?;
    for r in rows {
        let word = lexicon
            .get(r.token_id)
            .ok_or_else(|| Error::contract(format!("token id {} outside lexicon", r.token_id)))?;
        w.write_record([
            r.clip_id.as_str(),
            word,
            &r.frame_time.to_string(),
            &r.confidence.to_string(),
            r.source.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_annotation_csv(lexicon: &[String], path: impl AsRef<Path>) -> Result<Vec<AnnotationRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ANNOTATION_CSV_HEADER {
        return Err(Error::parse(path, 1, format!("unexpected header {header:?}")));
    }
    let index: std::collections::HashMap<&str, usize> =
        lexicon.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if record.len() != 5 {
            return Err(Error::parse(path, line, format!("expected 5 fields, found {}", record.len())));
        }
        let bad = |msg: String| Error::parse(path, line, msg);
        let token_id = *index
            .get(&record[1])
            .ok_or_else(|| bad(format!("token {:?} not in lexicon", &record[1])))?;
        let frame_time = record[2].parse().map_err(|e| bad(format!("frame_time: {e}")))?;
        let confidence: f64 = record[3].parse().map_err(|e| bad(format!("confidence: {e}")))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(bad(format!("confidence {confidence} outside [0, 1]")));
        }
        let source = record[4].parse().map_err(|e: Error| bad(e.to_string()))?;
        rows.push(AnnotationRow {
            clip_id: record[0].to_string(),
            token_id,
            frame_time,
            confidence,
            source,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, NoiseConfig};

    #[test]
    fn run_length_roundtrip() {
        for mask in [vec![], vec![true], vec![false, false, true, true, true, false]] {
            assert_eq!(decode_runs(&encode_runs(&mask)), mask);
        }
    }

    #[test]
    fn generated_corpus_roundtrips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = generate_corpus(25, 6, 5, NoiseConfig::default(), 4).unwrap();
        save_corpus(&c, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), c);
    }

    #[test]
    fn empty_corpus_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let c = Corpus::empty(vec!["a".into()]);
        save_corpus(&c, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(load_corpus(&path).unwrap(), c);
    }

    #[test]
    fn truncated_file_names_the_offending_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = generate_corpus(5, 4, 3, NoiseConfig::default(), 1).unwrap();
        save_corpus(&c, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 40];
        std::fs::write(&path, cut).unwrap();
        let n_lines = cut.lines().count();
        match load_corpus(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, n_lines),
            other => panic!("expected parse error, got {other:?}"),
        }

        // Cut on a line boundary: the missing clip is reported past the end.
        let whole_lines: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, whole_lines).unwrap();
        match load_corpus(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn annotation_csv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let lex = vec!["talk".to_string(), "armi".to_string()];
        let rows = vec![AnnotationRow {
            clip_id: "c1".into(),
            token_id: 1,
            frame_time: 42,
            confidence: 0.125,
            source: AnnotationSource::Attention,
        }];
        write_annotation_csv(&rows, &lex, &path).unwrap();
        assert_eq!(read_annotation_csv(&lex, &path).unwrap(), rows);

        std::fs::write(&path, "clip_id,token,frame_time,confidence,source\nc1,nope,1,0.5,attention\n").unwrap();
        match read_annotation_csv(&lex, &path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
