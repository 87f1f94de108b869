use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::scorer::SequenceScorer;
use crate::error::{Error, Result};
use crate::model::AttentionRecord;
use crate::text::{BOS, EOS};

/// How attention is pooled before localisation. Heads are always averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnAggregation {
    /// One decoder layer (0-based).
    Layer(usize),
    /// Mean over all decoder layers.
    MeanAll,
}

impl std::fmt::Display for AttnAggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttnAggregation::Layer(k) => write!(f, "layer:{k}"),
            AttnAggregation::MeanAll => write!(f, "mean"),
        }
    }
}

impl std::str::FromStr for AttnAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" | "mean_all" => Ok(AttnAggregation::MeanAll),
            _ => s
                .strip_prefix("layer:")
                .and_then(|k| k.parse().ok())
                .map(AttnAggregation::Layer)
                .ok_or_else(|| Error::config(format!("unknown attention aggregation {s:?} (use mean or layer:K)"))),
        }
    }
}

/// Head-averaged, layer-pooled attention, `T_dec × T_enc`.
pub fn aggregate_attention(record: &AttentionRecord, agg: AttnAggregation) -> Result<Array2<f64>> {
    match agg {
        AttnAggregation::Layer(k) => {
            if k >= record.layers() {
                return Err(Error::contract(format!("layer {k} >= {} recorded layers", record.layers())));
            }
            Ok(record.layer_mean(k))
        }
        AttnAggregation::MeanAll => {
            let mut acc = Array2::<f64>::zeros((record.steps(), record.enc_len()));
            for l in 0..record.layers() {
                acc += &record.layer_mean(l);
            }
            Ok(acc / record.layers().max(1) as f64)
        }
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(row: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in row.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Decoded tokens, ending with EOS unless truncated at the step limit.
    pub hypothesis: Vec<usize>,
    /// Sum of `step_log_probs`.
    pub score: f64,
    pub step_log_probs: Vec<f64>,
    /// One attention step per hypothesis token.
    pub attention: AttentionRecord,
}

impl DecodeResult {
    /// The hypothesis without its terminating EOS.
    pub fn tokens(&self) -> &[usize] {
        match self.hypothesis.last() {
            Some(&EOS) => &self.hypothesis[..self.hypothesis.len() - 1],
            _ => &self.hypothesis,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.hypothesis.last() == Some(&EOS)
    }

    fn empty(scorer: &dyn SequenceScorer) -> Self {
        let (l, h, e) = scorer.attention_shape();
        Self {
            hypothesis: Vec::new(),
            score: 0.0,
            step_log_probs: Vec::new(),
            attention: AttentionRecord::empty(l, h, e),
        }
    }
}

pub fn greedy_decode(scorer: &dyn SequenceScorer) -> Result<DecodeResult> {
    let mut out = DecodeResult::empty(scorer);
    let mut prefix = vec![BOS];
    for _ in 0..scorer.max_steps() {
        let s = scorer.score_prefix(&prefix)?;
        let last = s.log_probs.row(s.log_probs.nrows() - 1);
        let (token, lp) = argmax(last.iter().copied()).expect("non-empty vocabulary");
        out.hypothesis.push(token);
        out.step_log_probs.push(lp);
        out.score += lp;
        out.attention.push_last_step(&s.attention);
        if token == EOS {
            break;
        }
        prefix.push(token);
    }
    Ok(out)
}

struct Candidate {
    parent: usize,
    token: usize,
    lp: f64,
    score: f64,
}

fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.lp.total_cmp(&a.lp))
        .then_with(|| a.token.cmp(&b.token))
        .then_with(|| a.parent.cmp(&b.parent))
}

/// Left-to-right beam search without length normalisation. Each finished
/// hypothesis shrinks the live beam by one. Results are sorted by score,
/// best first, and number at most `width`.
pub fn beam_decode(scorer: &dyn SequenceScorer, width: usize) -> Result<Vec<DecodeResult>> {
    if width == 0 {
        return Err(Error::config("beam width must be at least 1"));
    }
    let mut live = vec![DecodeResult::empty(scorer)];
    let mut finished: Vec<DecodeResult> = Vec::new();
    for _ in 0..scorer.max_steps() {
        if live.is_empty() {
            break;
        }
        let mut scored = Vec::with_capacity(live.len());
        let mut candidates = Vec::new();
        for (parent, beam) in live.iter().enumerate() {
            let mut prefix = vec![BOS];
            prefix.extend_from_slice(&beam.hypothesis);
            let s = scorer.score_prefix(&prefix)?;
            let last = s.log_probs.row(s.log_probs.nrows() - 1);
            for (token, &lp) in last.iter().enumerate() {
                if lp.is_finite() {
                    candidates.push(Candidate {
                        parent,
                        token,
                        lp,
                        score: beam.score + lp,
                    });
                }
            }
            scored.push(s.attention);
        }
        candidates.sort_by(candidate_order);
        candidates.truncate(width - finished.len());
        let mut next = Vec::with_capacity(candidates.len());
        for c in candidates {
            let mut beam = live[c.parent].clone();
            beam.hypothesis.push(c.token);
            beam.step_log_probs.push(c.lp);
            beam.score = c.score;
            beam.attention.push_last_step(&scored[c.parent]);
            if c.token == EOS {
                finished.push(beam);
            } else {
                next.push(beam);
            }
        }
        live = next;
    }
    finished.extend(live.into_iter().filter(|b| !b.hypothesis.is_empty()));
    if finished.is_empty() {
        finished.push(DecodeResult::empty(scorer));
    }
    finished.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(finished)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherForcedResult {
    /// Reference tokens fed to the decoder (possibly truncated).
    pub reference: Vec<usize>,
    /// Per-step argmax prediction.
    pub predictions: Vec<usize>,
    /// Log-probability of each reference token.
    pub reference_log_probs: Vec<f64>,
    /// One attention step per reference token.
    pub attention: AttentionRecord,
}

/// Feeds BOS + `reference[..n-1]` and reads predictions and attention for
/// each of the `n` reference positions.
pub fn teacher_forced_decode(scorer: &dyn SequenceScorer, reference: &[usize]) -> Result<TeacherForcedResult> {
    if reference.is_empty() {
        return Err(Error::contract("teacher forcing needs a non-empty reference"));
    }
    let limit = scorer.max_steps();
    if limit == 0 {
        return Err(Error::contract("teacher forcing needs max_dec_len >= 1"));
    }
    let reference = if reference.len() > limit {
        warn!("reference of {} tokens truncated to max_dec_len {limit}", reference.len());
        &reference[..limit]
    } else {
        reference
    };
    let mut prefix = vec![BOS];
    prefix.extend_from_slice(&reference[..reference.len() - 1]);
    let s = scorer.score_prefix(&prefix)?;
    let predictions = s
        .log_probs
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()).expect("non-empty vocabulary").0)
        .collect();
    let reference_log_probs = reference.iter().enumerate().map(|(t, &r)| s.log_probs[[t, r]]).collect();
    Ok(TeacherForcedResult {
        reference: reference.to_vec(),
        predictions,
        reference_log_probs,
        attention: s.attention,
    })
}

/// One line of the decode debug dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeDumpEntry {
    pub clip_id: String,
    pub hypothesis: Vec<usize>,
    pub score: f64,
    /// Aggregated-attention argmax encoder index per hypothesis step.
    pub argmax_enc: Vec<usize>,
}

impl DecodeDumpEntry {
    pub fn new(clip_id: &str, result: &DecodeResult, agg: AttnAggregation) -> Result<Self> {
        let pooled = aggregate_attention(&result.attention, agg)?;
        Ok(Self {
            clip_id: clip_id.to_string(),
            hypothesis: result.hypothesis.clone(),
            score: result.score,
            argmax_enc: pooled
                .rows()
                .into_iter()
                .map(|r| argmax(r.iter().copied()).map_or(0, |(i, _)| i))
                .collect(),
        })
    }
}

pub fn write_decode_dump(entries: &[DecodeDumpEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut body, e)?;
        body.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&body))
        .map_err(|e| Error::io(path, e))
}
