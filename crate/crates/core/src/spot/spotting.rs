use serde::{Deserialize, Serialize};

use crate::corpus::SubtitledClip;
use crate::decode::{aggregate_attention, AttnAggregation, DecodeResult, TeacherForcedResult};
use crate::error::{Error, Result};
use crate::text::EOS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningStrategy {
    /// Greedy decoding, tokens kept only if they appear in the reference.
    GdFiltered,
    /// Greedy decoding, every decoded token kept.
    GdUnfiltered,
    /// Beam search; filtered spottings from every returned hypothesis.
    BsAll { width: usize },
    /// Beam search; filtered spottings from the hypothesis with the highest recall.
    BsBestRecall { width: usize },
    /// Teacher forcing; reference tokens whose attention peak exceeds `tau`.
    TfThreshold { tau: f64 },
    /// Teacher forcing; per-step predictions that appear in the reference.
    TfPrediction,
}

impl MiningStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MiningStrategy::BsAll { width } | MiningStrategy::BsBestRecall { width } if width == 0 => {
                Err(Error::config("beam width must be at least 1"))
            }
            MiningStrategy::TfThreshold { tau } if !(0.0..1.0).contains(&tau) => {
                Err(Error::config(format!("threshold {tau} outside [0, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// Attention pooling used when none is requested explicitly.
    pub fn default_aggregation(&self) -> AttnAggregation {
        match self {
            MiningStrategy::TfThreshold { .. } | MiningStrategy::TfPrediction => AttnAggregation::Layer(0),
            _ => AttnAggregation::MeanAll,
        }
    }
}

impl std::fmt::Display for MiningStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MiningStrategy::GdFiltered => write!(f, "gd"),
            MiningStrategy::GdUnfiltered => write!(f, "gd-unfiltered"),
            MiningStrategy::BsAll { width } => write!(f, "bs-all:{width}"),
            MiningStrategy::BsBestRecall { width } => write!(f, "bs-best:{width}"),
            MiningStrategy::TfThreshold { tau } => write!(f, "tf:{tau}"),
            MiningStrategy::TfPrediction => write!(f, "tf-pred"),
        }
    }
}

impl std::str::FromStr for MiningStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("unknown mining strategy {s:?}"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let width = || -> Result<usize> { arg.ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let strategy = match name {
            "gd" | "gd-filtered" => MiningStrategy::GdFiltered,
            "gd-unfiltered" => MiningStrategy::GdUnfiltered,
            "bs-all" => MiningStrategy::BsAll { width: width()? },
            "bs-best" | "bs-best-recall" => MiningStrategy::BsBestRecall { width: width()? },
            "tf" => MiningStrategy::TfThreshold {
                tau: arg.ok_or_else(bad)?.parse().map_err(|_| bad())?,
            },
            "tf-pred" => MiningStrategy::TfPrediction,
            _ => return Err(bad()),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

/// A token localised at one encoder position of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spotting {
    pub clip_id: String,
    pub token_id: usize,
    pub enc_index: usize,
    /// Video frame of `enc_index`.
    pub frame_time: i64,
    /// Attention peak value at `enc_index`.
    pub confidence: f64,
    pub strategy: MiningStrategy,
}

/// Multiset of reference tokens; each occurrence can be taken once.
pub(crate) struct RefPool(Vec<usize>);

impl RefPool {
    pub(crate) fn new(reference: &[usize]) -> Self {
        Self(reference.to_vec())
    }

    pub(crate) fn take(&mut self, token: usize) -> bool {
        match self.0.iter().position(|&t| t == token) {
            Some(i) => {
                self.0.swap_remove(i);
                true
            }
            None => false,
        }
    }
}

fn peak(row: ndarray::ArrayView1<f64>) -> (usize, f64) {
    crate::decode::search_argmax(row.iter().copied()).unwrap_or((0, 0.0))
}

fn spotting(clip: &SubtitledClip, token: usize, (enc, conf): (usize, f64), strategy: MiningStrategy) -> Spotting {
    Spotting {
        clip_id: clip.id.clone(),
        token_id: token,
        enc_index: enc,
        frame_time: clip.features.frame_time(enc),
        confidence: conf.clamp(0.0, 1.0),
        strategy,
    }
}

/// One spotting per kept hypothesis step, at the pooled-attention argmax.
/// With `filter`, a step is kept only if its token can still be matched to
/// an unused occurrence in `reference`. EOS never yields a spotting.
pub fn spot_from_decode(
    clip: &SubtitledClip,
    result: &DecodeResult,
    reference: &[usize],
    agg: AttnAggregation,
    filter: bool,
    strategy: MiningStrategy,
) -> Result<Vec<Spotting>> {
    if result.hypothesis.is_empty() {
        return Ok(Vec::new());
    }
    let pooled = aggregate_attention(&result.attention, agg)?;
    let mut pool = RefPool::new(reference);
    let mut out = Vec::new();
    for (t, &token) in result.hypothesis.iter().enumerate() {
        if token == EOS || (filter && !pool.take(token)) {
            continue;
        }
        out.push(spotting(clip, token, peak(pooled.row(t)), strategy));
    }
    Ok(out)
}

/// One spotting per reference step whose pooled attention peak exceeds `tau`.
pub fn spot_teacher_forced(
    clip: &SubtitledClip,
    result: &TeacherForcedResult,
    tau: f64,
    agg: AttnAggregation,
    strategy: MiningStrategy,
) -> Result<Vec<Spotting>> {
    let pooled = aggregate_attention(&result.attention, agg)?;
    Ok(result
        .reference
        .iter()
        .enumerate()
        .filter_map(|(t, &token)| {
            let (enc, value) = peak(pooled.row(t));
            (value > tau).then(|| spotting(clip, token, (enc, value), strategy))
        })
        .collect())
}

/// Teacher-forced per-step predictions that match an unused reference
/// occurrence, localised at that step's attention peak.
pub fn spot_tf_predictions(
    clip: &SubtitledClip,
    result: &TeacherForcedResult,
    agg: AttnAggregation,
    strategy: MiningStrategy,
) -> Result<Vec<Spotting>> {
    let pooled = aggregate_attention(&result.attention, agg)?;
    let mut pool = RefPool::new(&result.reference);
    Ok(result
        .predictions
        .iter()
        .enumerate()
        .filter(|(_, &p)| p != EOS && pool.take(p))
        .map(|(t, &p)| spotting(clip, p, peak(pooled.row(t)), strategy))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{FeatureSequence, TokenRef};
    use crate::model::AttentionRecord;
    use ndarray::Array2;

    fn clip(reference: &[usize], t_enc: usize) -> SubtitledClip {
        SubtitledClip {
            id: "c".into(),
            programme: None,
            features: FeatureSequence::new(Array2::zeros((t_enc, 2)), 4, 100).unwrap(),
            subtitle: reference.iter().map(|&t| TokenRef::new(t)).collect(),
            sub_span: (100, 100 + 4 * t_enc as i64),
            annotations: vec![],
            activity_mask: None,
            truth: None,
        }
    }

    fn result(hyp: &[usize], rows: &[[f64; 3]]) -> DecodeResult {
        DecodeResult {
            hypothesis: hyp.to_vec(),
            score: -1.0,
            step_log_probs: vec![-1.0 / hyp.len() as f64; hyp.len()],
            attention: AttentionRecord::from_rows(rows.iter().map(|r| vec![vec![r.to_vec()]]).collect()),
        }
    }

    const TALK: usize = 3;
    const ARMI: usize = 4;
    const KNOW: usize = 5;

    #[test]
    fn filtered_keeps_only_reference_tokens() {
        let c = clip(&[ARMI, TALK, 9], 3);
        let r = result(
            &[TALK, ARMI, KNOW, EOS],
            &[[0.1, 0.7, 0.2], [0.6, 0.3, 0.1], [0.2, 0.2, 0.6], [0.3, 0.3, 0.4]],
        );
        let s = spot_from_decode(&c, &r, &c.token_ids(), AttnAggregation::MeanAll, true, MiningStrategy::GdFiltered)
            .unwrap();
        let got: Vec<_> = s.iter().map(|s| (s.token_id, s.enc_index, s.frame_time)).collect();
        assert_eq!(got, vec![(TALK, 1, 104), (ARMI, 0, 100)]);
        assert!((s[0].confidence - 0.7).abs() < 1e-15);

        let u = spot_from_decode(&c, &r, &c.token_ids(), AttnAggregation::MeanAll, false, MiningStrategy::GdUnfiltered)
            .unwrap();
        assert_eq!(u.len(), 3);
        assert_eq!(u[2].token_id, KNOW);
    }

    #[test]
    fn reference_occurrences_are_consumed_once() {
        let c = clip(&[TALK], 3);
        let r = result(&[TALK, TALK], &[[0.5, 0.25, 0.25], [0.25, 0.5, 0.25]]);
        let s = spot_from_decode(&c, &r, &c.token_ids(), AttnAggregation::MeanAll, true, MiningStrategy::GdFiltered)
            .unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].enc_index, 0);
    }

    #[test]
    fn empty_hypothesis_gives_nothing() {
        let c = clip(&[TALK], 3);
        let r = DecodeResult {
            hypothesis: vec![],
            score: 0.0,
            step_log_probs: vec![],
            attention: AttentionRecord::empty(1, 1, 3),
        };
        assert!(spot_from_decode(&c, &r, &[TALK], AttnAggregation::MeanAll, true, MiningStrategy::GdFiltered)
            .unwrap()
            .is_empty());
    }

    fn tf(reference: &[usize], predictions: &[usize], rows: &[&[f64]]) -> TeacherForcedResult {
        TeacherForcedResult {
            reference: reference.to_vec(),
            predictions: predictions.to_vec(),
            reference_log_probs: vec![0.0; reference.len()],
            attention: AttentionRecord::from_rows(rows.iter().map(|r| vec![vec![r.to_vec()]]).collect()),
        }
    }

    #[test]
    fn threshold_is_exclusive() {
        let c = clip(&[TALK, ARMI], 3);
        let r = tf(&[TALK, ARMI], &[TALK, ARMI], &[&[0.15, 0.7, 0.15], &[0.4, 0.45, 0.15]]);
        let agg = AttnAggregation::Layer(0);
        let strat = MiningStrategy::TfThreshold { tau: 0.0 };
        assert_eq!(spot_teacher_forced(&c, &r, 0.0, agg, strat).unwrap().len(), 2);
        assert_eq!(spot_teacher_forced(&c, &r, 1.0, agg, strat).unwrap().len(), 0);
        assert_eq!(spot_teacher_forced(&c, &r, 0.45, agg, strat).unwrap().len(), 1);
    }

    #[test]
    fn peak_of_fifteen_percent_sits_between_thresholds() {
        let c = clip(&[TALK], 7);
        let row = [0.14, 0.14, 0.15, 0.14, 0.15, 0.14, 0.14];
        let r = tf(&[TALK], &[TALK], &[&row]);
        let agg = AttnAggregation::Layer(0);
        let strat = MiningStrategy::TfThreshold { tau: 0.1 };
        let kept = spot_teacher_forced(&c, &r, 0.1, agg, strat).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].enc_index, 2);
        assert!(spot_teacher_forced(&c, &r, 0.2, agg, strat).unwrap().is_empty());
    }

    #[test]
    fn tf_predictions_filter_against_reference() {
        let c = clip(&[TALK, ARMI], 3);
        let r = tf(&[TALK, ARMI], &[KNOW, TALK], &[&[0.2, 0.2, 0.6], &[0.5, 0.3, 0.2]]);
        let s = spot_tf_predictions(&c, &r, AttnAggregation::Layer(0), MiningStrategy::TfPrediction).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].token_id, s[0].enc_index), (TALK, 0));
    }

    #[test]
    fn strategies_parse_and_print() {
        for s in ["gd", "gd-unfiltered", "bs-all:10", "bs-best:3", "tf:0.1", "tf-pred"] {
            let parsed: MiningStrategy = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert!("bs-all".parse::<MiningStrategy>().is_err());
        assert!("tf:1.5".parse::<MiningStrategy>().is_err());
        assert!("bs-all:0".parse::<MiningStrategy>().is_err());
    }
}
