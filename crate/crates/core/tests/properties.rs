//! Randomised invariants of the metrics, attention aggregation and search.

use approx::assert_abs_diff_eq;
use ndarray::Array2;
use proptest::prelude::*;

use signspot::decode::{aggregate_attention, beam_decode, AttnAggregation, SequenceScorer, StepScores};
use signspot::eval::{eval_localisation, topk_recognition, ClipLocInput, TimedToken};
use signspot::model::AttentionRecord;
use signspot::text::{BOS, N_SPECIAL};

fn timed(token_id: usize, enc_index: i64) -> TimedToken {
    TimedToken { token_id, enc_index }
}

fn clip_strategy() -> impl Strategy<Value = ClipLocInput> {
    (
        prop::collection::vec(3usize..8, 1..6),
        prop::collection::vec((3usize..8, 0i64..40), 0..6),
        prop::collection::vec((3usize..8, 0i64..40), 0..6),
    )
        .prop_map(|(reference, preds, timed_)| ClipLocInput {
            clip_id: "c".into(),
            reference,
            predictions: preds.into_iter().map(|(t, j)| timed(t, j)).collect(),
            timed: timed_.into_iter().map(|(t, j)| timed(t, j)).collect(),
        })
}

fn normalised(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Softmax rows drawn from a fixed table of logits indexed by prefix.
struct HashScorer {
    vocab: usize,
    steps: usize,
    salt: u64,
}

impl HashScorer {
    fn logit(&self, prefix: &[usize], token: usize) -> f64 {
        let mut h = self.salt ^ 0x9e37_79b9_7f4a_7c15;
        for &p in prefix.iter().chain(std::iter::once(&token)) {
            h = (h ^ p as u64).wrapping_mul(0x1000_0000_01b3);
            h ^= h >> 29;
        }
        (h % 1000) as f64 / 250.0
    }
}

impl SequenceScorer for HashScorer {
    fn max_steps(&self) -> usize {
        self.steps
    }

    fn attention_shape(&self) -> (usize, usize, usize) {
        (1, 1, 3)
    }

    fn score_prefix(&self, prefix: &[usize]) -> signspot::Result<StepScores> {
        let mut lp = Array2::from_elem((prefix.len(), self.vocab), f64::NEG_INFINITY);
        let mut rows = Vec::new();
        for t in 0..prefix.len() {
            let p = &prefix[..=t];
            let logits: Vec<f64> = (2..self.vocab).map(|k| self.logit(p, k)).collect();
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for (i, l) in logits.iter().enumerate() {
                lp[[t, i + 2]] = l - max - z.ln();
            }
            rows.push(vec![vec![vec![0.2, 0.5, 0.3]]]);
        }
        Ok(StepScores {
            log_probs: lp,
            attention: AttentionRecord::from_rows(rows),
        })
    }
}

proptest! {
    #[test]
    fn loc_acc_is_shift_invariant(clips in prop::collection::vec(clip_strategy(), 1..5), shift in -50i64..50) {
        let shifted: Vec<ClipLocInput> = clips
            .iter()
            .map(|c| ClipLocInput {
                predictions: c.predictions.iter().map(|p| timed(p.token_id, p.enc_index + shift)).collect(),
                timed: c.timed.iter().map(|p| timed(p.token_id, p.enc_index + shift)).collect(),
                ..c.clone()
            })
            .collect();
        let (a, _) = eval_localisation(&clips, 2).unwrap();
        let (b, _) = eval_localisation(&shifted, 2).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn metrics_stay_in_unit_interval(clips in prop::collection::vec(clip_strategy(), 1..5), tol in 0i64..5) {
        let (r, _) = eval_localisation(&clips, tol).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.recall));
        prop_assert!((0.0..=1.0).contains(&r.precision));
        prop_assert!(r.loc_acc.is_none_or(|v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn adding_a_correct_prediction_never_hurts(clip in clip_strategy()) {
        let mut used = std::collections::HashMap::<usize, usize>::new();
        for p in &clip.predictions {
            *used.entry(p.token_id).or_default() += 1;
        }
        let spare = clip.reference.iter().copied().find(|t| {
            clip.reference.iter().filter(|r| *r == t).count() > used.get(t).copied().unwrap_or(0)
        });
        if let Some(token) = spare {
            let mut better = clip.clone();
            better.predictions.push(timed(token, 0));
            let (a, _) = eval_localisation(std::slice::from_ref(&clip), 2).unwrap();
            let (b, _) = eval_localisation(&[better], 2).unwrap();
            prop_assert!(b.recall >= a.recall);
            prop_assert!(b.precision >= a.precision);
        }
    }

    #[test]
    fn balanced_sets_have_equal_instance_and_class_accuracy(
        raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 3),
        per_class in 1usize..4,
    ) {
        let n = 4 * per_class;
        let scores = Array2::from_shape_fn((n, 4), |(i, j)| raw[i % 3][j] + (i as f64 * 0.37).sin() * 0.1);
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let r = topk_recognition(&scores, &labels).unwrap();
        assert_abs_diff_eq!(r.top1, r.top1_per_class, epsilon = 1e-12);
        assert_abs_diff_eq!(r.top5, r.top5_per_class, epsilon = 1e-12);
        prop_assert!(r.top1 <= r.top5);
    }

    #[test]
    fn aggregated_rows_are_distributions(
        raw in prop::collection::vec(prop::collection::vec(prop::collection::vec(0.01f64..1.0, 5), 6), 1..4),
        layer in 0usize..3,
    ) {
        let rows: Vec<Vec<Vec<Vec<f64>>>> = raw
            .into_iter()
            .map(|step| step.chunks(2).map(|heads| heads.iter().cloned().map(normalised).collect()).collect())
            .collect();
        let record = AttentionRecord::from_rows(rows);
        for agg in [AttnAggregation::MeanAll, AttnAggregation::Layer(layer)] {
            let pooled = aggregate_attention(&record, agg).unwrap();
            for row in pooled.rows() {
                assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn beam_scores_are_sorted_sums_of_step_scores(salt in any::<u64>(), width in 1usize..6, steps in 1usize..5) {
        let scorer = HashScorer { vocab: N_SPECIAL + 4, steps, salt };
        let beams = beam_decode(&scorer, width).unwrap();
        prop_assert!(!beams.is_empty() && beams.len() <= width);
        for w in beams.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for b in &beams {
            assert_abs_diff_eq!(b.score, b.step_log_probs.iter().sum::<f64>(), epsilon = 1e-12);
            let mut prefix = vec![BOS];
            for (t, &tok) in b.hypothesis.iter().enumerate() {
                let s = scorer.score_prefix(&prefix).unwrap();
                assert_abs_diff_eq!(s.log_probs[[t, tok]], b.step_log_probs[t], epsilon = 1e-12);
                prefix.push(tok);
            }
            prop_assert_eq!(b.attention.steps(), b.hypothesis.len());
            prop_assert!(b.score <= 0.0);
        }
    }
}
