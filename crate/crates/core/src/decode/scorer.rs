use ndarray::Array2;

use crate::corpus::SubtitledClip;
use crate::error::Result;
use crate::model::{AttentionRecord, Graph, Transformer};
use crate::text::{BOS, PAD};

/// Next-token log-probabilities after every prefix position.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScores {
    /// `len(prefix) × vocab`; row `t` scores the token following `prefix[..=t]`.
    /// PAD and BOS are always `-inf`.
    pub log_probs: Array2<f64>,
    pub attention: AttentionRecord,
}

/// An autoregressive model conditioned on one fixed input sequence.
pub trait SequenceScorer: Sync {
    /// Maximum number of decoded tokens.
    fn max_steps(&self) -> usize;

    /// `(layers, heads, T_enc)` of the attention this scorer records.
    fn attention_shape(&self) -> (usize, usize, usize);

    /// Scores a prefix that starts with BOS.
    fn score_prefix(&self, prefix: &[usize]) -> Result<StepScores>;
}

/// Row-wise log-softmax with PAD and BOS masked out.
pub(crate) fn log_softmax_masked(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        row[PAD] = f64::NEG_INFINITY;
        row[BOS] = f64::NEG_INFINITY;
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// A frozen Transformer with one clip already encoded.
pub struct ClipScorer<'m> {
    model: &'m Transformer,
    memory: Array2<f64>,
    valid_len: usize,
}

impl<'m> ClipScorer<'m> {
    pub fn new(model: &'m Transformer, features: &Array2<f64>) -> Result<Self> {
        let mut g = model.graph();
        let memory = model.encode(&mut g, features, features.nrows(), None)?;
        Ok(Self {
            model,
            memory: g.value(memory).clone(),
            valid_len: features.nrows(),
        })
    }

    pub fn for_clip(model: &'m Transformer, clip: &SubtitledClip) -> Result<Self> {
        Self::new(model, &clip.features.to_f64())
    }
}

impl SequenceScorer for ClipScorer<'_> {
    fn max_steps(&self) -> usize {
        self.model.config().max_dec_len
    }

    fn attention_shape(&self) -> (usize, usize, usize) {
        let c = self.model.config();
        (c.n_layers, c.n_heads, self.memory.nrows())
    }

    fn score_prefix(&self, prefix: &[usize]) -> Result<StepScores> {
        let mut g: Graph = self.model.graph();
        let memory = g.constant(self.memory.clone());
        let out = self.model.decode(&mut g, memory, self.valid_len, prefix, None)?;
        Ok(StepScores {
            log_probs: log_softmax_masked(g.value(out.logits)),
            attention: AttentionRecord::from_graph(&g, &out.cross_attention),
        })
    }
}
