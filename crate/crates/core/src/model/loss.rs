use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::attention::AttentionRecord;
use super::graph::{Graph, NodeId};
use crate::text::PAD;

/// Which decoder layer's cross-attention the alignment loss supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignLayer {
    Layer(usize),
    #[default]
    Average,
}

/// Mean negative log-likelihood of `target` under row-wise softmax of
/// `logits`, skipping PAD positions.
pub fn sequence_nll(logits: &Array2<f64>, target: &[usize]) -> f64 {
    assert_eq!(logits.nrows(), target.len(), "logits/target length mismatch");
    let mut total = 0.0;
    let mut counted = 0usize;
    for (row, &t) in logits.rows().into_iter().zip(target) {
        if t == PAD {
            continue;
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Discrete Gaussian over `0..len` centred at `centre`, normalised to sum 1.
pub fn gaussian_target(len: usize, centre: usize, sigma: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..len)
        .map(|j| {
            let d = j as f64 - centre as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let z: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= z);
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlignLoss {
    pub value: f64,
    /// Annotations that fell outside the decoder or encoder window.
    pub skipped: usize,
    pub used: usize,
}

fn select_layer_row(attn: &AttentionRecord, step: usize, layer: AlignLayer) -> Vec<f64> {
    let layers: Vec<usize> = match layer {
        AlignLayer::Layer(k) => vec![k],
        AlignLayer::Average => (0..attn.layers()).collect(),
    };
    let mut row = vec![0.0; attn.enc_len()];
    let n = (layers.len() * attn.heads()) as f64;
    for &l in &layers {
        for h in 0..attn.heads() {
            for (dst, v) in row.iter_mut().zip(attn.row(step, l, h)) {
                *dst += v / n;
            }
        }
    }
    row
}

/// Squared L2 distance between the head-averaged attention row at `step`
/// and a Gaussian target centred on `enc`.
pub fn target_sq_distance(attn: &AttentionRecord, step: usize, enc: usize, sigma: f64, layer: AlignLayer) -> f64 {
    let row = select_layer_row(attn, step, layer);
    let target = gaussian_target(attn.enc_len(), enc, sigma);
    row.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Mean squared error between head-averaged attention rows and Gaussian
/// targets, over every position of every annotated `(dec_step, enc_index)`.
pub fn alignment_loss(attn: &AttentionRecord, annotations: &[(usize, usize)], sigma: f64, layer: AlignLayer) -> AlignLoss {
    let mut out = AlignLoss::default();
    for &(step, enc) in annotations {
        if step >= attn.steps() || enc >= attn.enc_len() {
            out.skipped += 1;
            continue;
        }
        out.value += target_sq_distance(attn, step, enc, sigma, layer);
        out.used += 1;
    }
    if out.used > 0 {
        out.value /= (out.used * attn.enc_len()) as f64;
    }
    out
}

/// Graph version of [`alignment_loss`] over `[layer][head]` attention nodes.
/// Returns `None` when no annotation falls inside the window.
pub fn alignment_loss_node(
    g: &mut Graph,
    cross: &[Vec<NodeId>],
    annotations: &[(usize, usize)],
    sigma: f64,
    layer: AlignLayer,
) -> (Option<NodeId>, AlignLoss) {
    let mut tally = AlignLoss::default();
    if annotations.is_empty() || cross.is_empty() {
        return (None, tally);
    }
    let (steps, enc_len) = g.value(cross[0][0]).dim();
    let valid: Vec<(usize, usize)> = annotations
        .iter()
        .copied()
        .filter(|&(s, e)| s < steps && e < enc_len)
        .collect();
    tally.skipped = annotations.len() - valid.len();
    tally.used = valid.len();
    if valid.is_empty() {
        return (None, tally);
    }
    let parts: Vec<NodeId> = match layer {
        AlignLayer::Layer(k) => cross[k].clone(),
        AlignLayer::Average => cross.iter().flatten().copied().collect(),
    };
    let avg = g.mean(&parts);
    let rows: Vec<usize> = valid.iter().map(|&(s, _)| s).collect();
    let picked = g.select_rows(avg, &rows);
    let mut target = Array2::<f64>::zeros((valid.len(), enc_len));
    for (i, &(_, e)) in valid.iter().enumerate() {
        for (dst, v) in target.row_mut(i).iter_mut().zip(gaussian_target(enc_len, e, sigma)) {
            *dst = v;
        }
    }
    let t = g.constant(target);
    let diff = g.sub(picked, t);
    let sum = g.sum_squares(diff);
    let loss = g.scale(sum, 1.0 / (valid.len() * enc_len) as f64);
    tally.value = g.scalar(loss);
    (Some(loss), tally)
}
