use ndarray::Array2;

use super::graph::{Graph, NodeId};

/// Encoder-decoder attention for one sequence: `T_dec × layers × heads × T_enc`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    steps: usize,
    layers: usize,
    heads: usize,
    enc_len: usize,
    data: Vec<f64>,
}

impl AttentionRecord {
    pub fn empty(layers: usize, heads: usize, enc_len: usize) -> Self {
        Self {
            steps: 0,
            layers,
            heads,
            enc_len,
            data: Vec::new(),
        }
    }

    /// Builds a record from `[layer][head]` probability nodes, each `T_dec × T_enc`.
    pub fn from_graph(g: &Graph, nodes: &[Vec<NodeId>]) -> Self {
        let layers = nodes.len();
        let heads = nodes.first().map_or(0, Vec::len);
        let (steps, enc_len) = g.value(nodes[0][0]).dim();
        let mut data = vec![0.0; steps * layers * heads * enc_len];
        for (l, layer) in nodes.iter().enumerate() {
            for (h, &id) in layer.iter().enumerate() {
                let m = g.value(id);
                for t in 0..steps {
                    let off = ((t * layers + l) * heads + h) * enc_len;
                    for (dst, &v) in data[off..off + enc_len].iter_mut().zip(m.row(t).iter()) {
                        *dst = v;
                    }
                }
            }
        }
        Self {
            steps,
            layers,
            heads,
            enc_len,
            data,
        }
    }

    /// Builds a record from `[step][layer][head]` rows.
    pub fn from_rows(rows: Vec<Vec<Vec<Vec<f64>>>>) -> Self {
        let steps = rows.len();
        let layers = rows.first().map_or(0, Vec::len);
        let heads = rows.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let enc_len = rows
            .first()
            .and_then(|r| r.first())
            .and_then(|h| h.first())
            .map_or(0, Vec::len);
        let mut data = Vec::with_capacity(steps * layers * heads * enc_len);
        for step in rows {
            assert_eq!(step.len(), layers, "ragged layer count");
            for layer in step {
                assert_eq!(layer.len(), heads, "ragged head count");
                for row in layer {
                    assert_eq!(row.len(), enc_len, "ragged encoder length");
                    data.extend(row);
                }
            }
        }
        Self {
            steps,
            layers,
            heads,
            enc_len,
            data,
        }
    }

    /// `(T_dec, layers, heads, T_enc)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.steps, self.layers, self.heads, self.enc_len)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn enc_len(&self) -> usize {
        self.enc_len
    }

    pub fn row(&self, step: usize, layer: usize, head: usize) -> &[f64] {
        let off = ((step * self.layers + layer) * self.heads + head) * self.enc_len;
        &self.data[off..off + self.enc_len]
    }

    /// Keeps only the first `n` decoding steps.
    pub fn truncate(&mut self, n: usize) {
        if n < self.steps {
            self.steps = n;
            self.data.truncate(n * self.layers * self.heads * self.enc_len);
        }
    }

    /// Appends the last step of `other`, which must share layer/head/encoder sizes.
    pub fn push_last_step(&mut self, other: &AttentionRecord) {
        assert_eq!(
            (self.layers, self.heads, self.enc_len),
            (other.layers, other.heads, other.enc_len)
        );
        assert!(other.steps > 0);
        let stride = self.layers * self.heads * self.enc_len;
        let off = (other.steps - 1) * stride;
        self.data.extend_from_slice(&other.data[off..off + stride]);
        self.steps += 1;
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_normalisation_error(&self) -> f64 {
        if self.enc_len == 0 {
            return 0.0;
        }
        self.data
            .chunks(self.enc_len)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Head-averaged rows of one layer, `T_dec × T_enc`.
    pub fn layer_mean(&self, layer: usize) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((self.steps, self.enc_len));
        for t in 0..self.steps {
            for h in 0..self.heads {
                for (dst, v) in out.row_mut(t).iter_mut().zip(self.row(t, layer, h)) {
                    *dst += v;
                }
            }
        }
        out / self.heads as f64
    }
}
