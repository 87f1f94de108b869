//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! Every value on the tape is a 2-D `f64` matrix; vectors are `1 × n` and
//! scalars are `1 × 1`. Operations are appended to a [`Graph`] in evaluation
//! order, so the tape is already topologically sorted and [`Graph::backward`]
//! is a single reverse sweep.
//!
//! Parameters are borrowed from a [`ParamStore`] rather than copied onto the
//! tape. Gradients for them are returned as a [`ParamGrads`] with the same
//! layout as the store.

use ndarray::{s, Array2, Axis};

use super::params::{ParamGrads, ParamStore};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Which keys a query row may attend to in [`Graph::attention_softmax`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMask {
    /// Every key visible.
    None,
    /// Query `i` sees keys `0..=i`.
    Causal,
    /// Only the first `n` keys are visible (padding beyond them).
    KeyPrefix(usize),
}

enum Op {
    Constant,
    Param(usize),
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// `a + 1ᵀb` where `b` is `1 × n`.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        normed: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        table: NodeId,
        rows: Vec<usize>,
    },
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    SelectRows {
        x: NodeId,
        rows: Vec<usize>,
    },
    Mean(Vec<NodeId>),
    SumSquares(NodeId),
    SumScalars(Vec<NodeId>),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        probs: Array2<f64>,
        counted: usize,
    },
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
}

pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
        }
    }

    /// A tape without parameters; only constants and derived nodes.
    pub fn detached() -> Graph<'static> {
        Graph {
            params: None,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(i)) => {
                &self
                    .params
                    .expect("parameter node on a detached graph")
                    .tensors()[*i]
            }
            _ => unreachable!("node without a value"),
        }
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        let store = self.params.expect("parameter requested on a detached graph");
        assert!(index < store.len(), "parameter index {index} out of range");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(index),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a 1 × n row");
        let v = self.value(a) + r;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Row-wise softmax. Masked entries are exactly zero.
    pub fn attention_softmax(&mut self, scores: NodeId, mask: AttnMask) -> NodeId {
        let x = self.value(scores);
        let mut out = Array2::<f64>::zeros(x.raw_dim());
        for (i, (row, mut dst)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let visible = match mask {
                AttnMask::None => row.len(),
                AttnMask::Causal => (i + 1).min(row.len()),
                AttnMask::KeyPrefix(n) => n.min(row.len()),
            };
            assert!(visible > 0, "attention row {i} has no visible key");
            let max = row
                .iter()
                .take(visible)
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut total = 0.0;
            for j in 0..visible {
                let e = (row[j] - max).exp();
                dst[j] = e;
                total += e;
            }
            for j in 0..visible {
                dst[j] /= total;
            }
        }
        self.push(out, Op::Softmax(scores))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        const EPS: f64 = 1e-5;
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut normed = Array2::<f64>::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (row, mut dst) in xv.rows().into_iter().zip(normed.rows_mut()) {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std.push(inv);
            for (d, &v) in dst.iter_mut().zip(row.iter()) {
                *d = (v - mean) * inv;
            }
        }
        let out = &normed * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    /// Rows of `table` picked by `rows` (embedding lookup).
    pub fn gather(&mut self, table: NodeId, rows: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut out = Array2::<f64>::zeros((rows.len(), t.ncols()));
        for (mut dst, &r) in out.rows_mut().into_iter().zip(rows) {
            dst.assign(&t.row(r));
        }
        self.push(
            out,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn select_rows(&mut self, x: NodeId, rows: &[usize]) -> NodeId {
        let v = self.value(x).select(Axis(0), rows);
        self.push(
            v,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Element-wise mean of same-shaped nodes.
    pub fn mean(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            acc += self.value(p);
        }
        acc /= parts.len() as f64;
        self.push(acc, Op::Mean(parts.to_vec()))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().map(|v| v * v).sum::<f64>();
        self.push(Array2::from_elem((1, 1), s), Op::SumSquares(x))
    }

    pub fn sum_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        let s = parts.iter().map(|&p| self.scalar(p)).sum::<f64>();
        self.push(Array2::from_elem((1, 1), s), Op::SumScalars(parts.to_vec()))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. `None` targets (padding) are excluded from the mean.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "cross_entropy: length mismatch");
        let mut probs = Array2::<f64>::zeros(lv.raw_dim());
        let mut total = 0.0;
        let mut counted = 0;
        for ((row, mut p), target) in lv.rows().into_iter().zip(probs.rows_mut()).zip(targets) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut z = 0.0;
            for (dst, &v) in p.iter_mut().zip(row.iter()) {
                *dst = (v - max).exp();
                z += *dst;
            }
            p /= z;
            if let Some(t) = *target {
                total += -(row[t] - max - z.ln());
                counted += 1;
            }
        }
        let loss = if counted == 0 { 0.0 } else { total / counted as f64 };
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                counted,
            },
        )
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> ParamGrads {
        let store = self.params;
        let mut param_grads = match store {
            Some(s) => ParamGrads::zeros_like(s),
            None => ParamGrads::default(),
        };
        let mut grads: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => param_grads.accumulate(*p, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g * *k),
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = Array2::<f64>::zeros(y.raw_dim());
                    for ((yr, gr), mut dst) in y.rows().into_iter().zip(g.rows()).zip(ga.rows_mut()) {
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in dst.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *d = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let gain_v = self.value(*gain);
                    let g_gain = (&g * normed).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let g_bias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let d_normed = &g * gain_v;
                    let cols = normed.ncols() as f64;
                    let mut gx = Array2::<f64>::zeros(normed.raw_dim());
                    for (r, mut dst) in gx.rows_mut().into_iter().enumerate() {
                        let dn = d_normed.row(r);
                        let nr = normed.row(r);
                        let mean_dn = dn.sum() / cols;
                        let mean_dn_n = dn.iter().zip(nr.iter()).map(|(a, b)| a * b).sum::<f64>() / cols;
                        for ((d, &dnv), &nv) in dst.iter_mut().zip(dn.iter()).zip(nr.iter()) {
                            *d = inv_std[r] * (dnv - mean_dn - nv * mean_dn_n);
                        }
                    }
                    accumulate(&mut grads, *gain, g_gain);
                    accumulate(&mut grads, *bias, g_bias);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gather { table, rows } => {
                    let mut gt = Array2::<f64>::zeros(self.value(*table).raw_dim());
                    for (gr, &r) in g.rows().into_iter().zip(rows) {
                        let mut dst = gt.row_mut(r);
                        dst += &gr;
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::SliceCols(x, start) => {
                    let mut gx = Array2::<f64>::zeros(self.value(*x).raw_dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(&mut grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::SelectRows { x, rows } => {
                    let mut gx = Array2::<f64>::zeros(self.value(*x).raw_dim());
                    for (gr, &r) in g.rows().into_iter().zip(rows) {
                        let mut dst = gx.row_mut(r);
                        dst += &gr;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mean(parts) => {
                    let share = &g / parts.len() as f64;
                    for &p in parts {
                        accumulate(&mut grads, p, share.clone());
                    }
                }
                Op::SumSquares(x) => {
                    let gx = self.value(*x) * (2.0 * g[[0, 0]]);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumScalars(parts) => {
                    for &p in parts {
                        accumulate(&mut grads, p, g.clone());
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    counted,
                } => {
                    let mut gl = Array2::<f64>::zeros(probs.raw_dim());
                    if *counted > 0 {
                        let k = g[[0, 0]] / *counted as f64;
                        for ((mut dst, pr), target) in gl.rows_mut().into_iter().zip(probs.rows()).zip(targets) {
                            if let Some(t) = *target {
                                dst.assign(&pr);
                                dst[t] -= 1.0;
                                dst *= k;
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        param_grads
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
