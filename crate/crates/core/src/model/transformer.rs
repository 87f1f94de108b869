//! Encoder-decoder Transformer over continuous feature streams.
//!
//! Pre-norm residual blocks, sinusoidal positions, multi-head attention with
//! the encoder-decoder attention probabilities exposed on every forward pass.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionRecord;
use super::graph::{AttnMask, Graph, NodeId};
use super::params::{normal, xavier, ParamStore};
use crate::error::{Error, Result};
use crate::text::BOS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature dimension of the input stream.
    pub input_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Number of encoder layers, and of decoder layers.
    pub n_layers: usize,
    pub feedforward_dim: usize,
    pub dropout_prob: f64,
    pub max_enc_len: usize,
    pub max_dec_len: usize,
    /// Output vocabulary size including the PAD/BOS/EOS specials.
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 1024,
            d_model: 512,
            n_heads: 2,
            n_layers: 2,
            feedforward_dim: 2048,
            dropout_prob: 0.1,
            max_enc_len: 512,
            max_dec_len: 32,
            vocab_size: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::config("n_layers must be at least 1"));
        }
        if self.input_dim == 0 || self.feedforward_dim == 0 {
            return Err(Error::config("input_dim and feedforward_dim must be positive"));
        }
        if self.vocab_size < 4 {
            return Err(Error::config(format!(
                "vocab_size {} leaves no room beside PAD/BOS/EOS",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::config("dropout_prob must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttnParams {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    norm_attn: Norm,
    attn: AttnParams,
    norm_ff: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    norm_self: Norm,
    self_attn: AttnParams,
    norm_cross: Norm,
    cross_attn: AttnParams,
    norm_ff: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct Layout {
    input: Linear,
    embed: usize,
    encoder: Vec<EncoderLayer>,
    encoder_norm: Norm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Norm,
    output: Linear,
}

impl Layout {
    fn resolve(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let idx = |name: String| {
            store
                .index_of(&name)
                .ok_or_else(|| Error::contract(format!("missing parameter tensor {name}")))
        };
        let linear = |p: &str| -> Result<Linear> {
            Ok(Linear {
                w: idx(format!("{p}.w"))?,
                b: idx(format!("{p}.b"))?,
            })
        };
        let norm = |p: &str| -> Result<Norm> {
            Ok(Norm {
                gain: idx(format!("{p}.gain"))?,
                bias: idx(format!("{p}.bias"))?,
            })
        };
        let attn = |p: &str| -> Result<AttnParams> {
            Ok(AttnParams {
                q: linear(&format!("{p}.q"))?,
                k: linear(&format!("{p}.k"))?,
                v: linear(&format!("{p}.v"))?,
                out: linear(&format!("{p}.out"))?,
            })
        };
        let ff = |p: &str| -> Result<FeedForward> {
            Ok(FeedForward {
                up: linear(&format!("{p}.up"))?,
                down: linear(&format!("{p}.down"))?,
            })
        };
        let encoder = (0..cfg.n_layers)
            .map(|l| {
                Ok(EncoderLayer {
                    norm_attn: norm(&format!("enc.{l}.norm_attn"))?,
                    attn: attn(&format!("enc.{l}.attn"))?,
                    norm_ff: norm(&format!("enc.{l}.norm_ff"))?,
                    ff: ff(&format!("enc.{l}.ff"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..cfg.n_layers)
            .map(|l| {
                Ok(DecoderLayer {
                    norm_self: norm(&format!("dec.{l}.norm_self"))?,
                    self_attn: attn(&format!("dec.{l}.self_attn"))?,
                    norm_cross: norm(&format!("dec.{l}.norm_cross"))?,
                    cross_attn: attn(&format!("dec.{l}.cross_attn"))?,
                    norm_ff: norm(&format!("dec.{l}.norm_ff"))?,
                    ff: ff(&format!("dec.{l}.ff"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Layout {
            input: linear("input")?,
            embed: idx("embed".to_string())?,
            encoder,
            encoder_norm: norm("enc.norm")?,
            decoder,
            decoder_norm: norm("dec.norm")?,
            output: linear("output")?,
        })
    }
}

fn init_params<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> ParamStore {
    let d = cfg.d_model;
    let mut store = ParamStore::default();
    let linear = |store: &mut ParamStore, rng: &mut R, name: &str, fan_in: usize, fan_out: usize| {
        store.push(format!("{name}.w"), xavier(rng, fan_in, fan_out));
        store.push(format!("{name}.b"), Array2::zeros((1, fan_out)));
    };
    let norm = |store: &mut ParamStore, name: &str| {
        store.push(format!("{name}.gain"), Array2::ones((1, d)));
        store.push(format!("{name}.bias"), Array2::zeros((1, d)));
    };

    linear(&mut store, rng, "input", cfg.input_dim, d);
    store.push("embed", normal(rng, cfg.vocab_size, d, (d as f64).powf(-0.5)));
    for l in 0..cfg.n_layers {
        norm(&mut store, &format!("enc.{l}.norm_attn"));
        for part in ["q", "k", "v", "out"] {
            linear(&mut store, rng, &format!("enc.{l}.attn.{part}"), d, d);
        }
        norm(&mut store, &format!("enc.{l}.norm_ff"));
        linear(&mut store, rng, &format!("enc.{l}.ff.up"), d, cfg.feedforward_dim);
        linear(&mut store, rng, &format!("enc.{l}.ff.down"), cfg.feedforward_dim, d);
    }
    norm(&mut store, "enc.norm");
    for l in 0..cfg.n_layers {
        norm(&mut store, &format!("dec.{l}.norm_self"));
        for part in ["q", "k", "v", "out"] {
            linear(&mut store, rng, &format!("dec.{l}.self_attn.{part}"), d, d);
        }
        norm(&mut store, &format!("dec.{l}.norm_cross"));
        for part in ["q", "k", "v", "out"] {
            linear(&mut store, rng, &format!("dec.{l}.cross_attn.{part}"), d, d);
        }
        norm(&mut store, &format!("dec.{l}.norm_ff"));
        linear(&mut store, rng, &format!("dec.{l}.ff.up"), d, cfg.feedforward_dim);
        linear(&mut store, rng, &format!("dec.{l}.ff.down"), cfg.feedforward_dim, d);
    }
    norm(&mut store, "dec.norm");
    linear(&mut store, rng, "output", d, cfg.vocab_size);
    store
}

/// Sinusoidal position table, `len × d`.
pub fn positional_encoding(len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Inverted dropout with its own RNG stream.
pub struct Dropout {
    prob: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(prob: f64, seed: u64) -> Self {
        Self {
            prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply(&mut self, g: &mut Graph, x: NodeId) -> NodeId {
        if self.prob <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.prob;
        let dim = g.value(x).raw_dim();
        let mask = Array2::from_shape_simple_fn(dim, || {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = g.constant(mask);
        g.mul(x, m)
    }
}

fn maybe_dropout(dropout: &mut Option<&mut Dropout>, g: &mut Graph, x: NodeId) -> NodeId {
    match dropout {
        Some(d) => d.apply(g, x),
        None => x,
    }
}

/// Node handles produced by one decoder pass.
pub struct DecoderOutput {
    /// `T_dec × vocab_size` logits.
    pub logits: NodeId,
    /// Encoder-decoder attention probabilities, `[layer][head]`, each `T_dec × T_enc`.
    pub cross_attention: Vec<Vec<NodeId>>,
}

#[derive(Debug, Clone)]
pub struct Transformer {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Transformer {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config, &mut rng);
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let fresh = init_params(&config, &mut ChaCha8Rng::seed_from_u64(0));
        if fresh.names() != params.names() {
            return Err(Error::contract("parameter names do not match the model configuration"));
        }
        for (name, (a, b)) in params.names().iter().zip(fresh.tensors().iter().zip(params.tensors())) {
            if a.dim() != b.dim() {
                return Err(Error::contract(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    b.dim(),
                    a.dim()
                )));
            }
        }
        let layout = Layout::resolve(&config, &params)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::new(&self.params)
    }

    fn linear(&self, g: &mut Graph, x: NodeId, p: Linear) -> NodeId {
        let w = g.param(p.w);
        let b = g.param(p.b);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }

    fn norm(&self, g: &mut Graph, x: NodeId, p: Norm) -> NodeId {
        let gain = g.param(p.gain);
        let bias = g.param(p.bias);
        g.layer_norm(x, gain, bias)
    }

    fn feed_forward(&self, g: &mut Graph, x: NodeId, p: FeedForward, dropout: &mut Option<&mut Dropout>) -> NodeId {
        let h = self.linear(g, x, p.up);
        let h = g.relu(h);
        let h = maybe_dropout(dropout, g, h);
        self.linear(g, h, p.down)
    }

    /// Multi-head attention; returns the merged output and per-head probabilities.
    fn attention(
        &self,
        g: &mut Graph,
        query_in: NodeId,
        kv_in: NodeId,
        p: AttnParams,
        mask: AttnMask,
        dropout: &mut Option<&mut Dropout>,
    ) -> (NodeId, Vec<NodeId>) {
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.linear(g, query_in, p.q);
        let k = self.linear(g, kv_in, p.k);
        let v = self.linear(g, kv_in, p.v);
        let mut heads = Vec::with_capacity(self.config.n_heads);
        let mut probs = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let a = g.attention_softmax(scores, mask);
            probs.push(a);
            let a = maybe_dropout(dropout, g, a);
            heads.push(g.matmul(a, vh));
        }
        let merged = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        (self.linear(g, merged, p.out), probs)
    }

    fn check_encoder_input(&self, features: &Array2<f64>, valid_len: usize) -> Result<()> {
        let (t, d) = features.dim();
        if d != self.config.input_dim {
            return Err(Error::contract(format!(
                "feature dimension {d} does not match model input_dim {}",
                self.config.input_dim
            )));
        }
        if t == 0 || t > self.config.max_enc_len {
            return Err(Error::contract(format!(
                "encoder length {t} outside 1..={}",
                self.config.max_enc_len
            )));
        }
        if valid_len == 0 || valid_len > t {
            return Err(Error::contract(format!("valid length {valid_len} outside 1..={t}")));
        }
        Ok(())
    }

    /// Encodes `features` (`T_enc × input_dim`); rows at and beyond
    /// `valid_len` are padding and never attended to.
    pub fn encode(
        &self,
        g: &mut Graph,
        features: &Array2<f64>,
        valid_len: usize,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<NodeId> {
        self.check_encoder_input(features, valid_len)?;
        let d = self.config.d_model;
        let x = g.constant(features.clone());
        let h = self.linear(g, x, self.layout.input);
        let pe = g.constant(positional_encoding(features.nrows(), d));
        let mut h = g.add(h, pe);
        h = maybe_dropout(&mut dropout, g, h);
        let mask = if valid_len < features.nrows() {
            AttnMask::KeyPrefix(valid_len)
        } else {
            AttnMask::None
        };
        for layer in &self.layout.encoder {
            let n = self.norm(g, h, layer.norm_attn);
            let (a, _) = self.attention(g, n, n, layer.attn, mask, &mut dropout);
            let a = maybe_dropout(&mut dropout, g, a);
            h = g.add(h, a);
            let n = self.norm(g, h, layer.norm_ff);
            let f = self.feed_forward(g, n, layer.ff, &mut dropout);
            let f = maybe_dropout(&mut dropout, g, f);
            h = g.add(h, f);
        }
        Ok(self.norm(g, h, self.layout.encoder_norm))
    }

    /// Runs the decoder on `prefix` (starting with BOS) against an encoded memory.
    pub fn decode(
        &self,
        g: &mut Graph,
        memory: NodeId,
        enc_valid_len: usize,
        prefix: &[usize],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<DecoderOutput> {
        if prefix.first() != Some(&BOS) {
            return Err(Error::contract("decoder prefix must begin with BOS"));
        }
        if prefix.len() > self.config.max_dec_len {
            return Err(Error::contract(format!(
                "decoder prefix length {} exceeds max_dec_len {}",
                prefix.len(),
                self.config.max_dec_len
            )));
        }
        if let Some(&bad) = prefix.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::contract(format!("token id {bad} outside vocabulary")));
        }
        let d = self.config.d_model;
        let t_enc = g.value(memory).nrows();
        let cross_mask = if enc_valid_len < t_enc {
            AttnMask::KeyPrefix(enc_valid_len)
        } else {
            AttnMask::None
        };
        let emb_table = g.param(self.layout.embed);
        let e = g.gather(emb_table, prefix);
        let e = g.scale(e, (d as f64).sqrt());
        let pe = g.constant(positional_encoding(prefix.len(), d));
        let mut h = g.add(e, pe);
        h = maybe_dropout(&mut dropout, g, h);
        let mut cross = Vec::with_capacity(self.layout.decoder.len());
        for layer in &self.layout.decoder {
            let n = self.norm(g, h, layer.norm_self);
            let (a, _) = self.attention(g, n, n, layer.self_attn, AttnMask::Causal, &mut dropout);
            let a = maybe_dropout(&mut dropout, g, a);
            h = g.add(h, a);
            let n = self.norm(g, h, layer.norm_cross);
            let (a, probs) = self.attention(g, n, memory, layer.cross_attn, cross_mask, &mut dropout);
            cross.push(probs);
            let a = maybe_dropout(&mut dropout, g, a);
            h = g.add(h, a);
            let n = self.norm(g, h, layer.norm_ff);
            let f = self.feed_forward(g, n, layer.ff, &mut dropout);
            let f = maybe_dropout(&mut dropout, g, f);
            h = g.add(h, f);
        }
        let h = self.norm(g, h, self.layout.decoder_norm);
        let logits = self.linear(g, h, self.layout.output);
        Ok(DecoderOutput {
            logits,
            cross_attention: cross,
        })
    }

    /// Inference forward pass without dropout: logits (`T_dec × vocab`) and
    /// the encoder-decoder attention record for every prefix position.
    pub fn forward(&self, features: &Array2<f64>, prefix: &[usize]) -> Result<(Array2<f64>, AttentionRecord)> {
        self.forward_masked(features, features.nrows(), prefix)
    }

    /// As [`Transformer::forward`], with rows from `valid_len` on treated as padding.
    pub fn forward_masked(
        &self,
        features: &Array2<f64>,
        valid_len: usize,
        prefix: &[usize],
    ) -> Result<(Array2<f64>, AttentionRecord)> {
        let mut g = self.graph();
        let memory = self.encode(&mut g, features, valid_len, None)?;
        let out = self.decode(&mut g, memory, valid_len, prefix, None)?;
        let record = AttentionRecord::from_graph(&g, &out.cross_attention);
        Ok((g.value(out.logits).clone(), record))
    }
}
