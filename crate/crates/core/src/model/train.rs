//! Teacher-forced training with optional attention supervision and curriculum.

use std::collections::HashMap;
use std::path::Path;

use log::{debug, info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{alignment_loss_node, AlignLayer, AlignLoss};
use super::optim::{clip_grad_norm, Adam, AdamConfig, LrSchedule};
use super::params::ParamGrads;
use super::transformer::{Dropout, ModelConfig, Transformer};
use crate::corpus::{trim_to_annotations, Corpus, SubtitledClip, TokenSpace};
use crate::error::{Error, Result};
use crate::text::{BOS, EOS};

/// Stage `i` (0-based) trains on windows around `i + 1` annotations for
/// `stage_epochs[i]` epochs; full clips afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Curriculum {
    pub stage_epochs: Vec<usize>,
    pub margin_frames: u32,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self {
            stage_epochs: vec![5, 5, 5],
            margin_frames: 17,
        }
    }
}

impl Curriculum {
    /// Number of annotations per window at `epoch`, or `None` for full clips.
    pub fn annotations_at(&self, epoch: usize) -> Option<usize> {
        let mut end = 0;
        for (i, &n) in self.stage_epochs.iter().enumerate() {
            end += n;
            if epoch < end {
                return Some(i + 1);
            }
        }
        None
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::constant(1e-4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: LrSchedule,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the alignment term; 0 disables it.
    pub align_loss_weight: f64,
    pub align_loss_layer: AlignLayer,
    /// Gaussian width in feature frames.
    pub align_sigma: f64,
    pub curriculum: Option<Curriculum>,
    pub max_grad_norm: Option<f64>,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: LrSchedule::default(),
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 20,
            align_loss_weight: 0.0,
            align_loss_layer: AlignLayer::Average,
            align_sigma: 1.0,
            curriculum: None,
            max_grad_norm: None,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        self.lr.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.align_loss_weight >= 0.0 && self.align_loss_weight.is_finite()) {
            return Err(Error::config("align_loss_weight must be a finite non-negative number"));
        }
        if !(self.align_sigma > 0.0) {
            return Err(Error::config("align_sigma must be positive"));
        }
        if let AlignLayer::Layer(k) = self.align_loss_layer {
            if k >= model.n_layers {
                return Err(Error::config(format!("align layer {k} >= n_layers {}", model.n_layers)));
            }
        }
        if let Some(max) = self.max_grad_norm {
            if !(max > 0.0) {
                return Err(Error::config("max_grad_norm must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub nll: f64,
    pub align_loss: f64,
    pub total: f64,
    pub lr: f64,
    pub examples: usize,
    /// Curriculum annotation count for this epoch, `None` for full clips.
    pub stage: Option<usize>,
    pub align_skipped: usize,
}

/// One teacher-forced training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub clip_id: String,
    pub features: Array2<f64>,
    /// Reference tokens followed by EOS.
    pub target: Vec<usize>,
    /// `(decoder step, encoder index)` for each locatable annotation.
    pub align: Vec<(usize, usize)>,
    /// Annotations that could not be placed in the decoder/encoder window.
    pub align_skipped: usize,
}

impl TrainExample {
    /// BOS followed by the target without its final EOS.
    pub fn decoder_input(&self) -> Vec<usize> {
        let mut p = Vec::with_capacity(self.target.len());
        p.push(BOS);
        p.extend_from_slice(&self.target[..self.target.len() - 1]);
        p
    }
}

/// Builds a training example, truncating the reference to fit
/// `max_dec_len`. Returns `None` when the clip is longer than `max_enc_len`.
pub fn prepare_example(clip: &SubtitledClip, cfg: &ModelConfig) -> Option<TrainExample> {
    if clip.features.len() > cfg.max_enc_len || cfg.max_dec_len == 0 {
        return None;
    }
    let mut tokens = clip.token_ids();
    tokens.truncate(cfg.max_dec_len - 1);
    let mut used = vec![false; tokens.len()];
    let mut anns: Vec<_> = clip.annotations.iter().collect();
    anns.sort_by_key(|a| a.frame_time);
    let mut align = Vec::new();
    let mut skipped = 0;
    for a in anns {
        let step = tokens.iter().zip(&used).position(|(&t, &u)| t == a.token_id && !u);
        match (step, clip.enc_index(a.frame_time)) {
            (Some(s), Some(e)) => {
                used[s] = true;
                align.push((s, e));
            }
            _ => skipped += 1,
        }
    }
    tokens.push(EOS);
    Some(TrainExample {
        clip_id: clip.id.clone(),
        features: clip.features.to_f64(),
        target: tokens,
        align,
        align_skipped: skipped,
    })
}

/// Loss values for one example.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExampleLoss {
    pub nll: f64,
    pub align: AlignLoss,
    pub total: f64,
}

/// Forward and backward pass for one example. With `align_weight == 0` the
/// alignment value is still measured but contributes nothing to the total.
pub fn example_gradients(
    model: &Transformer,
    ex: &TrainExample,
    cfg: &TrainConfig,
    dropout_seed: Option<u64>,
) -> Result<(ExampleLoss, ParamGrads)> {
    let mut g = model.graph();
    let mut dropout = dropout_seed.map(|s| Dropout::new(model.config().dropout_prob, s));
    let t_enc = ex.features.nrows();
    let memory = model.encode(&mut g, &ex.features, t_enc, dropout.as_mut())?;
    let out = model.decode(&mut g, memory, t_enc, &ex.decoder_input(), dropout.as_mut())?;
    let targets: Vec<Option<usize>> = ex.target.iter().map(|&t| Some(t)).collect();
    let nll = g.cross_entropy(out.logits, &targets);
    let (align_node, mut align) =
        alignment_loss_node(&mut g, &out.cross_attention, &ex.align, cfg.align_sigma, cfg.align_loss_layer);
    align.skipped += ex.align_skipped;
    let total = match align_node {
        Some(a) if cfg.align_loss_weight > 0.0 => {
            let weighted = g.scale(a, cfg.align_loss_weight);
            g.sum_scalars(&[nll, weighted])
        }
        _ => nll,
    };
    let loss = ExampleLoss {
        nll: g.scalar(nll),
        align,
        total: g.scalar(total),
    };
    let grads = g.backward(total);
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Transformer,
    pub log: Vec<EpochLog>,
}

/// Checks that `corpus` is vocabulary-encoded and compatible with `cfg`.
pub fn check_corpus(corpus: &Corpus, cfg: &ModelConfig) -> Result<()> {
    if corpus.token_space != TokenSpace::Vocabulary {
        return Err(Error::config("training requires a vocabulary-encoded corpus"));
    }
    if corpus.lexicon.len() != cfg.vocab_size {
        return Err(Error::config(format!(
            "corpus vocabulary has {} ids but the model expects {}",
            corpus.lexicon.len(),
            cfg.vocab_size
        )));
    }
    if let Some(c) = corpus.clips.iter().find(|c| c.features.dim() != cfg.input_dim) {
        return Err(Error::config(format!(
            "clip {} has feature dimension {}, model expects {}",
            c.id,
            c.features.dim(),
            cfg.input_dim
        )));
    }
    Ok(())
}

/// Copies `base`, taking input width, vocabulary size and the encoder
/// length bound from `corpus`.
pub fn fit_config_to_corpus(base: &ModelConfig, corpus: &Corpus) -> ModelConfig {
    let longest = corpus.clips.iter().map(|c| c.features.len()).max().unwrap_or(1);
    ModelConfig {
        input_dim: corpus.clips.first().map_or(base.input_dim, |c| c.features.dim()),
        vocab_size: corpus.lexicon.len(),
        max_enc_len: base.max_enc_len.max(longest),
        ..base.clone()
    }
}

pub fn train(corpus: &Corpus, model_cfg: &ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let model = Transformer::new(model_cfg.clone(), seed)?;
    train_model(model, corpus, cfg, seed, |_| {})
}

pub(crate) fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains `model` in place, calling `on_epoch` after each epoch.
///
/// Per-example gradients inside a batch may be computed on several threads
/// but are always summed in batch order, so results do not depend on the
/// thread count.
pub fn train_model(
    mut model: Transformer,
    corpus: &Corpus,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let mcfg = model.config().clone();
    cfg.validate(&mcfg)?;
    check_corpus(corpus, &mcfg)?;

    let mut stage_cache: HashMap<Option<usize>, Vec<TrainExample>> = HashMap::new();
    let build_stage = |k: Option<usize>| -> Vec<TrainExample> {
        let mut too_long = 0;
        let examples: Vec<TrainExample> = corpus
            .clips
            .iter()
            .filter_map(|clip| {
                let margin = cfg.curriculum.as_ref().map_or(0, |c| c.margin_frames);
                let trimmed;
                let clip = match k {
                    Some(k) => {
                        trimmed = trim_to_annotations(clip, k, margin)?;
                        &trimmed
                    }
                    None => clip,
                };
                let ex = prepare_example(clip, &mcfg);
                too_long += ex.is_none() as usize;
                ex
            })
            .collect();
        if too_long > 0 {
            warn!("{too_long} clips exceed max_enc_len {} and are skipped", mcfg.max_enc_len);
        }
        examples
    };

    let mut adam = Adam::new(cfg.adam, model.params());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let stage = cfg.curriculum.as_ref().and_then(|c| c.annotations_at(epoch));
        let examples = stage_cache.entry(stage).or_insert_with(|| build_stage(stage));
        let mut order: Vec<usize> = (0..examples.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64, 1)));
        }
        let lr = cfg.lr.at_epoch(epoch);
        let (mut nll_sum, mut align_sum, mut total_sum, mut skipped) = (0.0, 0.0, 0.0, 0usize);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(ExampleLoss, ParamGrads)>> = batch
                .par_iter()
                .map(|&i| {
                    let dropout_seed = mix(seed, epoch as u64, 2 + i as u64);
                    example_gradients(&model, &examples[i], cfg, Some(dropout_seed))
                })
                .collect();
            let mut grads = ParamGrads::default();
            for (&i, r) in batch.iter().zip(results) {
                let (loss, g) = r?;
                if !loss.total.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        step,
                        detail: format!(
                            "clip {}: nll={} align={} (params finite: {})",
                            examples[i].clip_id,
                            loss.nll,
                            loss.align.value,
                            model.params().all_finite()
                        ),
                    });
                }
                nll_sum += loss.nll;
                align_sum += loss.align.value;
                total_sum += loss.total;
                skipped += loss.align.skipped;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = cfg.max_grad_norm {
                clip_grad_norm(&mut grads, max);
            }
            adam.step(model.params_mut(), &grads, lr);
        }
        let n = examples.len().max(1) as f64;
        let entry = EpochLog {
            epoch,
            nll: nll_sum / n,
            align_loss: align_sum / n,
            total: total_sum / n,
            lr,
            examples: examples.len(),
            stage,
            align_skipped: skipped,
        };
        info!(
            "epoch {epoch}: nll {:.4} align {:.4} total {:.4} ({} examples, lr {:.2e})",
            entry.nll, entry.align_loss, entry.total, entry.examples, lr
        );
        if skipped > 0 {
            debug!("epoch {epoch}: {skipped} annotations outside the training window");
        }
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { model, log })
}

/// Writes `epoch,nll,align_loss,total` rows.
pub fn write_epoch_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "nll", "align_loss", "total"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.nll.to_string(),
            e.align_loss.to_string(),
            e.total.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Held-out loss summary of a frozen model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct HeldOutLosses {
    pub nll: f64,
    /// Mean squared L2 distance between attention and Gaussian target per annotation.
    pub align_sq: f64,
    /// Mean L2 distance per annotation.
    pub align_l2: f64,
    pub clips: usize,
    pub annotations: usize,
}

/// Teacher-forced NLL and attention-to-target distances on `clips`.
pub fn held_out_losses(model: &Transformer, clips: &[SubtitledClip], sigma: f64, layer: AlignLayer) -> Result<HeldOutLosses> {
    let per_clip: Vec<Result<Option<(f64, Vec<f64>)>>> = clips
        .par_iter()
        .map(|clip| {
            let Some(ex) = prepare_example(clip, model.config()) else {
                return Ok(None);
            };
            let (logits, attn) = model.forward(&ex.features, &ex.decoder_input())?;
            let nll = super::loss::sequence_nll(&logits, &ex.target);
            let dists = ex
                .align
                .iter()
                .map(|&(step, enc)| super::loss::target_sq_distance(&attn, step, enc, sigma, layer))
                .collect();
            Ok(Some((nll, dists)))
        })
        .collect();
    let mut out = HeldOutLosses::default();
    for r in per_clip {
        if let Some((nll, dists)) = r? {
            out.nll += nll;
            out.clips += 1;
            for d in dists {
                out.align_sq += d;
                out.align_l2 += d.sqrt();
                out.annotations += 1;
            }
        }
    }
    out.nll /= out.clips.max(1) as f64;
    out.align_sq /= out.annotations.max(1) as f64;
    out.align_l2 /= out.annotations.max(1) as f64;
    Ok(out)
}
