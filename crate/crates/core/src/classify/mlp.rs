use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::instances::{design_matrix, ClassSet, TrimmedInstance};
use crate::error::{Error, Result};
use crate::eval::{topk_recognition, RecReport};
use crate::model::train::mix;
use crate::model::{load_checkpoint, save_checkpoint, xavier, Graph, LrSchedule, NodeId, ParamGrads, ParamStore, Sgd};

const KIND: &str = "mlp";

/// Layer plan `input → [res(input)] → hidden… → classes`, trained with
/// momentum SGD on softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    /// Start with a residual block `x + relu(W x + b)` of the input width.
    pub residual: bool,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            residual: true,
            hidden: vec![512, 256],
            epochs: 30,
            lr: LrSchedule {
                base: 1e-2,
                milestones: vec![20, 25],
                factor: 0.1,
            },
            momentum: 0.9,
            batch_size: 256,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::config("the classifier needs at least one hidden layer"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        self.lr.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MlpEpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Running top-1 accuracy over the epoch's batches, before each update.
    pub train_top1: f64,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    config: MlpConfig,
    input_dim: usize,
    classes: ClassSet,
    params: ParamStore,
    /// `(weight, bias)` parameter indices per layer, in forward order.
    layers: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct MlpHeader {
    mlp: MlpConfig,
    input_dim: usize,
    classes: ClassSet,
}

fn layer_names(config: &MlpConfig) -> Vec<String> {
    let mut names = Vec::new();
    if config.residual {
        names.push("res".to_string());
    }
    names.extend((0..config.hidden.len()).map(|i| format!("fc{i}")));
    names.push("out".to_string());
    names
}

impl Mlp {
    pub fn new(config: MlpConfig, input_dim: usize, classes: ClassSet, seed: u64) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::config("input dimension must be positive"));
        }
        if classes.len() < 2 {
            return Err(Error::config("a classifier needs at least two classes"));
        }
        let mut widths = vec![input_dim];
        if config.residual {
            widths.push(input_dim);
        }
        widths.extend(&config.hidden);
        widths.push(classes.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let layers = layer_names(&config)
            .iter()
            .zip(widths.windows(2))
            .map(|(name, w)| {
                let wi = params.push(format!("{name}.w"), xavier(&mut rng, w[0], w[1]));
                let bi = params.push(format!("{name}.b"), Array2::zeros((1, w[1])));
                (wi, bi)
            })
            .collect();
        Ok(Self {
            config,
            input_dim,
            classes,
            params,
            layers,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn logits(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let mut layers = self.layers.iter();
        let mut h = x;
        let dense = |g: &mut Graph, h: NodeId, (w, b): (usize, usize)| {
            let (w, b) = (g.param(w), g.param(b));
            let z = g.matmul(h, w);
            g.add_row(z, b)
        };
        if self.config.residual {
            let t = dense(g, h, *layers.next().expect("residual layer"));
            let t = g.relu(t);
            h = g.add(h, t);
        }
        let n_hidden = self.config.hidden.len();
        for &layer in layers.by_ref().take(n_hidden) {
            let z = dense(g, h, layer);
            h = g.relu(z);
        }
        dense(g, h, *layers.next().expect("output layer"))
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::contract(format!(
                "input has {} columns, classifier expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Class probabilities, one row per input row.
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut g = Graph::new(&self.params);
        let xn = g.constant(x.clone());
        let logits = self.logits(&mut g, xn);
        let mut p = g.value(logits).clone();
        for mut row in p.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let z = row.sum();
            row /= z;
        }
        Ok(p)
    }

    /// Mean cross-entropy of `labels` and its gradient, evaluated at `params`
    /// (which must share this model's layout).
    pub fn loss_and_grads(&self, params: &ParamStore, x: &Array2<f64>, labels: &[usize]) -> Result<(f64, ParamGrads)> {
        self.check_input(x)?;
        if labels.len() != x.nrows() {
            return Err(Error::contract(format!("{} labels for {} rows", labels.len(), x.nrows())));
        }
        let mut g = Graph::new(params);
        let xn = g.constant(x.clone());
        let logits = self.logits(&mut g, xn);
        let targets: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
        let loss = g.cross_entropy(logits, &targets);
        Ok((g.scalar(loss), g.backward(loss)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = MlpHeader {
            mlp: self.config.clone(),
            input_dim: self.input_dim,
            classes: self.classes.clone(),
        };
        save_checkpoint(path, KIND, serde_json::to_value(header)?, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (header, params) = load_checkpoint(path)?;
        if header.kind != KIND {
            return Err(Error::parse(path, 1, format!("expected an {KIND} checkpoint, found {}", header.kind)));
        }
        let h: MlpHeader = serde_json::from_value(header.config).map_err(|e| Error::parse(path, 1, e.to_string()))?;
        let mut mlp = Self::new(h.mlp, h.input_dim, h.classes, 0)?;
        if params.names() != mlp.params.names()
            || params.tensors().iter().zip(mlp.params.tensors()).any(|(a, b)| a.dim() != b.dim())
        {
            return Err(Error::parse(path, 1, "tensor layout does not match the stored configuration"));
        }
        mlp.params = params;
        Ok(mlp)
    }
}

#[derive(Debug, Clone)]
pub struct MlpOutcome {
    pub mlp: Mlp,
    pub log: Vec<MlpEpochLog>,
}

/// Trains a classifier over `classes` on `instances`. Deterministic for a
/// given seed.
pub fn train_mlp(instances: &[TrimmedInstance], classes: &ClassSet, config: &MlpConfig, seed: u64) -> Result<MlpOutcome> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::config("no training instances"));
    }
    let (x, labels) = design_matrix(instances, classes)?;
    let mut seen = labels.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::config("training instances cover fewer than two classes"));
    }
    let mut mlp = Mlp::new(config.clone(), x.ncols(), classes.clone(), seed)?;
    let mut opt = Sgd::new(config.momentum, &mlp.params);
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.lr.at_epoch(epoch);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64, 2)));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new(&mlp.params);
            let xn = g.constant(xb);
            let logits = mlp.logits(&mut g, xn);
            let targets: Vec<Option<usize>> = yb.iter().map(|&l| Some(l)).collect();
            let loss = g.cross_entropy(logits, &targets);
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    step,
                    detail: format!("classifier loss {value}"),
                });
            }
            hits += g
                .value(logits)
                .rows()
                .into_iter()
                .zip(&yb)
                .filter(|(row, &y)| crate::decode::search_argmax(row.iter().copied()).map(|(i, _)| i) == Some(y))
                .count();
            loss_sum += value * batch.len() as f64;
            let grads = g.backward(loss);
            drop(g);
            opt.step(&mut mlp.params, &grads, lr);
        }
        let n = labels.len() as f64;
        let entry = MlpEpochLog {
            epoch,
            lr,
            loss: loss_sum / n,
            train_top1: hits as f64 / n,
        };
        log::debug!("mlp epoch {epoch}: loss {:.4} top1 {:.3} lr {lr:e}", entry.loss, entry.train_top1);
        log.push(entry);
    }
    Ok(MlpOutcome { mlp, log })
}

/// Top-1/top-5 recognition on `instances`. Instances whose token lies
/// outside the classifier's class set are an error.
pub fn evaluate_classifier(mlp: &Mlp, instances: &[TrimmedInstance]) -> Result<RecReport> {
    if instances.is_empty() {
        return topk_recognition(&Array2::zeros((0, mlp.classes.len())), &[]);
    }
    let (x, labels) = design_matrix(instances, &mlp.classes)?;
    topk_recognition(&mlp.predict_proba(&x)?, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub runs: Vec<RecReport>,
    pub mean: RecReport,
    /// Sample standard deviation (zero for a single run).
    pub std: RecReport,
}

/// Trains once per seed and summarises test recognition as mean and std.
pub fn repeat_over_seeds(
    train: &[TrimmedInstance],
    test: &[TrimmedInstance],
    classes: &ClassSet,
    config: &MlpConfig,
    seeds: &[u64],
) -> Result<SeedSummary> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let runs = seeds
        .iter()
        .map(|&s| evaluate_classifier(&train_mlp(train, classes, config, s)?.mlp, test))
        .collect::<Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    let stat = |f: fn(&RecReport) -> f64| {
        let mean = runs.iter().map(f).sum::<f64>() / n;
        let var = if runs.len() > 1 {
            runs.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    let fields = [
        stat(|r| r.top1),
        stat(|r| r.top5),
        stat(|r| r.top1_per_class),
        stat(|r| r.top5_per_class),
    ];
    let build = |pick: fn((f64, f64)) -> f64| RecReport {
        top1: pick(fields[0]),
        top5: pick(fields[1]),
        top1_per_class: pick(fields[2]),
        top5_per_class: pick(fields[3]),
        n_instances: runs[0].n_instances,
        n_classes: runs[0].n_classes,
    };
    Ok(SeedSummary {
        seeds: seeds.to_vec(),
        mean: build(|p| p.0),
        std: build(|p| p.1),
        runs,
    })
}
