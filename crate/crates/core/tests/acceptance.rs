//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criteria 3 to 8 share one trained model on the synthetic corpus,
//! except criterion 7, which trains the same architecture on noisier features
//! so that recognition accuracy stays clear of its ceiling.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use signspot::classify::{
    evaluate_classifier, extract_instances, train_mlp, truth_rows, ClassSet, Mlp, MlpConfig,
};
use signspot::corpus::{
    generate_with, read_annotation_csv, AnnotationRow, AnnotationSource, Corpus, FeatureSequence, GenerateConfig,
    NoiseConfig, SubtitledClip, TokenRef,
};
use signspot::decode::{
    aggregate_attention, beam_decode, greedy_decode, AttnAggregation, ClipScorer, DecodeResult, SequenceScorer,
    StepScores, TeacherForcedResult,
};
use signspot::eval::{
    eval_localisation, loc_inputs_from_spottings, topk_recognition, ClipLocInput, TimedToken, TimingSource,
};
use signspot::model::gradcheck::{all_coords, sample_coords};
use signspot::model::train::{example_gradients, fit_config_to_corpus, held_out_losses, TrainExample};
use signspot::model::{
    gradient_check, normal, train_model, AttentionRecord, AttnMask, Graph, LrSchedule, ModelConfig,
    TrainConfig, Transformer,
};
use signspot::spot::{
    mine_corpus, mine_corpus_with, spot_from_decode, spot_teacher_forced, spottings_to_rows,
    write_annotation_store, MiningStrategy, Spotting,
};
use signspot::text::{build_vocabulary, encode_corpus, PreprocessConfig, BOS, EOS, N_SPECIAL};

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

/// Reference run of the localisation setup below (30 epochs, seed 1).
const REFERENCE_LOC_ACC: f64 = 0.943;
const REFERENCE_RECALL: f64 = 0.869;
const SLACK: f64 = 0.05;

struct Setup {
    train: Corpus,
    test: Corpus,
    model: Transformer,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_seconds: f64,
}

fn corpus(emission_noise: f64) -> signspot::Result<(Corpus, Corpus)> {
    let raw = generate_with(&GenerateConfig {
        n_clips: 2200,
        vocab_size: 50,
        feature_dim: 64,
        noise: NoiseConfig {
            drop_prob: 0.1,
            offset_std_frames: 2.0,
            seed: 1,
            ..NoiseConfig::none()
        },
        seed: 1,
        emission_noise,
        ..GenerateConfig::default()
    })?;
    let text = PreprocessConfig::default();
    let vocab = build_vocabulary(&raw, &text)?;
    let corpus = encode_corpus(&raw, &vocab, &text)?;
    Ok(corpus.split_programmes(100))
}

fn setup(emission_noise: f64) -> signspot::Result<Setup> {
    let (train, test) = corpus(emission_noise)?;
    let base = ModelConfig {
        d_model: 64,
        n_heads: 2,
        n_layers: 2,
        feedforward_dim: 128,
        dropout_prob: 0.1,
        max_enc_len: 64,
        ..ModelConfig::default()
    };
    let model_cfg = fit_config_to_corpus(&base, &train);
    let train_cfg = TrainConfig {
        lr: LrSchedule::constant(1e-3),
        epochs: 30,
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let trained = train_model(Transformer::new(model_cfg.clone(), 1)?, &train, &train_cfg, 1, |_| {})?;
    Ok(Setup {
        train,
        test,
        model: trained.model,
        model_cfg,
        train_cfg,
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

fn loc_report(model: &Transformer, corpus: &Corpus, strategy: MiningStrategy, agg: AttnAggregation) -> signspot::Result<signspot::eval::LocReport> {
    let mined = mine_corpus(model, corpus, strategy, agg, None)?;
    let inputs = loc_inputs_from_spottings(corpus, &mined.spottings, TimingSource::Truth)?;
    Ok(eval_localisation(&inputs, 2)?.0)
}

// ---------------------------------------------------------------- 1

fn autodiff_soundness() -> Check {
    let started = Instant::now();
    let mcfg = ModelConfig {
        input_dim: 6,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        feedforward_dim: 32,
        dropout_prob: 0.0,
        max_enc_len: 8,
        max_dec_len: 6,
        vocab_size: 8,
    };
    let model = Transformer::new(mcfg.clone(), 7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ex = TrainExample {
        clip_id: "g".into(),
        features: normal(&mut rng, 7, 6, 1.0),
        target: vec![3, 5, 7, 4, EOS],
        align: vec![(0, 1), (2, 5), (3, 6)],
        align_skipped: 0,
    };
    let cfg = TrainConfig {
        align_loss_weight: 0.5,
        ..TrainConfig::default()
    };
    let coords = all_coords(model.params());
    let tf = gradient_check(model.params(), &coords, 1e-6, |p| {
        let m = Transformer::from_params(mcfg.clone(), p.clone())?;
        let (loss, grads) = example_gradients(&m, &ex, &cfg, None)?;
        Ok((loss.total, grads))
    })?;

    let classes = ClassSet::new(N_SPECIAL..N_SPECIAL + 10);
    let mlp = Mlp::new(MlpConfig::default(), 64, classes, 5)?;
    let x = normal(&mut rng, 16, 64, 1.0);
    let labels: Vec<usize> = (0..16).map(|i| i % 10).collect();
    let mlp_coords = sample_coords(mlp.params(), 2000, 17);
    let mc = gradient_check(mlp.params(), &mlp_coords, 1e-6, |p| mlp.loss_and_grads(p, &x, &labels))?;

    let secs = started.elapsed().as_secs_f64();
    let pass = tf.max_rel_error < 1e-3 && mc.max_rel_error < 1e-3 && secs < 30.0;
    Ok((
        pass,
        format!(
            "transformer max rel err {:.2e} over {} coords; mlp {:.2e} over {} coords; {secs:.1}s",
            tf.max_rel_error, tf.checked, mc.max_rel_error, mc.checked
        ),
    ))
}

// ---------------------------------------------------------------- 2

fn row_error(row: &[f64], visible: usize) -> f64 {
    let sum: f64 = row[..visible].iter().sum();
    let leak: f64 = row[visible..].iter().map(|v| v.abs()).sum();
    let negative = row.iter().any(|&v| v < 0.0 || !v.is_finite());
    if negative {
        f64::INFINITY
    } else {
        (sum - 1.0).abs() + leak
    }
}

fn attention_normalisation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut rows = 0usize;
    let mut passes = 0usize;
    for m in 0..10 {
        let heads = [1, 2, 4][m % 3];
        let mcfg = ModelConfig {
            input_dim: 5,
            d_model: 8 * heads,
            n_heads: heads,
            n_layers: 1 + m % 3,
            feedforward_dim: 16,
            dropout_prob: 0.0,
            max_enc_len: 24,
            max_dec_len: 8,
            vocab_size: 9,
        };
        let model = Transformer::new(mcfg, 100 + m as u64)?;
        for _ in 0..900 {
            let len = rng.random_range(1..=24);
            let valid = rng.random_range(1..=len);
            let scale = [0.1, 1.0, 30.0][rng.random_range(0..3)];
            let features = normal(&mut rng, len, 5, scale);
            let mut prefix = vec![BOS];
            prefix.extend((0..rng.random_range(0..8)).map(|_| rng.random_range(N_SPECIAL..9)));
            let (_, record) = model.forward_masked(&features, valid, &prefix)?;
            let (steps, layers, hs, _) = record.dims();
            for s in 0..steps {
                for l in 0..layers {
                    for h in 0..hs {
                        worst = worst.max(row_error(record.row(s, l, h), valid));
                        rows += 1;
                    }
                }
            }
            passes += 1;
        }
    }
    for _ in 0..1000 {
        let (r, c) = (rng.random_range(1..12), rng.random_range(1..12));
        let scale = [1.0, 50.0, 700.0][rng.random_range(0..3)];
        let scores = normal(&mut rng, r, c, scale);
        let (mask, visible): (AttnMask, Box<dyn Fn(usize) -> usize>) = match rng.random_range(0..3) {
            0 => (AttnMask::None, Box::new(move |_| c)),
            1 => (AttnMask::Causal, Box::new(move |i| (i + 1).min(c))),
            _ => {
                let n = rng.random_range(1..=c);
                (AttnMask::KeyPrefix(n), Box::new(move |_| n))
            }
        };
        let mut g = Graph::detached();
        let s = g.constant(scores);
        let p = g.attention_softmax(s, mask);
        for (i, row) in g.value(p).rows().into_iter().enumerate() {
            worst = worst.max(row_error(&row.to_vec(), visible(i)));
            rows += 1;
        }
        passes += 1;
    }
    Ok((
        passes >= 10_000 && worst <= 1e-6,
        format!("{passes} forward passes, {rows} rows, worst deviation {worst:.2e}"),
    ))
}

// ---------------------------------------------------------------- 3

/// Log-probabilities looked up by prefix; EOS is never allowed.
struct ToyScorer {
    table: HashMap<Vec<usize>, [f64; 3]>,
}

const TOY_VOCAB: usize = N_SPECIAL + 3;

impl SequenceScorer for ToyScorer {
    fn max_steps(&self) -> usize {
        2
    }

    fn attention_shape(&self) -> (usize, usize, usize) {
        (1, 1, 2)
    }

    fn score_prefix(&self, prefix: &[usize]) -> signspot::Result<StepScores> {
        let mut lp = Array2::from_elem((prefix.len(), TOY_VOCAB), f64::NEG_INFINITY);
        let mut rows = Vec::new();
        for t in 0..prefix.len() {
            let probs = self.table[&prefix[..=t].to_vec()];
            for (k, p) in probs.iter().enumerate() {
                lp[[t, N_SPECIAL + k]] = p.ln();
            }
            rows.push(vec![vec![vec![0.25, 0.75]]]);
        }
        Ok(StepScores {
            log_probs: lp,
            attention: AttentionRecord::from_rows(rows),
        })
    }
}

fn random_distribution(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let w: [f64; 3] = [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)];
    let s: f64 = w.iter().sum();
    [w[0] / s, w[1] / s, w[2] / s]
}

fn toy_scorer(rng: &mut ChaCha8Rng) -> ToyScorer {
    let mut table = HashMap::new();
    table.insert(vec![BOS], random_distribution(rng));
    for a in N_SPECIAL..TOY_VOCAB {
        table.insert(vec![BOS, a], random_distribution(rng));
    }
    ToyScorer { table }
}

/// Every two-token sequence with its score, best first.
fn enumerate(toy: &ToyScorer) -> Vec<(Vec<usize>, f64)> {
    let mut all = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            let first = toy.table[&vec![BOS]][a].ln();
            let second = toy.table[&vec![BOS, N_SPECIAL + a]][b].ln();
            all.push((vec![N_SPECIAL + a, N_SPECIAL + b], first + second));
        }
    }
    all.sort_by(|x, y| y.1.total_cmp(&x.1));
    all
}

fn attention_argmaxes(r: &DecodeResult) -> Vec<usize> {
    let (steps, layers, heads, _) = r.attention.dims();
    let mut out = Vec::new();
    for s in 0..steps {
        for l in 0..layers {
            for h in 0..heads {
                let row = r.attention.row(s, l, h);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

fn decoder_equivalences(s: &Setup) -> Check {
    let mut mismatches = 0;
    let mut compared = 0;
    for clip in s.test.clips.iter().take(200) {
        let scorer = ClipScorer::for_clip(&s.model, clip)?;
        let g = greedy_decode(&scorer)?;
        let b = beam_decode(&scorer, 1)?;
        let same = b.len() == 1
            && b[0].hypothesis == g.hypothesis
            && b[0].score == g.score
            && attention_argmaxes(&b[0]) == attention_argmaxes(&g);
        mismatches += (!same) as usize;
        compared += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut toy_failures = 0;
    let mut greedy_suboptimal = 0;
    let toys = 200;
    for _ in 0..toys {
        let toy = toy_scorer(&mut rng);
        let exhaustive = enumerate(&toy);
        let beams = beam_decode(&toy, 9)?;
        let ranked: Vec<(Vec<usize>, f64)> = beams.iter().map(|r| (r.hypothesis.clone(), r.score)).collect();
        let matches = ranked.len() == 9
            && ranked
                .iter()
                .zip(&exhaustive)
                .all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() < 1e-12);
        toy_failures += (!matches) as usize;
        greedy_suboptimal += (greedy_decode(&toy)?.hypothesis != exhaustive[0].0) as usize;
    }
    Ok((
        compared == 200 && mismatches == 0 && toy_failures == 0,
        format!(
            "width 1 vs greedy: {mismatches}/{compared} mismatches; width 9 vs enumeration: {toy_failures}/{toys} toy models differ (greedy suboptimal on {greedy_suboptimal})"
        ),
    ))
}

// ---------------------------------------------------------------- 4

fn per_clip_multiset(spots: &[Spotting]) -> HashMap<String, BTreeMap<(usize, usize), usize>> {
    let mut out: HashMap<String, BTreeMap<(usize, usize), usize>> = HashMap::new();
    for s in spots {
        *out.entry(s.clip_id.clone()).or_default().entry((s.token_id, s.enc_index)).or_default() += 1;
    }
    out
}

fn contained(small: &[Spotting], large: &[Spotting]) -> bool {
    let big = per_clip_multiset(large);
    per_clip_multiset(small).iter().all(|(clip, items)| {
        items
            .iter()
            .all(|(k, n)| big.get(clip).and_then(|m| m.get(k)).copied().unwrap_or(0) >= *n)
    })
}

fn filtered_within_reference(corpus: &Corpus, spots: &[Spotting]) -> usize {
    let mut used: HashMap<(&str, usize), usize> = HashMap::new();
    for s in spots {
        *used.entry((s.clip_id.as_str(), s.token_id)).or_default() += 1;
    }
    used.iter()
        .filter(|((clip, token), n)| {
            let reference = corpus.clip(clip).map(|c| c.token_ids()).unwrap_or_default();
            reference.iter().filter(|t| *t == token).count() < **n
        })
        .count()
}

fn mining_invariants(s: &Setup) -> Check {
    let agg = AttnAggregation::Layer(0);
    let stores: Vec<Vec<Spotting>> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&tau| mine_corpus(&s.model, &s.test, MiningStrategy::TfThreshold { tau }, agg, None).map(|m| m.spottings))
        .collect::<signspot::Result<_>>()?;
    let nested = contained(&stores[0], &stores[1]) && contained(&stores[1], &stores[2]);

    let mut violations = 0;
    for corpus in [&s.test, &s.train] {
        let gd = mine_corpus(&s.model, corpus, MiningStrategy::GdFiltered, AttnAggregation::MeanAll, None)?;
        violations += filtered_within_reference(corpus, &gd.spottings);
    }

    let widths = [1, 2, 3, 5, 8];
    let yields: Vec<usize> = widths
        .iter()
        .map(|&width| {
            mine_corpus(&s.model, &s.test, MiningStrategy::BsAll { width }, AttnAggregation::MeanAll, None)
                .map(|m| m.stats.ann_full_vocab)
        })
        .collect::<signspot::Result<_>>()?;
    let monotone = yields.windows(2).all(|w| w[0] <= w[1]);
    Ok((
        nested && violations == 0 && monotone,
        format!(
            "tf yields {}/{}/{} nested={nested}; gd reference violations {violations}; bs-all yields {yields:?} for widths {widths:?}",
            stores[0].len(),
            stores[1].len(),
            stores[2].len()
        ),
    ))
}

// ---------------------------------------------------------------- 5

fn localisation(s: &Setup) -> Check {
    let r = loc_report(&s.model, &s.test, MiningStrategy::GdFiltered, AttnAggregation::MeanAll)?;
    let loc = r.loc_acc.unwrap_or(0.0);
    let loc_min = 0.90f64.max(REFERENCE_LOC_ACC - SLACK);
    let recall_min = 0.60f64.max(REFERENCE_RECALL - SLACK);
    let clips_ok = s.train.len() == 2000 && s.test.len() == 200;
    let pass = loc >= loc_min && r.recall >= recall_min && s.train_seconds <= 900.0 && clips_ok && s.train_cfg.epochs <= 30;
    Ok((
        pass,
        format!(
            "loc acc {loc:.3} (min {loc_min:.3}), recall {:.3} (min {recall_min:.3}), precision {:.3}; {} train / {} held-out clips; trained {} epochs, {} layers in {:.0}s",
            r.recall,
            r.precision,
            s.train.len(),
            s.test.len(),
            s.train_cfg.epochs,
            s.model_cfg.n_layers,
            s.train_seconds
        ),
    ))
}

// ---------------------------------------------------------------- 6

fn layer_choice(s: &Setup) -> Check {
    let gd = MiningStrategy::GdFiltered;
    let top = AttnAggregation::Layer(s.model_cfg.n_layers - 1);
    let mut grid = Vec::new();
    for (name, strategy, agg) in [
        ("greedy mean", gd, AttnAggregation::MeanAll),
        ("greedy layer 1", gd, AttnAggregation::Layer(0)),
        ("greedy layer 2", gd, top),
        ("tf mean", MiningStrategy::TfThreshold { tau: 0.0 }, AttnAggregation::MeanAll),
        ("tf layer 1", MiningStrategy::TfThreshold { tau: 0.0 }, AttnAggregation::Layer(0)),
        ("tf layer 2", MiningStrategy::TfThreshold { tau: 0.0 }, top),
    ] {
        grid.push((name, loc_report(&s.model, &s.test, strategy, agg)?.loc_acc.unwrap_or(0.0)));
    }
    let pass = grid[0].1 >= grid[2].1;
    let cells: Vec<String> = grid.iter().map(|(n, v)| format!("{n} {v:.3}")).collect();
    Ok((pass, cells.join(", ")))
}

// ---------------------------------------------------------------- 7

fn random_rows(corpus: &Corpus, like: &[AnnotationRow], seed: u64) -> Vec<AnnotationRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    like.iter()
        .map(|r| {
            let clip = corpus.clip(&r.clip_id).expect("mined clip exists");
            let j = rng.random_range(0..clip.features.len());
            AnnotationRow {
                frame_time: clip.features.frame_time(j),
                ..r.clone()
            }
        })
        .collect()
}

fn mining_quality() -> Check {
    let s = &setup(3.0)?;
    let started = Instant::now();
    let classes = ClassSet::new(N_SPECIAL..s.train.lexicon.len());
    let window = 16;
    let (test_instances, _) = extract_instances(&s.test, &truth_rows(&s.test)?, "truth", window, Some(&classes));

    let gd = spottings_to_rows(
        &mine_corpus(&s.model, &s.train, MiningStrategy::GdFiltered, AttnAggregation::MeanAll, None)?.spottings,
    );
    let tf_strategy = MiningStrategy::TfThreshold { tau: 0.05 };
    let tf = spottings_to_rows(
        &mine_corpus(&s.model, &s.train, tf_strategy, tf_strategy.default_aggregation(), None)?.spottings,
    );
    let random = random_rows(&s.train, &gd, 7);

    let mut scores = Vec::new();
    for (name, rows) in [("gd", &gd), ("tf0.05", &tf), ("random", &random)] {
        let (instances, _) = extract_instances(&s.train, rows, name, window, Some(&classes));
        let out = train_mlp(&instances, &classes, &MlpConfig::default(), 1)?;
        let report = evaluate_classifier(&out.mlp, &test_instances)?;
        scores.push((name, instances.len(), report.top1));
    }
    let secs = started.elapsed().as_secs_f64();
    let (g, t, r) = (scores[0].2, scores[1].2, scores[2].2);
    let cells: Vec<String> = scores.iter().map(|(n, c, v)| format!("{n} top-1 {v:.3} ({c} instances)")).collect();
    Ok((
        g >= t + 0.05 && g >= r + 0.10 && secs <= 600.0,
        format!(
            "{}; {} test instances; model trained in {:.0}s, mining and classifiers {secs:.0}s",
            cells.join(", "),
            test_instances.len(),
            s.train_seconds
        ),
    ))
}

// ---------------------------------------------------------------- 8

fn alignment_sanity(s: &Setup) -> Check {
    let cfg = TrainConfig {
        align_loss_weight: 100.0,
        ..s.train_cfg.clone()
    };
    let supervised = train_model(Transformer::new(s.model_cfg.clone(), 1)?, &s.train, &cfg, 1, |_| {})?.model;
    let sigma = cfg.align_sigma;
    let base = held_out_losses(&s.model, &s.test.clips, sigma, cfg.align_loss_layer)?;
    let sup = held_out_losses(&supervised, &s.test.clips, sigma, cfg.align_loss_layer)?;
    let degradation = (sup.nll - base.nll) / base.nll;
    Ok((
        sup.align_l2 < base.align_l2 && degradation < 0.20 && base.annotations > 0,
        format!(
            "attention-to-target L2 {:.3} (λ=100) vs {:.3} (λ=0) over {} annotations; nll {:.3} vs {:.3} ({:+.1}%)",
            sup.align_l2,
            base.align_l2,
            base.annotations,
            sup.nll,
            base.nll,
            100.0 * degradation
        ),
    ))
}

// ---------------------------------------------------------------- 9

fn toy_clip(id: &str, reference: &[usize], t_enc: usize) -> SubtitledClip {
    SubtitledClip {
        id: id.into(),
        programme: None,
        features: FeatureSequence::new(Array2::zeros((t_enc, 2)), 4, 0).expect("valid features"),
        subtitle: reference.iter().map(|&t| TokenRef::new(t)).collect(),
        sub_span: (0, 4 * t_enc as i64 - 1),
        annotations: vec![],
        activity_mask: None,
        truth: None,
    }
}

fn single_head(rows: &[Vec<f64>]) -> AttentionRecord {
    AttentionRecord::from_rows(rows.iter().map(|r| vec![vec![r.clone()]]).collect())
}

fn decoded(hypothesis: Vec<usize>, rows: &[Vec<f64>]) -> DecodeResult {
    DecodeResult {
        step_log_probs: vec![-0.1; hypothesis.len()],
        score: -0.1 * hypothesis.len() as f64,
        hypothesis,
        attention: single_head(rows),
    }
}

/// Emits a fixed token sequence per clip with attention peaked at fixed positions.
struct ForcedScorer {
    tokens: Vec<usize>,
    peaks: Vec<usize>,
    enc_len: usize,
}

impl SequenceScorer for ForcedScorer {
    fn max_steps(&self) -> usize {
        6
    }

    fn attention_shape(&self) -> (usize, usize, usize) {
        (1, 1, self.enc_len)
    }

    fn score_prefix(&self, prefix: &[usize]) -> signspot::Result<StepScores> {
        let vocab = 8;
        let mut lp = Array2::from_elem((prefix.len(), vocab), (0.3f64 / (vocab - 3) as f64).ln());
        let mut rows = Vec::new();
        for t in 0..prefix.len() {
            lp[[t, 0]] = f64::NEG_INFINITY;
            lp[[t, 1]] = f64::NEG_INFINITY;
            lp[[t, self.tokens[t.min(self.tokens.len() - 1)]]] = 0.7f64.ln();
            let mut row = vec![0.4 / (self.enc_len - 1) as f64; self.enc_len];
            row[self.peaks[t.min(self.peaks.len() - 1)]] = 0.6;
            rows.push(vec![vec![row]]);
        }
        Ok(StepScores {
            log_probs: lp,
            attention: AttentionRecord::from_rows(rows),
        })
    }
}

fn metric_suite() -> Check {
    let mut failures: Vec<&str> = Vec::new();
    let mut total = 0;
    let mut check = |ok: bool, name: &'static str| {
        total += 1;
        if !ok {
            failures.push(name);
        }
    };
    let near = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let timed = |token_id: usize, enc_index: i64| TimedToken { token_id, enc_index };

    // Localisation.
    let within = ClipLocInput {
        clip_id: "c".into(),
        reference: vec![3],
        predictions: vec![timed(3, 10)],
        timed: vec![timed(3, 12)],
    };
    let (r, _) = eval_localisation(&[within], 2)?;
    check(r.loc_acc == Some(1.0), "index 10 vs 12 within 2");
    let counted = ClipLocInput {
        clip_id: "c".into(),
        reference: vec![3, 4, 5, 6],
        predictions: vec![timed(3, 0), timed(4, 1), timed(7, 2)],
        timed: vec![],
    };
    let (r, _) = eval_localisation(&[counted], 2)?;
    check(near(r.recall, 0.5) && near(r.precision, 2.0 / 3.0), "recall 1/2 precision 2/3");
    let silent: Vec<ClipLocInput> = (0..3)
        .map(|i| ClipLocInput {
            clip_id: format!("c{i}"),
            reference: vec![3, 4],
            predictions: vec![],
            timed: vec![timed(3, 1)],
        })
        .collect();
    let (r, _) = eval_localisation(&silent, 2)?;
    check(r.recall == 0.0 && r.precision == 0.0 && r.loc_acc.is_none(), "no predictions");
    check(eval_localisation(&silent, -1).is_err(), "negative tolerance rejected");

    // Recognition.
    let perfect = Array2::from_shape_fn((6, 3), |(i, j)| if i % 3 == j { 1.0 } else { 0.0 });
    let r = topk_recognition(&perfect, &[0, 1, 2, 0, 1, 2])?;
    check(r.top1 == 1.0 && r.top5 == 1.0 && r.top1_per_class == 1.0 && r.top5_per_class == 1.0, "perfect classifier");
    let mut skewed = Array2::zeros((10, 2));
    for i in 0..9 {
        skewed[[i, 0]] = 0.9;
        skewed[[i, 1]] = 0.1;
    }
    skewed[[9, 0]] = 0.8;
    skewed[[9, 1]] = 0.2;
    let labels: Vec<usize> = (0..10).map(|i| (i == 9) as usize).collect();
    let r = topk_recognition(&skewed, &labels)?;
    check(near(r.top1, 0.9) && near(r.top1_per_class, 0.5), "9 A right, 1 B wrong");
    let three = Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64 * 0.77).sin());
    let r = topk_recognition(&three, &[2, 0, 1, 1])?;
    check(r.top5 == 1.0 && r.top5_per_class == 1.0, "top-5 over 3 classes");

    // Aggregation.
    let heads = AttentionRecord::from_rows(vec![vec![vec![vec![0.2, 0.8], vec![0.6, 0.4]]]]);
    let a = aggregate_attention(&heads, AttnAggregation::MeanAll)?;
    check(near(a[[0, 0]], 0.4) && near(a[[0, 1]], 0.6), "head mean");
    let layers = AttentionRecord::from_rows(vec![vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]]]);
    let a = aggregate_attention(&layers, AttnAggregation::MeanAll)?;
    check(near(a[[0, 0]], 0.5) && near(a[[0, 1]], 0.5), "layer mean");

    // Spotting from a decode: talk=3, armi=4, know=5.
    let clip = toy_clip("c", &[3, 4, 6], 3);
    let gd = MiningStrategy::GdFiltered;
    let rows = vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.7, 0.2], vec![0.1, 0.1, 0.8], vec![0.3, 0.3, 0.4]];
    let r = decoded(vec![3, 4, 5, EOS], &rows);
    let spots = spot_from_decode(&clip, &r, &clip.token_ids(), AttnAggregation::MeanAll, true, gd)?;
    let got: Vec<(usize, usize)> = spots.iter().map(|s| (s.token_id, s.enc_index)).collect();
    check(got == vec![(3, 0), (4, 1)], "talk and armi kept, know dropped");
    let empty = decoded(vec![], &[]);
    check(
        spot_from_decode(&clip, &empty, &clip.token_ids(), AttnAggregation::MeanAll, true, gd)?.is_empty(),
        "empty hypothesis",
    );

    // Teacher-forced thresholds.
    let mut peaked = vec![0.85 / 9.0; 10];
    peaked[4] = 0.15;
    let tf = TeacherForcedResult {
        reference: vec![3],
        predictions: vec![3],
        reference_log_probs: vec![-0.1],
        attention: single_head(&[peaked]),
    };
    let wide = toy_clip("w", &[3], 10);
    let agg = AttnAggregation::Layer(0);
    let at = |tau: f64| spot_teacher_forced(&wide, &tf, tau, agg, MiningStrategy::TfThreshold { tau }).map(|v| v.len());
    check(at(0.1)? == 1 && at(0.2)? == 0, "peak 0.15 kept at 0.1, dropped at 0.2");
    check(at(0.0)? == 1 && at(1.0)? == 0, "tau 0 keeps all, tau 1 keeps none");

    // Three-clip corpus mined with a hand-built model.
    let mut corpus = Corpus::empty((0..8).map(|i| format!("w{i}")).collect());
    corpus.clips = vec![toy_clip("a", &[3, 5], 4), toy_clip("b", &[5], 4), toy_clip("c", &[6], 4)];
    let scripts: HashMap<&str, (Vec<usize>, Vec<usize>)> = HashMap::from([
        ("a", (vec![3, 4, EOS], vec![0, 2, 1])),
        ("b", (vec![5, 5, EOS], vec![3, 1, 0])),
        ("c", (vec![EOS], vec![2])),
    ]);
    let mined = mine_corpus_with(&corpus, gd, AttnAggregation::MeanAll, None, |clip| {
        let (tokens, peaks) = scripts[clip.id.as_str()].clone();
        Ok(Some(ForcedScorer { tokens, peaks, enc_len: 4 }))
    })?;
    let got: Vec<(String, usize, i64)> = mined.spottings.iter().map(|s| (s.clip_id.clone(), s.token_id, s.frame_time)).collect();
    let expected = vec![("a".to_string(), 3, 0), ("b".to_string(), 5, 12)];
    check(got == expected, "three-clip hand enumeration");
    check(mined.stats.ann_full_vocab == 2 && mined.stats.subtitles_newly_annotated == 2, "three-clip yield");

    // Annotation stores.
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("store.csv");
    let dup = |confidence: f64| Spotting {
        clip_id: "a".into(),
        token_id: 3,
        enc_index: 1,
        frame_time: 4,
        confidence,
        strategy: gd,
    };
    let mut store = mined.spottings.clone();
    store.extend([dup(0.2), dup(0.9), dup(0.5)]);
    write_annotation_store(&store, &corpus.lexicon, &path)?;
    let back = read_annotation_csv(&corpus.lexicon, &path)?;
    check(back == spottings_to_rows(&store), "store round trip");
    let kept: Vec<f64> = back.iter().filter(|r| r.frame_time == 4).map(|r| r.confidence).collect();
    check(kept == vec![0.9] && back.iter().all(|r| r.source == AnnotationSource::Attention), "duplicates collapse to max confidence");
    write_annotation_store(&[], &corpus.lexicon, &path)?;
    check(
        std::fs::read_to_string(&path)?.trim_end() == "clip_id,token,frame_time,confidence,source",
        "empty store is header only",
    );

    drop(check);
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("{total} hand-counted cases")
        } else {
            format!("failed: {}", failures.join("; "))
        },
    ))
}

// ---------------------------------------------------------------- 10

const PIPELINE_CONFIG: &str = r#"{
 "seed": 3,
 "corpus": {"generate": {"n_clips": 120, "vocab_size": 12, "feature_dim": 16, "clips_per_programme": 20}, "test_programmes": 1},
 "text": {"vocab_policy": {"top_fraction": 1.0}},
 "model": {"d_model": 16, "n_heads": 2, "n_layers": 2, "feedforward_dim": 32, "dropout_prob": 0.1, "max_enc_len": 64},
 "train": {"epochs": 2, "lr": {"base": 0.001, "milestones": [], "factor": 1.0}},
 "classify": {"mlp": {"hidden": [32, 16], "epochs": 3, "batch_size": 32}}
}"#;

fn run_pipeline(dir: &Path) -> Result<Vec<String>, Box<dyn std::error::Error>> {
    let config = dir.join("config.json");
    std::fs::write(&config, PIPELINE_CONFIG)?;
    std::fs::create_dir_all(dir.join("runs/gd"))?;
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["gen-corpus".into(), "--out".into(), p("corpus.jsonl")],
        vec!["build-vocab".into(), "--corpus".into(), p("corpus.jsonl"), "--out".into(), p("train.jsonl")],
        vec![
            "build-vocab".into(),
            "--corpus".into(),
            p("corpus.test.jsonl"),
            "--out".into(),
            p("test.jsonl"),
            "--vocab-from".into(),
            p("train.vocab.tsv"),
        ],
        vec!["train".into(), "--corpus".into(), p("train.jsonl"), "--out".into(), p("model.ckpt")],
        vec!["decode".into(), "--model".into(), p("model.ckpt"), "--corpus".into(), p("test.jsonl"), "--out".into(), p("dump.jsonl")],
        vec![
            "mine".into(),
            "--model".into(),
            p("model.ckpt"),
            "--corpus".into(),
            p("test.jsonl"),
            "--strategy".into(),
            "bs-all:3".into(),
            "--out".into(),
            p("runs/gd/store.csv"),
        ],
        vec!["eval-loc".into(), "--corpus".into(), p("test.jsonl"), "--store".into(), p("runs/gd/store.csv"), "--out".into(), p("runs/gd/loc.json")],
        vec![
            "train-cls".into(),
            "--corpus".into(),
            p("train.jsonl"),
            "--store".into(),
            "truth".into(),
            "--out".into(),
            p("mlp.ckpt"),
            "--instances".into(),
            p("instances.csv"),
        ],
        vec!["eval-cls".into(), "--model".into(), p("mlp.ckpt"), "--corpus".into(), p("test.jsonl"), "--out".into(), p("cls.json")],
        vec!["report".into(), "--grid".into(), p("runs"), "--out".into(), p("grid.csv")],
    ];
    let mut failed = Vec::new();
    for step in steps {
        let mut argv = vec!["signspot".to_string()];
        argv.extend(step.iter().cloned());
        argv.extend(["--config".to_string(), config.to_string_lossy().into_owned()]);
        if signspot::cli::dispatch(argv) != 0 {
            failed.push(step[0].clone());
        }
    }
    Ok(failed)
}

fn data_files(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            data_files(&path, root, out)?;
        } else if !path.to_string_lossy().ends_with(".manifest.json") {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().into_owned();
            out.insert(rel, std::fs::read(&path)?);
        }
    }
    Ok(())
}

fn determinism() -> Check {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let failed_a = run_pipeline(a.path())?;
    let failed_b = run_pipeline(b.path())?;
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    data_files(a.path(), a.path(), &mut fa)?;
    data_files(b.path(), b.path(), &mut fb)?;
    let names_match = fa.keys().eq(fb.keys());
    let differing: Vec<&String> = fa.iter().filter(|(k, v)| fb.get(*k) != Some(v)).map(|(k, _)| k).collect();
    let pass = failed_a.is_empty() && failed_b.is_empty() && names_match && differing.is_empty() && fa.len() >= 15;
    Ok((
        pass,
        format!(
            "{} data files from 9 subcommands compared; failed steps {:?}/{:?}; differing {:?}",
            fa.len(),
            failed_a,
            failed_b,
            differing
        ),
    ))
}

// ----------------------------------------------------------------

fn report(results: &mut Vec<(usize, &'static str, bool)>, id: usize, name: &'static str, started: Instant, outcome: Check) {
    let secs = started.elapsed().as_secs_f64();
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("[{}] {id:>2} {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
    results.push((id, name, pass));
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results = Vec::new();
    let t = Instant::now();
    report(&mut results, 1, "autodiff soundness", t, autodiff_soundness());
    let t = Instant::now();
    report(&mut results, 2, "attention normalisation", t, attention_normalisation());

    let t = Instant::now();
    match setup(1.0) {
        Ok(s) => {
            println!("       shared model trained in {:.0}s", s.train_seconds);
            report(&mut results, 3, "decoder equivalences", t, decoder_equivalences(&s));
            let t = Instant::now();
            report(&mut results, 4, "mining invariants", t, mining_invariants(&s));
            let t = Instant::now();
            report(&mut results, 5, "end-to-end localisation", t, localisation(&s));
            let t = Instant::now();
            report(&mut results, 6, "layer choice", t, layer_choice(&s));
            let t = Instant::now();
            report(&mut results, 8, "alignment loss sanity", t, alignment_sanity(&s));
        }
        Err(e) => {
            for (id, name) in [
                (3, "decoder equivalences"),
                (4, "mining invariants"),
                (5, "end-to-end localisation"),
                (6, "layer choice"),
                (8, "alignment loss sanity"),
            ] {
                report(&mut results, id, name, t, Err(format!("shared setup failed: {e}").into()));
            }
        }
    }

    let t = Instant::now();
    report(&mut results, 7, "mining quality ordering", t, mining_quality());
    let t = Instant::now();
    report(&mut results, 9, "metric unit suite", t, metric_suite());
    let t = Instant::now();
    report(&mut results, 10, "determinism", t, determinism());

    results.sort_by_key(|r| r.0);
    let passed = results.iter().filter(|r| r.2).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
