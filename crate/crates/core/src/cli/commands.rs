use std::collections::HashSet;
use std::path::{Path, PathBuf};

use log::info;
use serde_json::{json, Value};

use super::config::{DecodeMethod, RunConfig};
use super::manifest::{manifest_path, with_suffix, RunManifest};
use crate::classify::{
    evaluate_classifier, extract_instances, train_mlp, truth_rows, write_instances, ClassSet, Mlp, TrimmedInstance,
};
use crate::corpus::{
    generate_with, load_corpus, read_annotation_csv, realign_subtitles, save_corpus, select_training_subset,
    AnnotationRow, Corpus, TokenSpace,
};
use crate::decode::{beam_decode, greedy_decode, write_decode_dump, ClipScorer, DecodeDumpEntry};
use crate::error::{Error, Result};
use crate::eval::{eval_localisation, loc_inputs_from_rows, write_json_report};
use crate::model::train::fit_config_to_corpus;
use crate::model::{load_transformer, save_transformer, train, write_epoch_log};
use crate::spot::{mine_corpus, write_annotation_store, write_yield_stats, MiningStrategy};
use crate::text::{build_vocabulary, encode_corpus, english_stop_words, Vocabulary, N_SPECIAL};

/// Files read and written by one command, plus its summary.
pub(super) struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub details: Value,
}

/// `path` with `tag` inserted before its extension: `a/b.jsonl` → `a/b.test.jsonl`.
pub fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

pub(super) fn gen_corpus(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let corpus = generate_with(&cfg.corpus.generate)?;
    let n_prog = corpus.programmes.len();
    let held = cfg.corpus.test_programmes;
    let mut outputs = vec![out.to_path_buf()];
    if held > 0 {
        if held >= n_prog {
            return Err(Error::config(format!(
                "test_programmes {held} leaves no training programme out of {n_prog}"
            )));
        }
        let (train, test) = corpus.split_programmes(n_prog - held);
        save_corpus(&train, out)?;
        let test_path = sibling(out, "test");
        save_corpus(&test, &test_path)?;
        outputs.push(test_path);
        info!("wrote {} training and {} held-out clips", train.len(), test.len());
    } else {
        save_corpus(&corpus, out)?;
        info!("wrote {} clips", corpus.len());
    }
    Ok(Outcome {
        inputs: vec![],
        outputs,
        details: json!({ "clips": corpus.len(), "programmes": n_prog }),
    })
}

pub(super) fn build_vocab(
    cfg: &RunConfig,
    corpus_path: &Path,
    out: &Path,
    vocab_out: Option<&Path>,
    vocab_from: Option<&Path>,
) -> Result<Outcome> {
    let corpus = load_corpus(corpus_path)?;
    let mut inputs = vec![corpus_path.to_path_buf()];
    let mut outputs = vec![out.to_path_buf()];
    let vocab = match vocab_from {
        Some(p) => {
            inputs.push(p.to_path_buf());
            let stops = if cfg.text.keep_stop_words {
                HashSet::new()
            } else {
                english_stop_words().into_iter().map(str::to_string).collect()
            };
            Vocabulary::load(p, stops)?
        }
        None => build_vocabulary(&corpus, &cfg.text)?,
    };
    let encoded = encode_corpus(&corpus, &vocab, &cfg.text)?;
    save_corpus(&encoded, out)?;
    if vocab_from.is_none() {
        let path = vocab_out.map_or_else(|| sibling(out, "vocab").with_extension("tsv"), Path::to_path_buf);
        vocab.save(&path)?;
        outputs.push(path);
    }
    info!("vocabulary of {} stems", vocab.n_stems());
    Ok(Outcome {
        inputs,
        outputs,
        details: json!({ "stems": vocab.n_stems(), "clips": encoded.len() }),
    })
}

fn require_vocabulary(corpus: &Corpus) -> Result<()> {
    if corpus.token_space != TokenSpace::Vocabulary {
        return Err(Error::config("this command needs a vocabulary-encoded corpus (run build-vocab)"));
    }
    Ok(())
}

pub(super) fn train_cmd(cfg: &RunConfig, corpus_path: &Path, out: &Path) -> Result<Outcome> {
    let mut corpus = load_corpus(corpus_path)?;
    require_vocabulary(&corpus)?;
    let realigned = realign_subtitles(&corpus, cfg.corpus.realign)?;
    if !realigned.issues.is_empty() {
        info!("realignment reported {} issues", realigned.issues.len());
    }
    corpus = realigned.corpus;
    if let Some(min_conf) = cfg.corpus.train_min_conf {
        corpus = select_training_subset(&corpus, min_conf)?;
    }
    let mcfg = fit_config_to_corpus(&cfg.model, &corpus);
    let outcome = train(&corpus, &mcfg, &cfg.train, cfg.seed)?;
    save_transformer(out, &outcome.model)?;
    let log_path = with_suffix(out, ".epochs.csv");
    write_epoch_log(&outcome.log, &log_path)?;
    let last = outcome.log.last();
    Ok(Outcome {
        inputs: vec![corpus_path.to_path_buf()],
        outputs: vec![out.to_path_buf(), log_path],
        details: json!({
            "training_clips": corpus.len(),
            "model": mcfg,
            "final_nll": last.map(|e| e.nll),
            "final_align_loss": last.map(|e| e.align_loss),
        }),
    })
}

pub(super) fn decode_cmd(cfg: &RunConfig, model_path: &Path, corpus_path: &Path, out: &Path) -> Result<Outcome> {
    let model = load_transformer(model_path)?;
    let corpus = load_corpus(corpus_path)?;
    require_vocabulary(&corpus)?;
    let d = &cfg.decode;
    let max_len = model.config().max_enc_len;
    let per_clip: Vec<Result<Vec<DecodeDumpEntry>>> = {
        use rayon::prelude::*;
        corpus
            .clips
            .par_iter()
            .filter(|c| c.features.len() <= max_len)
            .map(|clip| {
                let scorer = ClipScorer::for_clip(&model, clip)?;
                let results = match d.method {
                    DecodeMethod::Greedy => vec![greedy_decode(&scorer)?],
                    DecodeMethod::Beam => beam_decode(&scorer, d.beam_width)?,
                };
                results
                    .iter()
                    .map(|r| DecodeDumpEntry::new(&clip.id, r, d.aggregation))
                    .collect()
            })
            .collect()
    };
    let entries: Vec<DecodeDumpEntry> = per_clip.into_iter().collect::<Result<Vec<_>>>()?.concat();
    write_decode_dump(&entries, out)?;
    Ok(Outcome {
        inputs: vec![model_path.to_path_buf(), corpus_path.to_path_buf()],
        outputs: vec![out.to_path_buf()],
        details: json!({ "entries": entries.len(), "method": d.method, "aggregation": d.aggregation.to_string() }),
    })
}

pub(super) fn mine_cmd(
    cfg: &RunConfig,
    model_path: &Path,
    corpus_path: &Path,
    strategy: Option<&str>,
    out: &Path,
) -> Result<Outcome> {
    let strategy: MiningStrategy = match strategy {
        Some(s) => s.parse()?,
        None => cfg.mining.strategy,
    };
    strategy.validate()?;
    let agg = cfg.mining.aggregation.unwrap_or_else(|| strategy.default_aggregation());
    let model = load_transformer(model_path)?;
    let corpus = load_corpus(corpus_path)?;
    require_vocabulary(&corpus)?;
    let eval_vocab = match &cfg.mining.eval_vocab {
        Some(words) => Some(token_ids(&corpus, words)?.into_iter().collect::<HashSet<_>>()),
        None => None,
    };
    let mined = mine_corpus(&model, &corpus, strategy, agg, eval_vocab.as_ref())?;
    write_annotation_store(&mined.spottings, &corpus.lexicon, out)?;
    let yield_path = with_suffix(out, ".yield.json");
    write_yield_stats(&mined.stats, &yield_path)?;
    info!("{} spottings with {strategy} ({agg})", mined.spottings.len());
    Ok(Outcome {
        inputs: vec![model_path.to_path_buf(), corpus_path.to_path_buf()],
        outputs: vec![out.to_path_buf(), yield_path],
        details: json!({
            "strategy": strategy.to_string(),
            "aggregation": agg.to_string(),
            "n_layers": model.config().n_layers,
            "spottings": mined.spottings.len(),
            "skipped_clips": mined.skipped_clips,
            "yield": mined.stats,
        }),
    })
}

fn token_ids(corpus: &Corpus, words: &[String]) -> Result<Vec<usize>> {
    words
        .iter()
        .map(|w| {
            corpus
                .token_of(w)
                .ok_or_else(|| Error::config(format!("word {w:?} is not in the corpus vocabulary")))
        })
        .collect()
}

fn load_rows(corpus: &Corpus, store: &str) -> Result<(Vec<AnnotationRow>, Option<PathBuf>)> {
    if store == "truth" {
        Ok((truth_rows(corpus)?, None))
    } else {
        let path = PathBuf::from(store);
        Ok((read_annotation_csv(&corpus.lexicon, &path)?, Some(path)))
    }
}

/// Manifest details of the command that produced `path`, if recorded.
fn upstream_details(path: &Path) -> Value {
    RunManifest::read(manifest_path(path)).map_or(Value::Null, |m| {
        json!({ "command": m.command, "config_hash": m.config_hash, "details": m.details })
    })
}

pub(super) fn eval_loc(cfg: &RunConfig, corpus_path: &Path, store: &str, out: &Path) -> Result<Outcome> {
    let corpus = load_corpus(corpus_path)?;
    let (rows, store_path) = load_rows(&corpus, store)?;
    let inputs_loc = loc_inputs_from_rows(&corpus, &rows, cfg.eval.timing)?;
    let (report, per_clip) = eval_localisation(&inputs_loc, cfg.eval.tolerance)?;
    write_json_report(&report, out)?;
    let csv_path = with_suffix(out, ".clips.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["clip_id", "recall", "precision", "correct", "scored", "localised"])?;
    for (c, s) in inputs_loc.iter().filter(|c| !c.reference.is_empty()).zip(&per_clip) {
        w.write_record([
            c.clip_id.clone(),
            s.recall.to_string(),
            s.precision.to_string(),
            s.correct.to_string(),
            s.scored.to_string(),
            s.localised.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    info!(
        "recall {:.3} precision {:.3} loc acc {}",
        report.recall,
        report.precision,
        report.loc_acc.map_or("n/a".into(), |a| format!("{a:.3}"))
    );
    let mut inputs = vec![corpus_path.to_path_buf()];
    let upstream = store_path.as_deref().map_or(Value::Null, upstream_details);
    inputs.extend(store_path);
    Ok(Outcome {
        inputs,
        outputs: vec![out.to_path_buf(), csv_path],
        details: json!({ "report": report, "tolerance": cfg.eval.tolerance, "store": store, "upstream": upstream }),
    })
}

fn class_set(cfg: &RunConfig, corpus: &Corpus) -> Result<ClassSet> {
    match &cfg.classify.classes {
        Some(words) => Ok(ClassSet::new(token_ids(corpus, words)?)),
        None => {
            let first = if corpus.token_space == TokenSpace::Vocabulary { N_SPECIAL } else { 0 };
            Ok(ClassSet::new(first..corpus.lexicon.len()))
        }
    }
}

fn instances_for(
    cfg: &RunConfig,
    corpus: &Corpus,
    store: &str,
    classes: &ClassSet,
) -> Result<(Vec<TrimmedInstance>, Option<PathBuf>, Value)> {
    let (rows, store_path) = load_rows(corpus, store)?;
    let name = store_path
        .as_deref()
        .and_then(Path::file_stem)
        .map_or_else(|| store.to_string(), |s| s.to_string_lossy().into_owned());
    let (instances, stats) = extract_instances(corpus, &rows, &name, cfg.classify.window_frames, Some(classes));
    Ok((instances, store_path, serde_json::to_value(stats)?))
}

pub(super) fn train_cls(
    cfg: &RunConfig,
    corpus_path: &Path,
    store: &str,
    out: &Path,
    instances_out: Option<&Path>,
) -> Result<Outcome> {
    let corpus = load_corpus(corpus_path)?;
    let classes = class_set(cfg, &corpus)?;
    let (instances, store_path, stats) = instances_for(cfg, &corpus, store, &classes)?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(p) = instances_out {
        write_instances(&instances, p)?;
        outputs.extend([p.to_path_buf(), p.with_extension("bin")]);
    }
    let trained = train_mlp(&instances, &classes, &cfg.classify.mlp, cfg.seed)?;
    trained.mlp.save(out)?;
    let log_path = with_suffix(out, ".epochs.csv");
    let mut w = csv::Writer::from_path(&log_path)?;
    for e in &trained.log {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(&log_path, e))?;
    outputs.push(log_path);
    let mut inputs = vec![corpus_path.to_path_buf()];
    inputs.extend(store_path);
    Ok(Outcome {
        inputs,
        outputs,
        details: json!({
            "instances": instances.len(),
            "classes": classes.len(),
            "extraction": stats,
            "final": trained.log.last(),
        }),
    })
}

pub(super) fn eval_cls(cfg: &RunConfig, model_path: &Path, corpus_path: &Path, store: &str, out: &Path) -> Result<Outcome> {
    let mlp = Mlp::load(model_path)?;
    let corpus = load_corpus(corpus_path)?;
    let (instances, store_path, stats) = instances_for(cfg, &corpus, store, mlp.classes())?;
    let report = evaluate_classifier(&mlp, &instances)?;
    write_json_report(&report, out)?;
    let csv_path = with_suffix(out, ".csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.serialize(report)?;
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    info!("top-1 {:.3} top-5 {:.3} on {} instances", report.top1, report.top5, report.n_instances);
    let mut inputs = vec![model_path.to_path_buf(), corpus_path.to_path_buf()];
    inputs.extend(store_path);
    Ok(Outcome {
        inputs,
        outputs: vec![out.to_path_buf(), csv_path],
        details: json!({ "report": report, "extraction": stats, "upstream": upstream_details(model_path) }),
    })
}
