//! Drive every subcommand of the command-line front end on a tiny corpus,
//! exactly as the `signspot` binary would.
//!
//! `cargo run --release --example cli_pipeline -- [work_dir]`

use std::path::PathBuf;

const CONFIG: &str = r#"{
 "seed": 3,
 "corpus": {"generate": {"n_clips": 120, "vocab_size": 12, "feature_dim": 16, "clips_per_programme": 20}, "test_programmes": 1},
 "text": {"vocab_policy": {"top_fraction": 1.0}},
 "model": {"d_model": 16, "n_heads": 2, "n_layers": 2, "feedforward_dim": 32, "max_enc_len": 64},
 "train": {"epochs": 4, "lr": {"base": 0.002, "milestones": [], "factor": 1.0}},
 "classify": {"mlp": {"hidden": [32, 16], "epochs": 5, "batch_size": 32}}
}"#;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("signspot_cli"));
    std::fs::create_dir_all(dir.join("runs/gd")).expect("work dir");
    std::fs::create_dir_all(dir.join("runs/tf")).expect("work dir");
    let config = dir.join("config.json");
    std::fs::write(&config, CONFIG).expect("config");
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
        vec!["mine".into(), "--model".into(), p("model.ckpt"), "--corpus".into(), p("test.jsonl"), "--strategy".into(), "gd".into(), "--out".into(), p("runs/gd/store.csv")],
        vec!["mine".into(), "--model".into(), p("model.ckpt"), "--corpus".into(), p("test.jsonl"), "--strategy".into(), "tf:0.1".into(), "--out".into(), p("runs/tf/store.csv")],
        vec!["eval-loc".into(), "--corpus".into(), p("test.jsonl"), "--store".into(), p("runs/gd/store.csv"), "--out".into(), p("runs/gd/loc.json")],
        vec!["eval-loc".into(), "--corpus".into(), p("test.jsonl"), "--store".into(), p("runs/tf/store.csv"), "--out".into(), p("runs/tf/loc.json")],
        vec!["train-cls".into(), "--corpus".into(), p("train.jsonl"), "--store".into(), "truth".into(), "--out".into(), p("mlp.ckpt")],
        vec!["eval-cls".into(), "--model".into(), p("mlp.ckpt"), "--corpus".into(), p("test.jsonl"), "--out".into(), p("cls.json")],
        vec!["report".into(), "--grid".into(), p("runs"), "--out".into(), p("grid.csv")],
    ];
    for step in steps {
        let mut argv = vec!["signspot".to_string()];
        argv.extend(step.iter().cloned());
        argv.extend(["--config".into(), config.to_string_lossy().into_owned()]);
        let code = signspot::cli::dispatch(&argv);
        println!("signspot {:<12} -> exit {code}", step[0]);
        if code != 0 {
            std::process::exit(code);
        }
    }
    println!("{}", std::fs::read_to_string(dir.join("grid.csv")).expect("grid"));
}
