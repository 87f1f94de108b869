//! Localisation and recognition metrics on small hand-built inputs.
//!
//! `cargo run --example evaluate_metrics`

use ndarray::array;

use signspot::eval::{eval_localisation, topk_recognition, ClipLocInput, TimedToken};

fn timed(token_id: usize, enc_index: i64) -> TimedToken {
    TimedToken { token_id, enc_index }
}

fn main() -> signspot::Result<()> {
    let clips = vec![
        ClipLocInput {
            clip_id: "a".into(),
            reference: vec![3, 4, 5, 6],
            predictions: vec![timed(3, 10), timed(4, 20), timed(9, 5)],
            timed: vec![timed(3, 12), timed(4, 26)],
        },
        ClipLocInput {
            clip_id: "b".into(),
            reference: vec![7],
            predictions: vec![],
            timed: vec![timed(7, 3)],
        },
    ];
    for tolerance in [0, 2, 8] {
        let (report, per_clip) = eval_localisation(&clips, tolerance)?;
        println!("tolerance {tolerance}: {report:?}");
        if tolerance == 2 {
            for (c, s) in clips.iter().zip(&per_clip) {
                println!("  {}: {s:?}", c.clip_id);
            }
        }
    }

    let scores = array![[0.7, 0.2, 0.1], [0.1, 0.3, 0.6], [0.5, 0.4, 0.1], [0.2, 0.5, 0.3]];
    let labels = [0, 2, 1, 1];
    println!("{:?}", topk_recognition(&scores, &labels)?);
    Ok(())
}
