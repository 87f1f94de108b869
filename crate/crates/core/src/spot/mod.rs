//! Localised spottings from decoder attention, and corpus-wide mining.

mod mine;
mod spotting;

pub use mine::{
    mine_clip, mine_corpus, mine_corpus_with, spottings_to_rows, write_annotation_store, write_yield_stats, MiningOutput, YieldStats,
};
pub use spotting::{spot_from_decode, spot_teacher_forced, spot_tf_predictions, MiningStrategy, Spotting};
