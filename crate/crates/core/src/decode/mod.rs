//! Greedy, beam and teacher-forced decoding with attention aggregation.

mod scorer;
mod search;

pub use scorer::{ClipScorer, SequenceScorer, StepScores};
pub(crate) use search::argmax as search_argmax;
pub use search::{
    aggregate_attention, beam_decode, greedy_decode, teacher_forced_decode, write_decode_dump, AttnAggregation,
    DecodeDumpEntry, DecodeResult, TeacherForcedResult,
};

#[cfg(test)]
pub(crate) use search::tests::TableScorer;
