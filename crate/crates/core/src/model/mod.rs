//! Autodiff core, the encoder-decoder Transformer, losses and training.

mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod optim;
mod params;
pub mod train;
mod transformer;

pub use attention::AttentionRecord;
pub use checkpoint::{load_checkpoint, load_transformer, save_checkpoint, save_transformer, CheckpointHeader};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{AttnMask, Graph, NodeId};
pub use loss::{alignment_loss, gaussian_target, sequence_nll, target_sq_distance, AlignLayer, AlignLoss};
pub use optim::{Adam, AdamConfig, LrSchedule, Sgd};
pub use params::{normal, xavier, ParamGrads, ParamStore};
pub use train::{
    held_out_losses, train, train_model, write_epoch_log, Curriculum, EpochLog, TrainConfig, TrainOutcome,
};
pub use transformer::{positional_encoding, DecoderOutput, Dropout, ModelConfig, Transformer};
