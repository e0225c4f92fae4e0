//! Bidirectional training: data splits, the loss and the optimization loop.

mod config;
mod data;
mod loss;
mod trainer;

pub use config::{LossWeights, ModelShape, TrainConfig};
pub use data::{load_sequences, sample_window, split_dataset, Corpus, Segment, Split, TrainSet};
pub use loss::{
    bidirectional_on_tape, bidirectional_rollout, compute_loss, ground_truth_on_tape, loss_on_tape,
    BidiVars, LossReport, LossVars,
};
pub use trainer::{
    iteration_rng, read_loss_log, split_rng, train_loop, write_loss_log, LogRow, MeshData,
    TrainMeta, TrainOutputs, TrainedModel, Trainer,
};
